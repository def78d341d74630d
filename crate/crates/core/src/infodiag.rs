//! Empirical checks of the data-processing inequalities behind the lower bounds.
//!
//! For a transcript kernel `K(y | x)` and `X ~ N(0, (m/n) I_d)`, the matrix
//! `Ξ = Σ_y p_y μ_y μ_yᵀ`, `μ_y = E[X | Y = y]`, is estimated by grouping
//! Monte Carlo samples by transcript value. Samples are drawn in fixed
//! batches, which also give the batch-means standard errors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::ProblemConfig;
use crate::protocols::t3::{t32_count, CountLayout};
use crate::randomness::{bernoulli, haar_frame, standard_normal, OrthogonalFrame, SeedNode};
use crate::stats::chi2_cdf;

/// Largest transcript length the diagnostic enumerates.
pub const MAX_DIAGNOSTIC_BITS: u32 = 16;

/// Number of batches used for standard errors.
pub const BATCHES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelKind {
    /// Ignores the observation.
    Constant,
    /// Sign of the first coordinate.
    Sign,
    /// One bit with success probability `F_{χ²_d}((n/m)‖x‖²)`.
    ChiSquareBit,
    /// Signs of `min(b, d)` coordinates after a fixed random rotation.
    RotatedSigns,
    /// Signs of the first `min(b, d)` coordinates.
    CoordinateSigns,
    /// Binomial count of chi-square bits over all coordinates.
    Counting,
    /// Equiprobable scalar quantizers, `b` bits spread over the coordinates.
    Quantizer,
}

impl KernelKind {
    pub const ALL: [KernelKind; 7] = [
        KernelKind::Constant,
        KernelKind::Sign,
        KernelKind::ChiSquareBit,
        KernelKind::RotatedSigns,
        KernelKind::CoordinateSigns,
        KernelKind::Counting,
        KernelKind::Quantizer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Constant => "constant",
            KernelKind::Sign => "sign",
            KernelKind::ChiSquareBit => "chi2-bit",
            KernelKind::RotatedSigns => "rotated-signs",
            KernelKind::CoordinateSigns => "coordinate-signs",
            KernelKind::Counting => "counting",
            KernelKind::Quantizer => "quantizer",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown kernel {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Encoder {
    Constant,
    Sign,
    ChiSquareBit,
    RotatedSigns(OrthogonalFrame<f64>),
    CoordinateSigns(usize),
    Counting(CountLayout),
    /// Interior bin edges per coordinate (empty for coordinates without bits).
    Quantizer(Vec<Vec<f64>>),
}

/// A transcript kernel with at most `b` bits, encoded as an integer.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub cfg: ProblemConfig,
    encoder: Encoder,
}

impl Kernel {
    pub fn new(kind: KernelKind, cfg: &ProblemConfig, seed: SeedNode) -> Result<Self> {
        cfg.validate()?;
        if cfg.b > MAX_DIAGNOSTIC_BITS {
            return Err(Error::AlphabetTooLarge { bits: cfg.b, limit: MAX_DIAGNOSTIC_BITS });
        }
        let (d, b) = (cfg.d, cfg.b as usize);
        let encoder = match kind {
            KernelKind::Constant => Encoder::Constant,
            KernelKind::Sign => Encoder::Sign,
            KernelKind::ChiSquareBit => Encoder::ChiSquareBit,
            KernelKind::RotatedSigns => Encoder::RotatedSigns(haar_frame(d, b.min(d), seed.child("rotation", 0))?),
            KernelKind::CoordinateSigns => Encoder::CoordinateSigns(b.min(d)),
            KernelKind::Counting => {
                if (1usize << b) < d + 1 {
                    return Err(Error::Infeasible(format!("counting kernel needs 2^b ≥ d + 1 (b = {b}, d = {d})")));
                }
                Encoder::Counting(CountLayout::new(cfg.b, d)?)
            }
            KernelKind::Quantizer => {
                let sd = cfg.noise_sd::<f64>();
                let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let edges = (0..d)
                    .map(|i| {
                        let bits = b / d + usize::from(i < b % d);
                        let bins = 1usize << bits;
                        (1..bins).map(|k| normal.inverse_cdf(k as f64 / bins as f64)).collect()
                    })
                    .collect();
                Encoder::Quantizer(edges)
            }
        };
        Ok(Kernel { kind, cfg: *cfg, encoder })
    }

    /// Transcript length in bits.
    pub fn bits(&self) -> u32 {
        match &self.encoder {
            Encoder::Constant => 0,
            Encoder::Sign | Encoder::ChiSquareBit => 1,
            Encoder::RotatedSigns(f) => f.rows() as u32,
            Encoder::CoordinateSigns(k) => *k as u32,
            Encoder::Counting(l) => l.width,
            Encoder::Quantizer(edges) => edges.iter().map(|e| (e.len() + 1).trailing_zeros()).sum(),
        }
    }

    pub fn encode<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<u64> {
        Ok(match &self.encoder {
            Encoder::Constant => 0,
            Encoder::Sign => (x[0] > 0.0) as u64,
            Encoder::ChiSquareBit => {
                let s = self.cfg.local_snr() * x.iter().map(|v| v * v).sum::<f64>();
                bernoulli(chi2_cdf(x.len(), s)?, rng)? as u64
            }
            Encoder::RotatedSigns(frame) => (0..frame.rows()).fold(0u64, |acc, i| {
                let p: f64 = frame.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                acc << 1 | (p > 0.0) as u64
            }),
            Encoder::CoordinateSigns(k) => x[..*k].iter().fold(0u64, |acc, &v| acc << 1 | (v > 0.0) as u64),
            Encoder::Counting(layout) => t32_count(&self.cfg, x, layout, rng)?,
            Encoder::Quantizer(edges) => edges.iter().zip(x).fold(0u64, |acc, (e, &v)| {
                let bits = (e.len() + 1).trailing_zeros();
                let bin = e.partition_point(|&t| t < v) as u64;
                acc << bits | bin
            }),
        })
    }
}

/// Estimated per-machine `Ξ` and summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    pub kernel: KernelKind,
    pub d: usize,
    pub bits: u32,
    pub machines: usize,
    /// Per-machine `Ξ^j`, row major.
    pub matrix: Vec<f64>,
    pub trace: f64,
    pub trace_se: f64,
    pub lambda_max: f64,
    pub lambda_max_se: f64,
    pub lambda_min: f64,
    pub mc_samples: usize,
    /// Transcript values observed at least once.
    pub observed_values: usize,
    /// Transcript values never observed (`2^bits - observed`).
    pub empty_values: u64,
}

impl XiEstimate {
    /// `Ξ = Σ_j Ξ^j` for `m` machines running the same kernel.
    pub fn aggregate_trace(&self) -> f64 {
        self.machines as f64 * self.trace
    }
}

type Groups = BTreeMap<u64, (usize, Vec<f64>)>;

fn xi_from_groups(groups: &Groups, total: usize, d: usize) -> DMatrix<f64> {
    let mut xi = DMatrix::zeros(d, d);
    for (count, sum) in groups.values() {
        let mu = nalgebra::DVector::from_iterator(d, sum.iter().map(|s| s / *count as f64));
        xi += (*count as f64 / total as f64) * &mu * mu.transpose();
    }
    xi
}

fn eig_range(xi: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(xi.clone()).eigenvalues;
    (e.min(), e.max())
}

fn mean_se(v: &[f64]) -> f64 {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
}

/// Monte Carlo estimate of `Ξ^j` under the null.
pub fn estimate_xi(kernel: &Kernel, mc_samples: usize, seed: SeedNode) -> Result<XiEstimate> {
    let d = kernel.cfg.d;
    if mc_samples < 2 * BATCHES {
        return Err(Error::InvalidArgument(format!("need at least {} samples, got {mc_samples}", 2 * BATCHES)));
    }
    let per = mc_samples / BATCHES;
    let sd = kernel.cfg.noise_sd::<f64>();
    let batches: Vec<Groups> = (0..BATCHES)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed.child("batch", k as u64).rng();
            let mut groups = Groups::new();
            let mut x = vec![0.0; d];
            for _ in 0..per {
                for v in x.iter_mut() {
                    *v = sd * standard_normal::<f64, _>(&mut rng);
                }
                let y = kernel.encode(&x, &mut rng)?;
                let entry = groups.entry(y).or_insert_with(|| (0, vec![0.0; d]));
                entry.0 += 1;
                for (s, v) in entry.1.iter_mut().zip(&x) {
                    *s += v;
                }
            }
            Ok(groups)
        })
        .collect::<Result<_>>()?;

    let mut traces = Vec::with_capacity(BATCHES);
    let mut lambdas = Vec::with_capacity(BATCHES);
    let mut pooled = Groups::new();
    for g in &batches {
        let xi = xi_from_groups(g, per, d);
        traces.push(xi.trace());
        lambdas.push(eig_range(&xi).1);
        for (y, (c, s)) in g {
            let e = pooled.entry(*y).or_insert_with(|| (0, vec![0.0; d]));
            e.0 += c;
            for (a, b) in e.1.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
    let total = per * BATCHES;
    let xi = xi_from_groups(&pooled, total, d);
    let xi = (&xi + xi.transpose()) * 0.5;
    let (lambda_min, lambda_max) = eig_range(&xi);
    let bits = kernel.bits();
    Ok(XiEstimate {
        kernel: kernel.kind,
        d,
        bits,
        machines: kernel.cfg.m,
        matrix: xi.transpose().iter().cloned().collect(),
        trace: xi.trace(),
        trace_se: mean_se(&traces),
        lambda_max,
        lambda_max_se: mean_se(&lambdas),
        lambda_min,
        mc_samples: total,
        observed_values: pooled.len(),
        empty_values: (1u64 << bits).saturating_sub(pooled.len() as u64),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub slack: f64,
    /// `bound + slack - value`; negative means violated.
    pub margin: f64,
    pub passed: bool,
}

impl BoundCheck {
    fn new(name: &str, value: f64, bound: f64, slack: f64) -> Self {
        let margin = bound + slack - value;
        BoundCheck { name: name.into(), value, bound, slack, margin, passed: margin >= 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpiReport {
    pub kernel: KernelKind,
    pub config: ProblemConfig,
    pub estimate: XiEstimate,
    pub checks: Vec<BoundCheck>,
    pub psd: bool,
    pub passed: bool,
}

/// Slack in batch-means standard errors.
pub const SLACK_SIGMAS: f64 = 5.0;

/// Trace bound `Tr Ξ ≤ min(2 ln2 · b/d, 1) · m² d / n` over `m` machines
/// and eigenvalue bound `λ_max(Ξ^j) ≤ m/n`, each with `5σ` slack.
pub fn check_dpi(est: &XiEstimate, cfg: &ProblemConfig) -> DpiReport {
    let (n, m, d, b) = (cfg.n as f64, cfg.m as f64, cfg.d as f64, cfg.b as f64);
    let trace_bound = (2.0 * std::f64::consts::LN_2 * b / d).min(1.0) * m * m * d / n;
    let lambda_bound = m / n;
    let checks = vec![
        BoundCheck::new("trace", est.aggregate_trace(), trace_bound, SLACK_SIGMAS * m * est.trace_se),
        BoundCheck::new("lambda_max", est.lambda_max, lambda_bound, SLACK_SIGMAS * est.lambda_max_se),
    ];
    let psd = est.lambda_min >= -1e-8 * est.lambda_max.abs().max(1e-300);
    let passed = psd && checks.iter().all(|c| c.passed);
    DpiReport { kernel: est.kernel, config: *cfg, estimate: est.clone(), checks, psd, passed }
}

/// Estimate and check every kernel that is feasible at `cfg`.
pub fn diagnose_all(cfg: &ProblemConfig, mc_samples: usize, seed: SeedNode) -> Result<Vec<DpiReport>> {
    KernelKind::ALL
        .iter()
        .filter_map(|&kind| match Kernel::new(kind, cfg, seed.child(kind.name(), 0)) {
            Ok(k) => Some(estimate_xi(&k, mc_samples, seed.child(kind.name(), 1)).map(|e| check_dpi(&e, cfg))),
            Err(Error::Infeasible(_)) => None,
            Err(e) => Some(Err(e)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoinMode;

    fn cfg(d: usize, b: u32) -> ProblemConfig {
        ProblemConfig { n: 1000, m: 10, d, b, alpha: 0.1, coin: CoinMode::Private }
    }

    #[test]
    fn constant_kernel_has_zero_xi() {
        let k = Kernel::new(KernelKind::Constant, &cfg(2, 1), SeedNode::root(0)).unwrap();
        let e = estimate_xi(&k, 20_000, SeedNode::root(1)).unwrap();
        // the sample mean is of order σ/√N, its square is negligible
        assert!(e.trace < 1e-5, "{}", e.trace);
        assert!(check_dpi(&e, &cfg(2, 1)).passed);
    }

    #[test]
    fn sign_kernel_matches_half_normal() {
        let c = cfg(1, 1);
        let k = Kernel::new(KernelKind::Sign, &c, SeedNode::root(0)).unwrap();
        let e = estimate_xi(&k, 200_000, SeedNode::root(2)).unwrap();
        let scaled = e.trace / (c.m as f64 / c.n as f64);
        assert!((scaled - 2.0 / std::f64::consts::PI).abs() < 0.02, "{scaled}");
    }

    #[test]
    fn quantizer_refines_towards_identity() {
        let mut last = 0.0;
        for b in [1, 2, 4, 8] {
            let c = cfg(1, b);
            let k = Kernel::new(KernelKind::Quantizer, &c, SeedNode::root(0)).unwrap();
            let e = estimate_xi(&k, 100_000, SeedNode::root(3)).unwrap();
            assert!(e.trace > last);
            assert!(e.trace < c.m as f64 / c.n as f64 * 1.01);
            last = e.trace;
        }
        assert!(last > 0.99 * 0.01);
    }

    #[test]
    fn oversized_alphabet_is_refused() {
        let err = Kernel::new(KernelKind::Quantizer, &cfg(4, 17), SeedNode::root(0)).unwrap_err();
        assert!(matches!(err, Error::AlphabetTooLarge { .. }));
    }

    #[test]
    fn bit_lengths() {
        for kind in KernelKind::ALL {
            let c = cfg(4, 4);
            if let Ok(k) = Kernel::new(kind, &c, SeedNode::root(0)) {
                assert!(k.bits() <= 4, "{kind:?}");
            }
        }
    }
}
