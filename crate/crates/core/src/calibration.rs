//! Threshold calibration by exact null enumeration or seeded Monte Carlo.
//!
//! Central statistics are discrete, so a plain threshold usually cannot hit
//! the level `α` exactly. Every [`Cutoff`] produced here is randomized on
//! the boundary atom: the rejection region contains the atoms whose upper
//! tail mass is at most `α`, and the next atom is rejected with the
//! probability that makes up the remainder.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{binomial_radius, ProblemConfig, Signal};
use crate::protocols::{t1, Comparison, Cutoff, Protocol, ProtocolKind, ReplicationSeeds, Thresholds};
use crate::randomness::SeedNode;
use crate::stats::binomial_half_pmf;

/// Minimum number of null replications accepted by Monte Carlo calibration.
pub const MIN_NULL_REPS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibrationMethod {
    ExactEnumeration,
    MonteCarlo,
}

/// A calibrated protocol: thresholds plus provenance of the calibration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub protocol: ProtocolKind,
    pub config: ProblemConfig,
    pub alpha: f64,
    pub thresholds: Thresholds,
    pub method: CalibrationMethod,
    pub null_reps: usize,
    pub seed: Option<u64>,
    /// Null rejection rate of the calibrated test on the calibration sample.
    pub achieved_level: f64,
    /// Half-width of the 95% binomial interval around `achieved_level`.
    pub level_radius: f64,
}

/// Cutoff attaining level `alpha` on a discrete law given as `(value, prob)` atoms.
pub fn cutoff_from_atoms(atoms: &[(f64, f64)], alpha: f64, comparison: Comparison) -> Cutoff {
    let mut sorted: Vec<(f64, f64)> = atoms.iter().copied().filter(|&(_, p)| p > 0.0).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (v, p) in sorted {
        match merged.last_mut() {
            Some(last) if crate::protocols::same_atom(last.0, v) => last.1 += p,
            _ => merged.push((v, p)),
        }
    }
    if merged.is_empty() {
        return Cutoff::plain(0.0, comparison);
    }
    let mut cum = 0.0;
    for (i, &(v, p)) in merged.iter().enumerate() {
        if cum + p <= alpha * (1.0 + 1e-12) {
            cum += p;
            continue;
        }
        let kappa = match comparison {
            Comparison::AtLeast if i == 0 => v.next_up(),
            Comparison::AtLeast => merged[i - 1].0,
            Comparison::Exceeds => v,
        };
        let tie_prob = ((alpha - cum) / p).clamp(0.0, 1.0);
        return Cutoff { kappa, comparison, tie: Some(v), tie_prob };
    }
    let lowest = merged[merged.len() - 1].0;
    match comparison {
        Comparison::AtLeast => Cutoff::plain(lowest, comparison),
        Comparison::Exceeds => Cutoff::plain(lowest.next_down(), comparison),
    }
}

/// Cutoff attaining level `alpha` on the empirical law of `sample`.
pub fn cutoff_from_sample(sample: &[f64], alpha: f64, comparison: Comparison) -> Cutoff {
    let w = 1.0 / sample.len() as f64;
    let atoms: Vec<(f64, f64)> = sample.iter().map(|&s| (s, w)).collect();
    cutoff_from_atoms(&atoms, alpha, comparison)
}

/// Exact cutoff of the one-bit test: enumerate `Binomial(m, 1/2)`.
pub fn calibrate_exact_t1(m: usize, alpha: f64) -> Result<Cutoff> {
    check_alpha(alpha)?;
    if m == 0 || m > 1_000_000 {
        return Err(Error::InvalidArgument(format!("exact enumeration needs 1 ≤ m ≤ 10^6, got {m}")));
    }
    let pmf = binomial_half_pmf(m as u64);
    let atoms: Vec<(f64, f64)> = pmf.iter().enumerate().map(|(k, &p)| (t1::statistic_from_count(m, k), p)).collect();
    Ok(cutoff_from_atoms(&atoms, alpha, Comparison::AtLeast))
}

/// Expected null rejection rate of a test on a sample of statistic vectors.
pub fn union_level(samples: &[Vec<f64>], cutoffs: &[Cutoff]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let keep: f64 = s.iter().zip(cutoffs).map(|(&v, c)| 1.0 - c.reject_prob(v)).product();
            1.0 - keep
        })
        .sum();
    total / samples.len() as f64
}

/// Cutoffs for a test that rejects when any of its statistics does.
///
/// Each statistic gets the same marginal level `a`; `a` is bisected so that
/// the union rejects with probability `alpha` on the sample.
pub fn joint_cutoffs(samples: &[Vec<f64>], alpha: f64, comparisons: &[Comparison]) -> Vec<Cutoff> {
    let columns: Vec<Vec<f64>> =
        (0..comparisons.len()).map(|i| samples.iter().map(|s| s[i]).collect()).collect();
    let at = |a: f64| -> Vec<Cutoff> {
        columns.iter().zip(comparisons).map(|(col, &c)| cutoff_from_sample(col, a, c)).collect()
    };
    if comparisons.len() == 1 {
        return at(alpha);
    }
    let (mut lo, mut hi) = (0.0, alpha);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if union_level(samples, &at(mid)) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

/// Central statistics of `reps` null rounds; round `r` uses `seed.child("null", r)`.
pub fn null_statistics(protocol: &Protocol, reps: usize, seed: SeedNode) -> Result<Vec<Vec<f64>>> {
    let zero = Signal::zeros(protocol.config().d);
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let seeds = ReplicationSeeds::from_node(seed.child("null", r as u64));
            protocol.replicate(&zero, &seeds).map(|rep| rep.stats)
        })
        .collect()
}

/// Monte Carlo calibration: simulate the full protocol under the null
/// (public coins redrawn every round) and fit cutoffs to the sample.
pub fn calibrate_mc(protocol: &Protocol, alpha: f64, null_reps: usize, seed: SeedNode) -> Result<Calibration> {
    check_alpha(alpha)?;
    if null_reps < MIN_NULL_REPS {
        return Err(Error::InvalidArgument(format!("null_reps must be ≥ {MIN_NULL_REPS}, got {null_reps}")));
    }
    let samples = null_statistics(protocol, null_reps, seed)?;
    let cutoffs = joint_cutoffs(&samples, alpha, &protocol.comparisons());
    let achieved = union_level(&samples, &cutoffs);
    Ok(Calibration {
        protocol: protocol.kind(),
        config: *protocol.config(),
        alpha,
        thresholds: Thresholds::new(cutoffs),
        method: CalibrationMethod::MonteCarlo,
        null_reps,
        seed: Some(seed.master_seed()),
        achieved_level: achieved,
        level_radius: binomial_radius(achieved, null_reps),
    })
}

/// Exact calibration where the null law is known in closed form (T1, T1-local).
pub fn calibrate_exact(protocol: &Protocol, alpha: f64) -> Result<Option<Calibration>> {
    check_alpha(alpha)?;
    let cutoff = match protocol.kind() {
        ProtocolKind::T1 => calibrate_exact_t1(protocol.config().m, alpha)?,
        // machine 0 forwards a bit that is 1 with null probability exactly α
        ProtocolKind::T1Local if protocol.config().alpha == alpha => Cutoff::plain(1.0, Comparison::AtLeast),
        _ => return Ok(None),
    };
    Ok(Some(Calibration {
        protocol: protocol.kind(),
        config: *protocol.config(),
        alpha,
        thresholds: Thresholds::new(vec![cutoff]),
        method: CalibrationMethod::ExactEnumeration,
        null_reps: 0,
        seed: None,
        achieved_level: alpha,
        level_radius: 0.0,
    }))
}

/// Exact calibration when available, Monte Carlo otherwise.
pub fn calibrate(protocol: &Protocol, alpha: f64, null_reps: usize, seed: SeedNode) -> Result<Calibration> {
    match calibrate_exact(protocol, alpha)? {
        Some(c) => Ok(c),
        None => calibrate_mc(protocol, alpha, null_reps, seed),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig("alpha must lie in (0,1)".into()))
    }
}

/// Calibrations keyed by protocol name and configuration fingerprint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub entries: BTreeMap<String, Calibration>,
}

impl ThresholdTable {
    pub fn key(kind: ProtocolKind, cfg: &ProblemConfig) -> String {
        format!("{}|{}", kind.name(), cfg.fingerprint())
    }

    pub fn get(&self, kind: ProtocolKind, cfg: &ProblemConfig) -> Option<&Calibration> {
        self.entries.get(&Self::key(kind, cfg))
    }

    pub fn insert(&mut self, calibration: Calibration) {
        self.entries.insert(Self::key(calibration.protocol, &calibration.config), calibration);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("threshold table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidConfig(format!("threshold table: {e}")))
    }

    /// Load from `path`; a missing file yields an empty table.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(s) => Self::from_json(&s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::InvalidArgument(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }
}
