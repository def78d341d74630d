//! The distributed tests as encode/decide pairs with exact bit budgets.
//!
//! Each test is split into a per-machine `encode` step producing a
//! [`Transcript`] and a central step mapping all transcripts to one or more
//! real statistics. A [`Protocol`] bundles both for a fixed [`ProblemConfig`];
//! [`Protocol::replicate`] runs one full simulated round and
//! [`Protocol::decide`] turns the statistics into a decision given
//! calibrated [`Thresholds`].

pub mod t1;
pub mod t2;
pub mod t3;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::ChiSquared;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoinMode, ProblemConfig, Signal, Transcript};
use crate::randomness::{bernoulli, haar_frame, sample_observation_row, standard_normal, uniform, OrthogonalFrame, SeedNode};
use crate::scalar::Real;
use crate::stats::{chi2_cdf, chi2_quantile};

pub use t3::{build_partition, CombinedLayout, CountLayout, PartitionPlan};

/// Machine count at or below which the single-machine chi-square test is used.
pub const DEFAULT_M_ALPHA: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProtocolKind {
    #[serde(rename = "T1")]
    T1,
    #[serde(rename = "T1-local")]
    T1Local,
    #[serde(rename = "T2")]
    T2,
    #[serde(rename = "T3")]
    T3,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [ProtocolKind::T1, ProtocolKind::T1Local, ProtocolKind::T2, ProtocolKind::T3];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::T1 => "T1",
            ProtocolKind::T1Local => "T1-local",
            ProtocolKind::T2 => "T2",
            ProtocolKind::T3 => "T3",
        }
    }

    pub fn requires_public_coin(self) -> bool {
        matches!(self, ProtocolKind::T2)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A protocol as selected by the user: a fixed test or `auto`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProtocolChoice {
    Auto,
    Fixed(ProtocolKind),
}

impl ProtocolChoice {
    pub fn resolve(self, cfg: &ProblemConfig, m_alpha: usize) -> ProtocolKind {
        match self {
            ProtocolChoice::Auto => choose_protocol(cfg, m_alpha),
            ProtocolChoice::Fixed(k) => k,
        }
    }
}

impl FromStr for ProtocolChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(ProtocolChoice::Auto);
        }
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .map(ProtocolChoice::Fixed)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown protocol {s:?}; expected T1, T1-local, T2, T3 or auto")))
    }
}

impl TryFrom<String> for ProtocolChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ProtocolChoice> for String {
    fn from(c: ProtocolChoice) -> String {
        match c {
            ProtocolChoice::Auto => "auto".into(),
            ProtocolChoice::Fixed(k) => k.name().into(),
        }
    }
}

/// Regime-based protocol selection.
///
/// Public coin: T2 if `m b ≥ d`, else T1. Private coin: T3 if `m b² ≥ d²`,
/// else T1. Either mode falls back to the single-machine test when
/// `m ≤ m_alpha`.
pub fn choose_protocol(cfg: &ProblemConfig, m_alpha: usize) -> ProtocolKind {
    if cfg.m <= m_alpha {
        return ProtocolKind::T1Local;
    }
    let (m, d, b) = (cfg.m as u128, cfg.d as u128, cfg.b as u128);
    match cfg.coin {
        CoinMode::Public if m * b >= d => ProtocolKind::T2,
        CoinMode::Private if m * b * b >= d * d => ProtocolKind::T3,
        _ => ProtocolKind::T1,
    }
}

/// How a statistic is compared against its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    /// Reject when `stat ≥ κ`.
    AtLeast,
    /// Reject when `stat > κ`.
    Exceeds,
}

impl Comparison {
    pub fn rejects(self, stat: f64, kappa: f64) -> bool {
        match self {
            Comparison::AtLeast => stat >= kappa,
            Comparison::Exceeds => stat > kappa,
        }
    }
}

/// Threshold of one statistic, with an optional randomized boundary atom.
///
/// The test rejects when `stat` clears `kappa`; if it does not but equals
/// the boundary atom `tie`, it rejects with probability `tie_prob`. The
/// randomization lets discrete statistics attain their level exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub kappa: f64,
    pub comparison: Comparison,
    #[serde(default)]
    pub tie: Option<f64>,
    #[serde(default)]
    pub tie_prob: f64,
}

impl Cutoff {
    pub fn plain(kappa: f64, comparison: Comparison) -> Self {
        Cutoff { kappa, comparison, tie: None, tie_prob: 0.0 }
    }

    /// Rejection probability given the statistic, before drawing the tie coin.
    pub fn reject_prob(&self, stat: f64) -> f64 {
        if self.comparison.rejects(stat, self.kappa) {
            1.0
        } else if self.tie.is_some_and(|t| same_atom(stat, t)) {
            self.tie_prob
        } else {
            0.0
        }
    }

    /// Decision given a uniform draw `u ∈ [0, 1)` for the tie coin.
    pub fn rejects(&self, stat: f64, u: f64) -> bool {
        let p = self.reject_prob(stat);
        p >= 1.0 || (p > 0.0 && u < p)
    }
}

/// Float equality for atoms of discrete statistics computed by the same formula.
pub fn same_atom(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// One cutoff per statistic of a protocol; the test rejects if any cutoff does.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub cutoffs: Vec<Cutoff>,
}

impl Thresholds {
    pub fn new(cutoffs: Vec<Cutoff>) -> Self {
        Thresholds { cutoffs }
    }
}

/// Seed nodes of one simulated round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationSeeds {
    /// Observation noise.
    pub data: SeedNode,
    /// Public coin shared by all machines.
    pub coin: SeedNode,
    /// Private randomness; machine `j` uses `local.child("machine", j)`.
    pub local: SeedNode,
    /// Randomization of the central decision.
    pub central: SeedNode,
}

impl ReplicationSeeds {
    pub fn from_node(node: SeedNode) -> Self {
        ReplicationSeeds {
            data: node.child("data", 0),
            coin: node.child("coin", 0),
            local: node.child("local", 0),
            central: node.child("central", 0),
        }
    }
}

/// Outcome of one simulated round: the central statistics and the largest
/// transcript emitted by any machine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub stats: Vec<f64>,
    pub max_bits: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Layout {
    T1,
    T1Local { kappa: f64 },
    T2 { bits: usize },
    T3(CombinedLayout),
}

/// A test prepared for one problem configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    kind: ProtocolKind,
    cfg: ProblemConfig,
    layout: Layout,
}

impl Protocol {
    pub fn new(kind: ProtocolKind, cfg: &ProblemConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = match kind {
            ProtocolKind::T1 => Layout::T1,
            ProtocolKind::T1Local => Layout::T1Local { kappa: local_kappa(cfg.d, cfg.alpha)? },
            ProtocolKind::T2 => {
                if cfg.coin != CoinMode::Public {
                    return Err(Error::InvalidConfig("T2 needs a public coin".into()));
                }
                Layout::T2 { bits: t2::effective_bits(cfg) }
            }
            ProtocolKind::T3 => Layout::T3(CombinedLayout::new(cfg)?),
        };
        Ok(Protocol { kind, cfg: *cfg, layout })
    }

    pub fn auto(cfg: &ProblemConfig, m_alpha: usize) -> Result<Self> {
        Protocol::new(choose_protocol(cfg, m_alpha), cfg)
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.cfg
    }

    pub fn requires_public_coin(&self) -> bool {
        self.kind.requires_public_coin()
    }

    /// Threshold of the single-machine test, `(F⁻¹_{χ²_d}(1 - α) - d)/√d`.
    pub fn local_kappa(&self) -> Option<f64> {
        match self.layout {
            Layout::T1Local { kappa } => Some(kappa),
            _ => None,
        }
    }

    /// Layout of the private-coin combined test, if that is the protocol.
    pub fn combined_layout(&self) -> Option<&CombinedLayout> {
        match &self.layout {
            Layout::T3(l) => Some(l),
            _ => None,
        }
    }

    /// How each central statistic is compared with its threshold.
    pub fn comparisons(&self) -> Vec<Comparison> {
        match &self.layout {
            Layout::T1 | Layout::T1Local { .. } => vec![Comparison::AtLeast],
            Layout::T2 { .. } => vec![Comparison::Exceeds],
            Layout::T3(l) => {
                let mut c = vec![Comparison::Exceeds];
                if l.count.is_some() {
                    c.push(Comparison::AtLeast);
                }
                c
            }
        }
    }

    pub fn num_statistics(&self) -> usize {
        self.comparisons().len()
    }

    /// Draw the public coin (a Haar frame) for this round, if the protocol uses one.
    pub fn draw_coin<T: Real>(&self, seed: SeedNode) -> Result<Option<OrthogonalFrame<T>>> {
        match self.layout {
            Layout::T2 { bits } => haar_frame(self.cfg.d, bits, seed).map(Some),
            _ => Ok(None),
        }
    }

    /// Transcript of machine `j` with observation `x`.
    pub fn encode<T: Real>(
        &self,
        j: usize,
        x: &[T],
        coin: Option<&OrthogonalFrame<T>>,
        local: SeedNode,
    ) -> Result<Transcript> {
        if x.len() != self.cfg.d {
            return Err(Error::DimensionMismatch { expected: self.cfg.d, found: x.len() });
        }
        if j >= self.cfg.m {
            return Err(Error::InvalidArgument(format!("machine {j} out of range (m = {})", self.cfg.m)));
        }
        let mut rng = local.child("machine", j as u64).rng();
        match &self.layout {
            Layout::T1 => t1::encode(&self.cfg, x, &mut rng),
            Layout::T1Local { kappa } => {
                // machine 0 runs the local test and forwards its decision
                if j == 0 {
                    Ok(Transcript::from_bits([t1::local_decide(&self.cfg, x, T::lit(*kappa))]))
                } else {
                    Ok(Transcript::new())
                }
            }
            Layout::T2 { bits } => {
                let coin = coin.ok_or_else(|| Error::MissingCoin(self.name().into()))?;
                t2::encode_bits(&self.cfg, x, coin, *bits)
            }
            Layout::T3(l) => l.encode(&self.cfg, j, x, &mut rng),
        }
    }

    /// Central statistics from all transcripts.
    pub fn statistics(&self, transcripts: &[Transcript]) -> Result<Vec<f64>> {
        if transcripts.len() != self.cfg.m {
            return Err(Error::DimensionMismatch { expected: self.cfg.m, found: transcripts.len() });
        }
        match &self.layout {
            Layout::T1 => Ok(vec![t1::statistic(transcripts)?]),
            Layout::T1Local { .. } => {
                let t = &transcripts[0];
                if t.bit_count() != 1 {
                    return Err(Error::BitSizeMismatch { expected: 1, found: t.bit_count() });
                }
                Ok(vec![t.bit(0) as u8 as f64])
            }
            Layout::T2 { bits } => Ok(vec![t2::statistic(transcripts, *bits)?]),
            Layout::T3(l) => l.statistics(transcripts),
        }
    }

    /// Decision from central statistics; ties are resolved with uniforms
    /// drawn from `central`.
    pub fn decide_statistics(&self, stats: &[f64], thresholds: &Thresholds, central: SeedNode) -> Result<bool> {
        if thresholds.cutoffs.len() != stats.len() {
            return Err(Error::Uncalibrated(format!(
                "{} expects {} thresholds, got {}",
                self.name(),
                stats.len(),
                thresholds.cutoffs.len()
            )));
        }
        let mut rng = central.rng();
        let mut reject = false;
        for (&s, c) in stats.iter().zip(&thresholds.cutoffs) {
            // one uniform per statistic, drawn unconditionally to keep streams aligned
            let u: f64 = uniform(&mut rng);
            reject |= c.rejects(s, u);
        }
        Ok(reject)
    }

    pub fn decide(&self, transcripts: &[Transcript], thresholds: &Thresholds, central: SeedNode) -> Result<bool> {
        self.decide_statistics(&self.statistics(transcripts)?, thresholds, central)
    }

    /// Simulate one round under signal `f`: sample all observations, encode,
    /// audit the bit budget and aggregate.
    pub fn replicate(&self, f: &Signal<f64>, seeds: &ReplicationSeeds) -> Result<Replication> {
        let cfg = &self.cfg;
        if f.dim() != cfg.d {
            return Err(Error::DimensionMismatch { expected: cfg.d, found: f.dim() });
        }
        let coin = self.draw_coin::<f64>(seeds.coin)?;
        let mut x = vec![0.0f64; cfg.d];
        let mut transcripts = Vec::with_capacity(cfg.m);
        let mut max_bits = 0;
        for j in 0..cfg.m {
            if matches!(self.layout, Layout::T1Local { .. }) && j > 0 {
                transcripts.push(Transcript::new());
                continue;
            }
            sample_observation_row(cfg, f, seeds.data, j, &mut x)?;
            let t = self.encode(j, &x, coin.as_ref(), seeds.local)?;
            if t.bit_count() > cfg.b as usize {
                return Err(Error::BudgetExceeded { machine: j, bits: t.bit_count(), budget: cfg.b });
            }
            max_bits = max_bits.max(t.bit_count());
            transcripts.push(t);
        }
        Ok(Replication { stats: self.statistics(&transcripts)?, max_bits })
    }

    /// Same distribution as [`Protocol::replicate`], but each machine draws
    /// only what its encoder reads: `‖X^j‖²` as a shifted normal plus an
    /// independent `χ²_{d-1}` for the chi-square tests, the `b'` rotated
    /// coordinates `Uf + σZ` for T2, and the assigned coordinates for the
    /// sign-bit part of T3. Streams differ from the full sampler, so the two
    /// agree in law, not path by path.
    pub fn replicate_reduced(&self, f: &Signal<f64>, seeds: &ReplicationSeeds) -> Result<Replication> {
        let cfg = &self.cfg;
        if f.dim() != cfg.d {
            return Err(Error::DimensionMismatch { expected: cfg.d, found: f.dim() });
        }
        let sigma = cfg.noise_sd::<f64>();
        let d = cfg.d;
        match &self.layout {
            Layout::T1 | Layout::T1Local { .. } => {
                let shift = f.l2_norm() / sigma;
                let rest = if d > 1 {
                    Some(ChiSquared::new((d - 1) as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?)
                } else {
                    None
                };
                // (n/m)‖X‖² in law: (‖f‖/σ + Z)² + χ²_{d-1}
                let scaled_norm = |j: usize| {
                    let mut rng = seeds.data.child("machine", j as u64).rng();
                    let z: f64 = standard_normal(&mut rng);
                    (shift + z).powi(2) + rest.map_or(0.0, |c| rng.sample(c))
                };
                match &self.layout {
                    Layout::T1Local { kappa } => {
                        let w = scaled_norm(0);
                        let bit = (w - d as f64) / (d as f64).sqrt() >= *kappa;
                        Ok(Replication { stats: vec![bit as u8 as f64], max_bits: 1 })
                    }
                    _ => {
                        let mut ones = 0usize;
                        for j in 0..cfg.m {
                            let p: f64 = chi2_cdf(d, scaled_norm(j))?;
                            let mut rng = seeds.local.child("machine", j as u64).rng();
                            ones += bernoulli(p, &mut rng)? as usize;
                        }
                        Ok(Replication { stats: vec![t1::statistic_from_count(cfg.m, ones)], max_bits: 1 })
                    }
                }
            }
            Layout::T2 { bits } => {
                let coin = self.draw_coin::<f64>(seeds.coin)?.ok_or_else(|| Error::MissingCoin(self.name().into()))?;
                let uf = coin.project(f.as_slice());
                let mut counts = vec![0usize; *bits];
                for j in 0..cfg.m {
                    let mut rng = seeds.data.child("machine", j as u64).rng();
                    for (c, &mean) in counts.iter_mut().zip(&uf) {
                        let z: f64 = standard_normal(&mut rng);
                        *c += (mean + sigma * z > 0.0) as usize;
                    }
                }
                Ok(Replication { stats: vec![t2::statistic_from_counts(cfg.m, &counts)], max_bits: *bits })
            }
            Layout::T3(layout) => {
                let mut counts = vec![0usize; d];
                let mut total = 0u64;
                let mut x = vec![0.0f64; d];
                let mut max_bits = 0;
                for j in 0..cfg.m {
                    let coords = &layout.plan.machine_coords[j];
                    let mut bits = coords.len();
                    match &layout.count {
                        None => {
                            let mut rng = seeds.data.child("machine", j as u64).rng();
                            for &i in coords {
                                let z: f64 = standard_normal(&mut rng);
                                counts[i] += (f.as_slice()[i] + sigma * z > 0.0) as usize;
                            }
                        }
                        Some(c) => {
                            sample_observation_row(cfg, f, seeds.data, j, &mut x)?;
                            for &i in coords {
                                counts[i] += (x[i] > 0.0) as usize;
                            }
                            let mut rng = seeds.local.child("machine", j as u64).rng();
                            total += t3::t32_count(cfg, &x, c, &mut rng)?;
                            bits += c.width as usize;
                        }
                    }
                    if bits > cfg.b as usize {
                        return Err(Error::BudgetExceeded { machine: j, bits, budget: cfg.b });
                    }
                    max_bits = max_bits.max(bits);
                }
                let mut stats = vec![t3::t31_statistic_from_counts(&counts, &layout.plan)];
                if let Some(c) = &layout.count {
                    stats.push(t3::t32_statistic_from_total(total, cfg.m, c));
                }
                Ok(Replication { stats, max_bits })
            }
        }
    }
}

/// Exact threshold of the single-machine chi-square test.
pub fn local_kappa(d: usize, alpha: f64) -> Result<f64> {
    let q: f64 = chi2_quantile(d, 1.0 - alpha)?;
    Ok((q - d as f64) / (d as f64).sqrt())
}
