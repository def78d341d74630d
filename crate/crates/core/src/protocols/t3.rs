//! Private-coin test for large total budgets: coordinate-partitioned sign bits
//! (first subtest) merged with a counting test for large coordinates (second
//! subtest).

use rand::Rng;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ProblemConfig, Transcript};
use crate::scalar::Real;
use crate::stats::chi2_cdf;

/// Assignment of machines to coordinates: machine `j` reports sign bits of
/// the coordinates in `machine_coords[j]`, coordinate `i` is reported by the
/// machines in `sets[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub m: usize,
    pub d: usize,
    pub per_machine: usize,
    pub sets: Vec<Vec<usize>>,
    pub machine_coords: Vec<Vec<usize>>,
}

impl PartitionPlan {
    /// Smallest set size, `floor(m b' / d)`.
    pub fn min_set_size(&self) -> usize {
        self.sets.iter().map(Vec::len).min().unwrap_or(0)
    }
}

/// Round-robin assignment: machine `j` covers coordinates `j b', …, j b' + b' - 1` (mod `d`).
pub fn build_partition(m: usize, d: usize, per_machine: usize) -> Result<PartitionPlan> {
    if d == 0 || m == 0 || per_machine == 0 {
        return Err(Error::InvalidArgument("partition needs m, d, b' ≥ 1".into()));
    }
    if per_machine > d {
        return Err(Error::InvalidArgument(format!("b' = {per_machine} exceeds d = {d}")));
    }
    if m * per_machine < d {
        return Err(Error::InsufficientBudget(format!(
            "m·b' = {} cannot cover d = {d} coordinates",
            m * per_machine
        )));
    }
    let mut sets = vec![Vec::new(); d];
    let mut machine_coords = Vec::with_capacity(m);
    for j in 0..m {
        let coords: Vec<usize> = (0..per_machine).map(|t| (j * per_machine + t) % d).collect();
        for &i in &coords {
            sets[i].push(j);
        }
        machine_coords.push(coords);
    }
    Ok(PartitionPlan { m, d, per_machine, sets, machine_coords })
}

/// Sign bits `1{X_i^j > 0}` of machine `j`'s assigned coordinates.
pub fn t31_encode<T: Real>(j: usize, x: &[T], plan: &PartitionPlan) -> Result<Transcript> {
    if x.len() != plan.d {
        return Err(Error::DimensionMismatch { expected: plan.d, found: x.len() });
    }
    let coords = plan
        .machine_coords
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("machine {j} not in plan of {} machines", plan.m)))?;
    Ok(Transcript::from_bits(coords.iter().map(|&i| x[i] > T::zero())))
}

/// Per-coordinate counts of ones `c_i = Σ_{j ∈ I_i} Y_i^j`.
pub fn t31_counts(transcripts: &[Transcript], plan: &PartitionPlan) -> Result<Vec<usize>> {
    if transcripts.len() != plan.m {
        return Err(Error::DimensionMismatch { expected: plan.m, found: transcripts.len() });
    }
    let mut counts = vec![0usize; plan.d];
    for (t, coords) in transcripts.iter().zip(&plan.machine_coords) {
        if t.bit_count() != coords.len() {
            return Err(Error::BitSizeMismatch { expected: coords.len(), found: t.bit_count() });
        }
        for (k, &i) in coords.iter().enumerate() {
            counts[i] += t.bit(k) as usize;
        }
    }
    Ok(counts)
}

/// `|(1/√d) Σ_i (Σ_{j∈I_i}(Y_i^j - 1/2))² / |I_i| - √d/4|`.
///
/// With balanced sets this is the usual `1/(|I_1|√d)` normalization; dividing
/// each coordinate by its own set size keeps the null mean at `√d/4` when the
/// round-robin sizes differ by one.
pub fn t31_statistic_from_counts(counts: &[usize], plan: &PartitionPlan) -> f64 {
    let d = plan.d as f64;
    let sum: f64 = counts
        .iter()
        .zip(&plan.sets)
        .map(|(&c, set)| {
            let dev = 2 * c as i64 - set.len() as i64;
            (dev * dev) as f64 / (4.0 * set.len() as f64)
        })
        .sum();
    (sum / d.sqrt() - d.sqrt() / 4.0).abs()
}

pub fn t31_statistic(transcripts: &[Transcript], plan: &PartitionPlan) -> Result<f64> {
    Ok(t31_statistic_from_counts(&t31_counts(transcripts, plan)?, plan))
}

/// Reject iff the statistic strictly exceeds `kappa`.
pub fn t31_decide(transcripts: &[Transcript], plan: &PartitionPlan, kappa: f64) -> Result<bool> {
    Ok(t31_statistic(transcripts, plan)? > kappa)
}

/// Repetition count `C_{b,d} = floor(2^b / (d + 1))`.
pub fn repetitions(bits: u32, d: usize) -> u64 {
    if bits >= 64 {
        return u64::MAX / (d as u64 + 1);
    }
    (1u64 << bits) / (d as u64 + 1)
}

/// Width of the integer transcript `N^j ∈ {0, …, C d}`.
pub fn count_width(reps: u64, d: usize) -> u32 {
    let max = reps as u128 * d as u128;
    // ceil(log2(max + 1))
    128 - max.leading_zeros()
}

/// Whether the counting subtest fits a budget of `bits` per machine.
pub fn t32_feasible(bits: u32, d: usize) -> bool {
    let c = repetitions(bits, d);
    c >= 1 && count_width(c, d) <= bits
}

/// Parameters of the counting subtest for a given per-machine budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountLayout {
    pub d: usize,
    pub reps: u64,
    pub width: u32,
}

impl CountLayout {
    pub fn new(bits: u32, d: usize) -> Result<Self> {
        let reps = repetitions(bits, d);
        if reps < 1 {
            return Err(Error::InsufficientBudget(format!(
                "counting test needs 2^b ≥ d + 1, got b = {bits}, d = {d}"
            )));
        }
        let width = count_width(reps, d);
        debug_assert!(width <= bits);
        Ok(CountLayout { d, reps, width })
    }

    /// Layout with an explicit repetition count (at least one).
    pub fn with_reps(reps: u64, d: usize) -> Self {
        let reps = reps.max(1);
        CountLayout { d, reps, width: count_width(reps, d) }
    }

    pub fn null_mean(&self) -> f64 {
        self.reps as f64 * self.d as f64 / 2.0
    }
}

/// `N^j = Σ_l Σ_i B_{li}`, `B_{li} ~ Ber(F_{χ²_1}((√(n/m) X_i)²))`.
pub fn t32_count<T: Real, R: Rng + ?Sized>(
    cfg: &ProblemConfig,
    x: &[T],
    layout: &CountLayout,
    rng: &mut R,
) -> Result<u64> {
    if x.len() != layout.d {
        return Err(Error::DimensionMismatch { expected: layout.d, found: x.len() });
    }
    let snr = T::lit(cfg.local_snr());
    let mut n = 0u64;
    for &xi in x {
        let p = chi2_cdf(1, snr * xi * xi)?.to_f64_lossy();
        // Σ_l B_li over the C repetitions is Binomial(C, p)
        let dist = Binomial::new(layout.reps, p).map_err(|_| Error::InvalidProbability(p))?;
        n += rng.sample(dist);
    }
    Ok(n)
}

pub fn t32_encode<T: Real, R: Rng + ?Sized>(
    cfg: &ProblemConfig,
    x: &[T],
    layout: &CountLayout,
    rng: &mut R,
) -> Result<Transcript> {
    let n = t32_count(cfg, x, layout, rng)?;
    let mut t = Transcript::with_capacity(layout.width as usize);
    t.push_uint(n, layout.width);
    Ok(t)
}

/// `|(1/(d m C)) (Σ_j (N^j - C d/2))² - 1/4|` from the total count `Σ_j N^j`.
pub fn t32_statistic_from_total(total: u64, m: usize, layout: &CountLayout) -> f64 {
    // Σ (N - Cd/2) = (2 Σ N - m C d) / 2
    let cd = layout.reps as i128 * layout.d as i128;
    let dev = 2 * total as i128 - m as i128 * cd;
    let sq = (dev as f64) * (dev as f64);
    (sq / (4.0 * m as f64 * cd as f64) - 0.25).abs()
}

pub fn t32_statistic(transcripts: &[Transcript], layout: &CountLayout) -> Result<f64> {
    let mut total = 0u64;
    for t in transcripts {
        if t.bit_count() != layout.width as usize {
            return Err(Error::BitSizeMismatch { expected: layout.width as usize, found: t.bit_count() });
        }
        total += t.read_uint(0, layout.width);
    }
    Ok(t32_statistic_from_total(total, transcripts.len(), layout))
}

/// Reject iff the statistic is at least `kappa`.
pub fn t32_decide(transcripts: &[Transcript], layout: &CountLayout, kappa: f64) -> Result<bool> {
    Ok(t32_statistic(transcripts, layout)? >= kappa)
}

/// Whether the budget admits the counting subtest: `b ≥ 2 log2(d + 1)` and
/// the halved budget still yields `C ≥ 1`.
pub fn counting_eligible(b: u32, d: usize) -> bool {
    b as f64 >= 2.0 * ((d + 1) as f64).log2() && t32_feasible(b / 2, d)
}

/// How the budget of the combined test is split between the two subtests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedLayout {
    pub plan: PartitionPlan,
    pub count: Option<CountLayout>,
}

impl CombinedLayout {
    /// Both subtests with `floor(b/2)` bits each when eligible (and the halved
    /// budget still covers all coordinates), otherwise the sign-bit subtest
    /// alone with the whole budget.
    pub fn new(cfg: &ProblemConfig) -> Result<Self> {
        let half = (cfg.b / 2) as usize;
        if counting_eligible(cfg.b, cfg.d) && cfg.m * half.min(cfg.d) >= cfg.d {
            let half = cfg.b / 2;
            let plan = build_partition(cfg.m, cfg.d, (half as usize).min(cfg.d))?;
            let count = CountLayout::new(half, cfg.d)?;
            Ok(CombinedLayout { plan, count: Some(count) })
        } else {
            let plan = build_partition(cfg.m, cfg.d, (cfg.b as usize).min(cfg.d))?;
            Ok(CombinedLayout { plan, count: None })
        }
    }

    pub fn encode<T: Real, R: Rng + ?Sized>(
        &self,
        cfg: &ProblemConfig,
        j: usize,
        x: &[T],
        rng: &mut R,
    ) -> Result<Transcript> {
        let mut t = t31_encode(j, x, &self.plan)?;
        if let Some(layout) = &self.count {
            t.append(&t32_encode(cfg, x, layout, rng)?);
        }
        Ok(t)
    }

    /// Subtest statistics `[T_III¹]` or `[T_III¹, T_III²]`.
    pub fn statistics(&self, transcripts: &[Transcript]) -> Result<Vec<f64>> {
        let mut counts = vec![0usize; self.plan.d];
        let mut total = 0u64;
        for (j, t) in transcripts.iter().enumerate() {
            let coords = &self.plan.machine_coords[j];
            let expected = coords.len() + self.count.map_or(0, |c| c.width as usize);
            if t.bit_count() != expected {
                return Err(Error::BitSizeMismatch { expected, found: t.bit_count() });
            }
            for (k, &i) in coords.iter().enumerate() {
                counts[i] += t.bit(k) as usize;
            }
            if let Some(c) = &self.count {
                total += t.read_uint(coords.len(), c.width);
            }
        }
        let mut out = vec![t31_statistic_from_counts(&counts, &self.plan)];
        if let Some(c) = &self.count {
            out.push(t32_statistic_from_total(total, transcripts.len(), c));
        }
        Ok(out)
    }

    /// `T_III¹ ∨ T_III²` at the given thresholds.
    pub fn decide(&self, transcripts: &[Transcript], kappa1: f64, kappa2: f64) -> Result<bool> {
        let s = self.statistics(transcripts)?;
        Ok(s[0] > kappa1 || s.get(1).is_some_and(|&v| v >= kappa2))
    }
}
