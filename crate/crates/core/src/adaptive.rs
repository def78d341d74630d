//! Tests that adapt to unknown smoothness.
//!
//! A grid of smoothness values is mapped to a contiguous range `C` of
//! truncation levels. Every level gets its own subset `M_L` of `m'`
//! machines, and per-level statistics are combined with a Bonferroni-type
//! threshold `2√(log log n)`.
//!
//! The per-machine budget `b` is shared between the subtests: the chi-square
//! bit test uses one bit per level a machine serves, and what remains goes
//! to the rotated sign-bit test (public coin) or is split between the
//! partitioned sign-bit test and the counting test (private coin). Each
//! subtest keeps only the levels it can serve with its share.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoinMode, ProblemConfig};
use crate::nonparametric::{nu, truncation_level, LeveledSignal};
use crate::protocols::t3::{
    build_partition, t31_statistic_from_counts, t32_count, t32_statistic_from_total, CountLayout, PartitionPlan,
};
use crate::protocols::ReplicationSeeds;
use crate::randomness::{bernoulli, haar_frame, sample_observation_row, OrthogonalFrame, SeedNode};
use crate::stats::chi2_cdf;

/// `log2 n`, the log used for budgets, grids and rates.
pub fn log2n(n: u64) -> f64 {
    (n as f64).log2()
}

/// `ln ln n`, the iterated log of the Bonferroni correction (at least a small positive floor).
pub fn log_log(n: u64) -> f64 {
    (n as f64).ln().ln().max(1e-12)
}

/// Default threshold `2√(log log n)` of the adaptive statistics.
pub fn bonferroni_threshold(n: u64) -> f64 {
    2.0 * log_log(n).sqrt()
}

/// Adaptive separation rate `ρ_s²` with constant one.
pub fn adaptive_rate(n: u64, m: usize, b: u32, s: f64, coin: CoinMode) -> f64 {
    let (nf, mf, bf) = (n as f64, m as f64, b as f64);
    let lg = log2n(n);
    let e = 2.0 * s + 0.5;
    if bf >= lg {
        let high = nf.powf(1.0 / e);
        let m_exp = match coin {
            CoinMode::Public => (2.0 * s + 1.0) / e,
            CoinMode::Private => (s + 0.75) / e,
        };
        if bf >= lg * high {
            nf.powf(-2.0 * s / e)
        } else if bf >= lg * (high / mf.powf(m_exp)).max(1.0) {
            match coin {
                CoinMode::Public => (bf.sqrt() * nf / lg.sqrt()).powf(-2.0 * s / (2.0 * s + 1.0)),
                CoinMode::Private => (bf * nf / lg).powf(-2.0 * s / (2.0 * s + 1.5)),
            }
        } else {
            (nf / mf.sqrt()).powf(-2.0 * s / e)
        }
    } else {
        match coin {
            CoinMode::Public => {
                if mf >= nf.powf(1.0 / (2.0 * s + 1.0)) {
                    (bf.sqrt() * nf / lg.sqrt()).powf(-2.0 * s / (2.0 * s + 1.0))
                } else {
                    (bf.sqrt() * nf / (mf * lg).sqrt()).powf(-2.0 * s / e)
                }
            }
            CoinMode::Private => {
                let boundary = nf.powf(2.0 / (2.0 * s + 1.5)) * (bf / lg).powf((s - 0.25) / (2.0 * s + 1.5));
                if mf >= boundary {
                    (bf * nf / lg).powf(-2.0 * s / (2.0 * s + 1.5))
                } else {
                    (nf * bf.sqrt() / (mf * lg).sqrt()).powf(-2.0 * s / e)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub s: f64,
    pub rho: f64,
    pub level: u32,
}

/// Smoothness grid and the level range `C = {L_min, …, L_max}` it induces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveGrid {
    pub s_min: f64,
    pub s_max: f64,
    pub points: Vec<GridPoint>,
    pub levels: Vec<u32>,
}

impl AdaptiveGrid {
    pub fn l_min(&self) -> u32 {
        self.levels[0]
    }

    pub fn l_max(&self) -> u32 {
        self.levels[self.levels.len() - 1]
    }

    /// Rate `ρ_s` of the grid point nearest to `s`.
    pub fn rho_for(&self, s: f64) -> f64 {
        self.nearest(s).rho
    }

    pub fn level_for(&self, s: f64) -> u32 {
        self.nearest(s).level
    }

    fn nearest(&self, s: f64) -> &GridPoint {
        self.points
            .iter()
            .min_by(|a, b| (a.s - s).abs().total_cmp(&(b.s - s).abs()))
            .expect("grid is non-empty")
    }

    /// Smallest grid rate mapped to each level.
    pub fn rho_map(&self) -> Vec<(u32, f64)> {
        self.levels
            .iter()
            .filter_map(|&l| {
                self.points.iter().filter(|p| p.level == l).map(|p| p.rho).reduce(f64::min).map(|r| (l, r))
            })
            .collect()
    }
}

/// Grid with spacing `1/log2 n` over `[s_min, s_max]`.
pub fn build_grid(s_min: f64, s_max: f64, n: u64, m: usize, b: u32, coin: CoinMode) -> Result<AdaptiveGrid> {
    if !(s_min > 0.0 && s_min <= s_max && s_max.is_finite()) {
        return Err(Error::EmptyGrid(format!("need 0 < s_min ≤ s_max, got [{s_min}, {s_max}]")));
    }
    if n < 4 {
        return Err(Error::EmptyGrid(format!("n = {n} too small for a smoothness grid")));
    }
    let step = 1.0 / log2n(n);
    let count = ((s_max - s_min) / step + 1e-9).floor() as usize + 1;
    let mut svals: Vec<f64> = (0..count).map(|k| s_min + k as f64 * step).collect();
    if svals.last().is_some_and(|&s| s < s_max - 1e-12) {
        svals.push(s_max);
    }
    let points: Vec<GridPoint> = svals
        .into_iter()
        .map(|s| {
            let rho = adaptive_rate(n, m, b, s, coin).sqrt();
            GridPoint { s, rho, level: truncation_level(s, rho) }
        })
        .collect();
    let lo = points.iter().map(|p| p.level).min().expect("non-empty");
    let hi = points.iter().map(|p| p.level).max().expect("non-empty");
    let levels: Vec<u32> = (lo..=hi).collect();
    if levels.len() > log2n(n).ceil() as usize {
        return Err(Error::EmptyGrid(format!("{} levels exceed ceil(log2 n)", levels.len())));
    }
    Ok(AdaptiveGrid { s_min, s_max, points, levels })
}

/// `m' = floor(m (log2 n ∧ b) / log2 n)`.
pub fn m_prime(n: u64, m: usize, b: u32) -> usize {
    let lg = log2n(n);
    (m as f64 * lg.min(b as f64) / lg).floor() as usize
}

/// Machine subsets `M_L`, one per level of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineSchedule {
    pub m: usize,
    pub m_prime: usize,
    pub levels: Vec<u32>,
    /// `subsets[t]` lists the machines of level `levels[t]`.
    pub subsets: Vec<Vec<usize>>,
}

impl MachineSchedule {
    /// `(t, u)` pairs: machine `j` is the `u`-th member of `subsets[t]`.
    pub fn assignments(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.m];
        for (t, set) in self.subsets.iter().enumerate() {
            for (u, &j) in set.iter().enumerate() {
                out[j].push((t, u));
            }
        }
        out
    }

    /// Number of subsets containing each machine.
    pub fn loads(&self) -> Vec<usize> {
        let mut load = vec![0usize; self.m];
        for set in &self.subsets {
            for &j in set {
                load[j] += 1;
            }
        }
        load
    }

    /// Largest load over machines when only the levels in `active` count.
    pub fn max_load(&self, active: &[bool]) -> usize {
        let mut load = vec![0usize; self.m];
        for (set, _) in self.subsets.iter().zip(active).filter(|(_, &a)| a) {
            for &j in set {
                load[j] += 1;
            }
        }
        load.into_iter().max().unwrap_or(0)
    }
}

/// Round-robin blocks: level index `t` gets machines `(t m' + u) mod m`, `u < m'`.
pub fn build_schedule(n: u64, m: usize, b: u32, grid: &AdaptiveGrid) -> Result<MachineSchedule> {
    let c = grid.levels.len();
    let total = m as u128 * b as u128;
    let mut mp = m_prime(n, m, b);
    if mp == 0 {
        if m as f64 * b as f64 >= log2n(n) {
            mp = 1;
        } else {
            return Err(Error::InsufficientBudget(format!(
                "insufficient total budget for adaptation: m' = 0 since m·b = {} < log2 n = {:.2}, so m'|C| > mb cannot be avoided",
                total,
                log2n(n)
            )));
        }
    }
    if (mp * c) as u128 > total {
        return Err(Error::InsufficientBudget(format!(
            "insufficient total budget for adaptation: m'|C| = {}·{} = {} > mb = {}",
            mp,
            c,
            mp * c,
            total
        )));
    }
    let subsets = (0..c).map(|t| (0..mp).map(|u| (t * mp + u) % m).collect()).collect();
    Ok(MachineSchedule { m, m_prime: mp, levels: grid.levels.clone(), subsets })
}

/// Budget predicate deciding at which levels the counting subtest runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountPredicate {
    /// `2^{b'} ≥ ν_L + 1`, as in the finite-dimensional test.
    #[default]
    Nu,
    /// `2 log2(L + 1) ≤ b'`.
    Level,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdaptiveSubtest {
    ChiSquareBits,
    RotatedSigns,
    PartitionedSigns,
    Counting,
}

impl AdaptiveSubtest {
    pub fn label(self) -> &'static str {
        match self {
            AdaptiveSubtest::ChiSquareBits => "T1-adapt",
            AdaptiveSubtest::RotatedSigns => "T2-adapt",
            AdaptiveSubtest::PartitionedSigns => "T31-adapt",
            AdaptiveSubtest::Counting => "T32-adapt",
        }
    }
}

/// Layout of one subtest at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    /// Index into the schedule's level list.
    pub index: usize,
    pub level: u32,
    pub nu: usize,
    pub bits: u32,
    pub partition: Option<PartitionPlan>,
    pub count: Option<CountLayout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtestPlan {
    pub subtest: AdaptiveSubtest,
    pub budget: u32,
    pub levels: Vec<LevelPlan>,
}

impl SubtestPlan {
    fn level_at(&self, index: usize) -> Option<&LevelPlan> {
        self.levels.iter().find(|p| p.index == index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOptions {
    pub predicate: CountPredicate,
    /// Threshold `κ` of the counting subtest, on the `√(log log n)` scale.
    pub kappa_count: Option<f64>,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions { predicate: CountPredicate::Nu, kappa_count: None }
    }
}

/// Largest uniform per-level bit count that fits `budget` given the loads of
/// the active levels, dropping levels the subtest cannot serve until stable.
fn allocate<F>(schedule: &MachineSchedule, budget: u32, mut fits: F) -> (Vec<bool>, Vec<u32>)
where
    F: FnMut(usize, u32) -> bool,
{
    let c = schedule.levels.len();
    let mut active = vec![true; c];
    loop {
        let load = schedule.max_load(&active);
        if load == 0 {
            return (active, vec![0; c]);
        }
        let per = budget / load as u32;
        let bits: Vec<u32> =
            (0..c).map(|t| per.min(nu(schedule.levels[t]).min(u32::MAX as usize) as u32)).collect();
        let mut changed = false;
        for t in 0..c {
            if active[t] && (bits[t] == 0 || !fits(t, bits[t])) {
                active[t] = false;
                changed = true;
            }
        }
        if !changed {
            return (active, bits);
        }
    }
}

fn count_layout(nu_l: usize, bits: u32, level: u32, predicate: CountPredicate) -> Option<CountLayout> {
    let eligible = match predicate {
        CountPredicate::Nu => bits < 64 && (1u128 << bits) > nu_l as u128,
        CountPredicate::Level => 2.0 * ((level + 1) as f64).log2() <= bits as f64,
    };
    if !eligible {
        return None;
    }
    let reps = if bits >= 64 { u64::MAX / (nu_l as u64 + 1) } else { (1u64 << bits) / (nu_l as u64 + 1) };
    let layout = CountLayout::with_reps(reps, nu_l);
    (layout.width <= bits).then_some(layout)
}

/// Per-level statistics of one adaptive round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStatistic {
    pub subtest: AdaptiveSubtest,
    pub level: u32,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveReplication {
    pub stats: Vec<LevelStatistic>,
    pub max_bits: usize,
}

impl AdaptiveReplication {
    /// `max_L` of one subtest's statistic (`-∞` when it has no level).
    pub fn max_of(&self, subtest: AdaptiveSubtest) -> f64 {
        self.stats.iter().filter(|s| s.subtest == subtest).map(|s| s.value).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Decisions of the individual subtests and of their combination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptiveDecision {
    pub chi_square_bits: bool,
    pub rotated_signs: bool,
    pub partitioned_signs: bool,
    pub counting: bool,
    pub combined: bool,
}

/// The adaptive test for one configuration, grid and schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveTest {
    pub cfg: ProblemConfig,
    pub grid: AdaptiveGrid,
    pub schedule: MachineSchedule,
    pub plans: Vec<SubtestPlan>,
    pub options: AdaptiveOptions,
    assignments: Vec<Vec<(usize, usize)>>,
}

impl AdaptiveTest {
    /// Grid, schedule and budget split for `[s_min, s_max]` (`cfg.d` is ignored).
    pub fn build(cfg: &ProblemConfig, s_min: f64, s_max: f64, options: AdaptiveOptions) -> Result<Self> {
        cfg.validate()?;
        let grid = build_grid(s_min, s_max, cfg.n, cfg.m, cfg.b, cfg.coin)?;
        let schedule = build_schedule(cfg.n, cfg.m, cfg.b, &grid)?;
        Self::new(cfg, grid, schedule, options)
    }

    pub fn new(cfg: &ProblemConfig, grid: AdaptiveGrid, schedule: MachineSchedule, options: AdaptiveOptions) -> Result<Self> {
        let c = schedule.levels.len();
        let load = schedule.max_load(&vec![true; c]) as u32;
        if load > cfg.b {
            return Err(Error::BudgetExceeded { machine: 0, bits: load as usize, budget: cfg.b });
        }
        let mp = schedule.m_prime;
        let plan_from = |subtest, budget, active: &[bool], bits: &[u32], extra: &dyn Fn(usize, u32) -> LevelPlan| {
            let levels = (0..c).filter(|&t| active[t]).map(|t| extra(t, bits[t])).collect();
            SubtestPlan { subtest, budget, levels }
        };
        let base = |t: usize, bits: u32| LevelPlan {
            index: t,
            level: schedule.levels[t],
            nu: nu(schedule.levels[t]),
            bits,
            partition: None,
            count: None,
        };
        let mut plans = vec![plan_from(AdaptiveSubtest::ChiSquareBits, load, &vec![true; c], &vec![1; c], &|t, b| base(t, b))];
        let rest = cfg.b - load;
        match cfg.coin {
            CoinMode::Public => {
                let (active, bits) = allocate(&schedule, rest, |_, _| true);
                plans.push(plan_from(AdaptiveSubtest::RotatedSigns, rest, &active, &bits, &|t, b| base(t, b)));
            }
            CoinMode::Private => {
                let levels = &schedule.levels;
                let count_budget = rest / 2;
                let (cactive, cbits) =
                    allocate(&schedule, count_budget, |t, b| count_layout(nu(levels[t]), b, levels[t], options.predicate).is_some());
                let sign_budget = if cactive.iter().any(|&a| a) { rest - count_budget } else { rest };
                let (sactive, sbits) = allocate(&schedule, sign_budget, |t, b| mp * b as usize >= nu(levels[t]));
                plans.push(plan_from(AdaptiveSubtest::PartitionedSigns, sign_budget, &sactive, &sbits, &|t, b| LevelPlan {
                    partition: Some(build_partition(mp, nu(levels[t]), b as usize).expect("feasible by allocation")),
                    ..base(t, b)
                }));
                if cactive.iter().any(|&a| a) {
                    plans.push(plan_from(AdaptiveSubtest::Counting, count_budget, &cactive, &cbits, &|t, b| LevelPlan {
                        count: count_layout(nu(levels[t]), b, levels[t], options.predicate),
                        ..base(t, b)
                    }));
                }
            }
        }
        let assignments = schedule.assignments();
        Ok(AdaptiveTest { cfg: *cfg, grid, schedule, plans, options, assignments })
    }

    pub fn plan(&self, subtest: AdaptiveSubtest) -> Option<&SubtestPlan> {
        self.plans.iter().find(|p| p.subtest == subtest)
    }

    /// Highest level used by any subtest; observations cover levels `0..=L_max`.
    pub fn top_level(&self) -> u32 {
        self.grid.l_max()
    }

    /// Bits machine `j` sends in total.
    pub fn bits_of_machine(&self, j: usize) -> usize {
        self.assignments[j]
            .iter()
            .map(|&(t, _)| {
                self.plans
                    .iter()
                    .filter_map(|p| p.level_at(t))
                    .map(|lp| match lp.count {
                        Some(c) => c.width as usize,
                        None => lp.bits as usize,
                    })
                    .sum::<usize>()
            })
            .sum()
    }

    /// One simulated round under `f`.
    pub fn replicate(&self, f: &LeveledSignal<f64>, seeds: &ReplicationSeeds) -> Result<AdaptiveReplication> {
        let top = self.top_level();
        let dim = nu(top);
        let full = self.cfg.with_d(dim);
        let signal = f.truncated(top);
        let levels = &self.schedule.levels;
        let c = levels.len();
        let mp = self.schedule.m_prime;
        let snr = self.cfg.local_snr();

        let chi = self.plan(AdaptiveSubtest::ChiSquareBits);
        let rot = self.plan(AdaptiveSubtest::RotatedSigns);
        let part = self.plan(AdaptiveSubtest::PartitionedSigns);
        let cnt = self.plan(AdaptiveSubtest::Counting);

        let coins: Vec<Option<OrthogonalFrame<f64>>> = (0..c)
            .map(|t| match rot.and_then(|p| p.level_at(t)) {
                Some(lp) => haar_frame(lp.nu, lp.bits as usize, seeds.coin.child("level", levels[t] as u64)).map(Some),
                None => Ok(None),
            })
            .collect::<Result<_>>()?;

        let mut ones = vec![0usize; c];
        let mut rot_counts: Vec<Vec<usize>> =
            (0..c).map(|t| vec![0; rot.and_then(|p| p.level_at(t)).map_or(0, |lp| lp.bits as usize)]).collect();
        let mut part_counts: Vec<Vec<usize>> =
            (0..c).map(|t| vec![0; part.and_then(|p| p.level_at(t)).map_or(0, |lp| lp.nu)]).collect();
        let mut totals = vec![0u64; c];
        let mut max_bits = 0usize;

        let mut x = vec![0.0f64; dim];
        // cumulative squared norms by level
        let mut prefix = vec![0.0f64; top as usize + 1];
        for j in 0..self.cfg.m {
            if self.assignments[j].is_empty() {
                continue;
            }
            sample_observation_row(&full, &signal, seeds.data, j, &mut x)?;
            let mut acc = 0.0;
            for l in 0..=top as usize {
                acc += x[(1 << l) - 1..(2 << l) - 1].iter().map(|v| v * v).sum::<f64>();
                prefix[l] = acc;
            }
            let mut rng = seeds.local.child("machine", j as u64).rng();
            let mut bits = 0usize;
            for &(t, u) in &self.assignments[j] {
                let l = levels[t];
                let nul = nu(l);
                let xs = &x[..nul];
                if chi.and_then(|p| p.level_at(t)).is_some() {
                    let p: f64 = chi2_cdf(nul, snr * prefix[l as usize])?;
                    ones[t] += bernoulli(p, &mut rng)? as usize;
                    bits += 1;
                }
                if let (Some(lp), Some(frame)) = (rot.and_then(|p| p.level_at(t)), coins[t].as_ref()) {
                    for (i, cnt) in rot_counts[t].iter_mut().enumerate() {
                        let proj: f64 = frame.row(i).iter().zip(xs).map(|(a, b)| a * b).sum();
                        *cnt += (proj > 0.0) as usize;
                    }
                    bits += lp.bits as usize;
                }
                if let Some(lp) = part.and_then(|p| p.level_at(t)) {
                    let plan = lp.partition.as_ref().expect("partition present");
                    for &i in &plan.machine_coords[u] {
                        part_counts[t][i] += (xs[i] > 0.0) as usize;
                    }
                    bits += plan.machine_coords[u].len();
                }
                if let Some(layout) = cnt.and_then(|p| p.level_at(t)).and_then(|lp| lp.count) {
                    totals[t] += t32_count(&full, xs, &layout, &mut rng)?;
                    bits += layout.width as usize;
                }
            }
            if bits > self.cfg.b as usize {
                return Err(Error::BudgetExceeded { machine: j, bits, budget: self.cfg.b });
            }
            max_bits = max_bits.max(bits);
        }

        let mut stats = Vec::new();
        for t in 0..c {
            let l = levels[t];
            if chi.and_then(|p| p.level_at(t)).is_some() {
                let dev = 2.0 * ones[t] as f64 - mp as f64;
                stats.push(LevelStatistic { subtest: AdaptiveSubtest::ChiSquareBits, level: l, value: dev / (mp as f64).sqrt() });
            }
            if let Some(lp) = rot.and_then(|p| p.level_at(t)) {
                let bp = lp.bits as f64;
                let sum: f64 = rot_counts[t]
                    .iter()
                    .map(|&s| {
                        let dev = s as f64 - mp as f64 / 2.0;
                        dev * dev - mp as f64 / 4.0
                    })
                    .sum();
                stats.push(LevelStatistic { subtest: AdaptiveSubtest::RotatedSigns, level: l, value: sum / (bp.sqrt() * mp as f64) });
            }
            if let Some(lp) = part.and_then(|p| p.level_at(t)) {
                let plan = lp.partition.as_ref().expect("partition present");
                stats.push(LevelStatistic {
                    subtest: AdaptiveSubtest::PartitionedSigns,
                    level: l,
                    value: t31_statistic_from_counts(&part_counts[t], plan),
                });
            }
            if let Some(layout) = cnt.and_then(|p| p.level_at(t)).and_then(|lp| lp.count) {
                stats.push(LevelStatistic {
                    subtest: AdaptiveSubtest::Counting,
                    level: l,
                    value: t32_statistic_from_total(totals[t], mp, &layout),
                });
            }
        }
        Ok(AdaptiveReplication { stats, max_bits })
    }

    /// Thresholds: `2√(log log n)` for every subtest except the counting
    /// subtest, which uses `κ √(log log n)`.
    pub fn decide(&self, rep: &AdaptiveReplication) -> Result<AdaptiveDecision> {
        let base = bonferroni_threshold(self.cfg.n);
        let chi_square_bits = rep.max_of(AdaptiveSubtest::ChiSquareBits) >= base;
        let rotated_signs = rep.max_of(AdaptiveSubtest::RotatedSigns) >= base;
        let partitioned_signs = rep.max_of(AdaptiveSubtest::PartitionedSigns) >= base;
        let counting = match self.plan(AdaptiveSubtest::Counting) {
            Some(_) => {
                let kappa = self
                    .options
                    .kappa_count
                    .ok_or_else(|| Error::Uncalibrated("counting subtest threshold not calibrated".into()))?;
                rep.max_of(AdaptiveSubtest::Counting) >= kappa * log_log(self.cfg.n).sqrt()
            }
            None => false,
        };
        let combined = chi_square_bits || rotated_signs || partitioned_signs || counting;
        Ok(AdaptiveDecision { chi_square_bits, rotated_signs, partitioned_signs, counting, combined })
    }

    pub fn needs_calibration(&self) -> bool {
        self.plan(AdaptiveSubtest::Counting).is_some() && self.options.kappa_count.is_none()
    }

    /// Calibrate `κ` of the counting subtest so that its own null rejection
    /// rate is at most `level`; stores and returns it.
    pub fn calibrate_counting(&mut self, level: f64, reps: usize, seed: SeedNode) -> Result<Option<f64>> {
        if self.plan(AdaptiveSubtest::Counting).is_none() {
            return Ok(None);
        }
        let zero = LeveledSignal::zeros(0);
        let scale = log_log(self.cfg.n).sqrt();
        let mut maxima: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let seeds = ReplicationSeeds::from_node(seed.child("null", r as u64));
                self.replicate(&zero, &seeds).map(|rep| rep.max_of(AdaptiveSubtest::Counting) / scale)
            })
            .collect::<Result<_>>()?;
        maxima.sort_by(|a, b| b.total_cmp(a));
        // smallest κ with #{max ≥ κ} ≤ level·reps: the atom just above the cut
        let allowed = (level * reps as f64).floor() as usize;
        let kappa = if allowed == 0 { maxima[0].next_up() } else { maxima[allowed - 1] };
        let kappa = if allowed < reps && maxima[allowed] == kappa { kappa.next_up() } else { kappa };
        self.options.kappa_count = Some(kappa);
        Ok(Some(kappa))
    }
}

/// Chi-square bit test alone: `max_L S_I(L) ≥ 2√(log log n)`.
pub fn t1_adapt(test: &AdaptiveTest, f: &LeveledSignal<f64>, seeds: &ReplicationSeeds) -> Result<bool> {
    let rep = test.replicate(f, seeds)?;
    Ok(rep.max_of(AdaptiveSubtest::ChiSquareBits) >= bonferroni_threshold(test.cfg.n))
}

/// Rotated sign-bit test alone (public coin).
pub fn t2_adapt(test: &AdaptiveTest, f: &LeveledSignal<f64>, seeds: &ReplicationSeeds) -> Result<bool> {
    if test.cfg.coin != CoinMode::Public {
        return Err(Error::MissingCoin("T2-adapt".into()));
    }
    let rep = test.replicate(f, seeds)?;
    Ok(rep.max_of(AdaptiveSubtest::RotatedSigns) >= bonferroni_threshold(test.cfg.n))
}

/// Union of the partitioned sign-bit and counting tests (private coin).
pub fn t3_adapt(test: &AdaptiveTest, f: &LeveledSignal<f64>, seeds: &ReplicationSeeds) -> Result<bool> {
    if test.cfg.coin != CoinMode::Private {
        return Err(Error::InvalidArgument("T3-adapt runs with a private coin".into()));
    }
    let d = test.decide(&test.replicate(f, seeds)?)?;
    Ok(d.partitioned_signs || d.counting)
}
