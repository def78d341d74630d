//! Monte Carlo testing risk, empirical detection thresholds and rate sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::calibration::{calibrate, Calibration};
use crate::error::{Error, Result};
use crate::model::{binomial_radius, ProblemConfig, RiskReport, Signal};
use crate::nonparametric::theoretical_rate_finite;
use crate::protocols::{Protocol, ProtocolChoice, ReplicationSeeds, Thresholds, DEFAULT_M_ALPHA};
use crate::randomness::{standard_normal, SeedNode};

/// Geometry of an alternative signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Alternative {
    /// All coordinates equal.
    Flat,
    /// All mass on the first coordinate.
    Spike,
    /// Uniform direction, drawn once per seed.
    RandomSphere,
    /// Equal mass on the first `ceil(d/2)` coordinates.
    HalfFlat,
}

impl Alternative {
    pub const ALL: [Alternative; 4] = [Alternative::Flat, Alternative::Spike, Alternative::RandomSphere, Alternative::HalfFlat];

    pub fn label(self) -> &'static str {
        match self {
            Alternative::Flat => "Flat",
            Alternative::Spike => "Spike",
            Alternative::RandomSphere => "RandomSphere",
            Alternative::HalfFlat => "HalfFlat",
        }
    }

    /// Signal of dimension `d` and norm exactly `rho`.
    pub fn generate(self, d: usize, rho: f64, seed: SeedNode) -> Result<Signal<f64>> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("signal norm must be finite and non-negative, got {rho}")));
        }
        if rho == 0.0 {
            return Ok(Signal::zeros(d));
        }
        let direction = match self {
            Alternative::Flat => vec![1.0; d],
            Alternative::Spike => {
                let mut v = vec![0.0; d];
                v[0] = 1.0;
                v
            }
            Alternative::RandomSphere => {
                let mut rng = seed.child("direction", 0).rng();
                loop {
                    let v: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
                    if v.iter().any(|&x| x != 0.0) {
                        break v;
                    }
                }
            }
            Alternative::HalfFlat => (0..d).map(|i| if i < d.div_ceil(2) { 1.0 } else { 0.0 }).collect(),
        };
        Signal::new(direction).with_norm(rho)
    }
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Alternative::ALL
            .into_iter()
            .find(|a| a.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown alternative {s:?}")))
    }
}

/// Finite set of alternatives standing in for the supremum over `{‖f‖ ≥ ρ}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlternativeFamily {
    pub members: Vec<Alternative>,
}

impl Default for AlternativeFamily {
    fn default() -> Self {
        AlternativeFamily { members: Alternative::ALL.to_vec() }
    }
}

impl AlternativeFamily {
    pub fn new(members: Vec<Alternative>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("alternative family is empty".into()));
        }
        Ok(AlternativeFamily { members })
    }

    pub fn label(&self) -> String {
        self.members.iter().map(|a| a.label()).collect::<Vec<_>>().join("+")
    }
}

/// How observations are simulated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampler {
    /// Full `d`-dimensional observations, encoded through transcripts.
    Full,
    /// Only the summaries the encoders read; same law, much cheaper.
    #[default]
    Reduced,
}

fn check_calibrated(protocol: &Protocol, calibration: &Calibration) -> Result<()> {
    if calibration.protocol != protocol.kind() || calibration.config != *protocol.config() {
        return Err(Error::Uncalibrated(format!(
            "thresholds were calibrated for {} at {}, not {} at {}",
            calibration.protocol.name(),
            calibration.config.fingerprint(),
            protocol.name(),
            protocol.config().fingerprint()
        )));
    }
    if calibration.thresholds.cutoffs.len() != protocol.num_statistics() {
        return Err(Error::Uncalibrated(format!("{} needs {} thresholds", protocol.name(), protocol.num_statistics())));
    }
    Ok(())
}

/// Fraction of `reps` rounds under `f` in which the test rejects. Round `r`
/// uses `seed.child("rep", r)`.
pub fn rejection_rate(
    protocol: &Protocol,
    thresholds: &Thresholds,
    f: &Signal<f64>,
    reps: usize,
    seed: SeedNode,
    sampler: Sampler,
) -> Result<f64> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let rejections = (0..reps)
        .into_par_iter()
        .map(|r| {
            let seeds = ReplicationSeeds::from_node(seed.child("rep", r as u64));
            let rep = match sampler {
                Sampler::Full => protocol.replicate(f, &seeds)?,
                Sampler::Reduced => protocol.replicate_reduced(f, &seeds)?,
            };
            protocol.decide_statistics(&rep.stats, thresholds, seeds.central).map(|d| d as usize)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(rejections as f64 / reps as f64)
}

/// Type I error from `reps` null rounds (seed branch `"null"`).
pub fn estimate_type1(protocol: &Protocol, calibration: &Calibration, reps: usize, seed: SeedNode, sampler: Sampler) -> Result<f64> {
    check_calibrated(protocol, calibration)?;
    let zero = Signal::zeros(protocol.config().d);
    rejection_rate(protocol, &calibration.thresholds, &zero, reps, seed.child("null", 0), sampler)
}

/// Type II error of every family member at norm `rho`. Signals and noise
/// depend on `seed` only, so estimates at different `rho` share random numbers.
pub fn estimate_type2(
    protocol: &Protocol,
    calibration: &Calibration,
    family: &AlternativeFamily,
    rho: f64,
    reps: usize,
    seed: SeedNode,
    sampler: Sampler,
) -> Result<BTreeMap<String, f64>> {
    check_calibrated(protocol, calibration)?;
    let d = protocol.config().d;
    family
        .members
        .iter()
        .enumerate()
        .map(|(k, alt)| {
            let branch = seed.child("alternative", k as u64);
            let f = alt.generate(d, rho, branch)?;
            let power = rejection_rate(protocol, &calibration.thresholds, &f, reps, branch.child("rounds", 0), sampler)?;
            Ok((alt.label().to_string(), 1.0 - power))
        })
        .collect()
}

/// Risk `P_0(T = 1) + max_f P_f(T = 0)` over the family at norm `rho`.
pub fn estimate_risk(
    protocol: &Protocol,
    calibration: &Calibration,
    family: &AlternativeFamily,
    rho: f64,
    reps: usize,
    seed: SeedNode,
) -> Result<RiskReport> {
    estimate_risk_with(protocol, calibration, family, rho, reps, seed, Sampler::default())
}

pub fn estimate_risk_with(
    protocol: &Protocol,
    calibration: &Calibration,
    family: &AlternativeFamily,
    rho: f64,
    reps: usize,
    seed: SeedNode,
    sampler: Sampler,
) -> Result<RiskReport> {
    let type1 = estimate_type1(protocol, calibration, reps, seed, sampler)?;
    let type2 = estimate_type2(protocol, calibration, family, rho, reps, seed, sampler)?;
    Ok(RiskReport::new(type1, type2, reps))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub target_risk: f64,
    /// Bisection steps on `log ρ²`.
    pub steps: usize,
    pub coarse_reps: usize,
    /// Reps of the null estimate and of the final `fine_steps` steps.
    pub fine_reps: usize,
    pub fine_steps: usize,
    /// The search range is `[rate / span, rate · span]` in `ρ²`.
    pub span: f64,
    pub sampler: Sampler,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            target_risk: 0.5,
            steps: 12,
            coarse_reps: 500,
            fine_reps: 2000,
            fine_steps: 5,
            span: 100.0,
            sampler: Sampler::Reduced,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub rho2: f64,
    pub reps: usize,
    pub worst_type2: f64,
    pub risk: f64,
    pub mc_radius: f64,
}

/// Outcome of a threshold search; `rho2_star` is the geometric midpoint of
/// the final bracket `[rho2_lo, rho2_hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub crossed: bool,
    pub rho2_star: f64,
    pub rho2_lo: f64,
    pub rho2_hi: f64,
    pub rate: f64,
    pub type1: f64,
    pub steps: Vec<SearchStep>,
}

impl ThresholdSearch {
    pub fn rho_star(&self) -> f64 {
        self.rho2_star.sqrt()
    }

    /// Ratio `rho2_hi / rho2_lo`.
    pub fn bracket_width(&self) -> f64 {
        self.rho2_hi / self.rho2_lo
    }
}

/// Bisection on `log ρ²` for the norm at which the worst-case risk crosses
/// `target_risk`. The range is `[rate/span, rate·span]` around the
/// theoretical finite-dimensional rate; a search whose endpoints do not
/// straddle the target reports `crossed = false`.
pub fn find_threshold(
    protocol: &Protocol,
    calibration: &Calibration,
    family: &AlternativeFamily,
    options: &SearchOptions,
    seed: SeedNode,
) -> Result<ThresholdSearch> {
    let cfg = protocol.config();
    let rate = theoretical_rate_finite(cfg.n, cfg.m, cfg.d, cfg.b, cfg.coin);
    let type1 = estimate_type1(protocol, calibration, options.fine_reps, seed, options.sampler)?;
    if !(options.target_risk > type1 && options.target_risk < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target risk {} must lie in (type1 = {type1:.4}, 1)",
            options.target_risk
        )));
    }
    let mut steps = Vec::new();
    let mut eval = |rho2: f64, reps: usize| -> Result<bool> {
        let t2 = estimate_type2(protocol, calibration, family, rho2.sqrt(), reps, seed, options.sampler)?;
        let worst = t2.values().cloned().fold(0.0f64, f64::max);
        let risk = type1 + worst;
        steps.push(SearchStep { rho2, reps, worst_type2: worst, risk, mc_radius: binomial_radius(worst, reps) });
        Ok(risk > options.target_risk)
    };
    let (mut lo, mut hi) = (rate / options.span, rate * options.span);
    let crossed = eval(lo, options.coarse_reps)? && !eval(hi, options.coarse_reps)?;
    if crossed {
        for k in 0..options.steps {
            let reps = if k + options.fine_steps >= options.steps { options.fine_reps } else { options.coarse_reps };
            let mid = (lo * hi).sqrt();
            if eval(mid, reps)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(ThresholdSearch { crossed, rho2_star: (lo * hi).sqrt(), rho2_lo: lo, rho2_hi: hi, rate, type1, steps })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    D,
    M,
    N,
    B,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::D => "d",
            SweepAxis::M => "m",
            SweepAxis::N => "n",
            SweepAxis::B => "b",
        }
    }

    pub fn apply(self, cfg: &ProblemConfig, value: u64) -> Result<ProblemConfig> {
        let mut out = *cfg;
        let conv = |v: u64| usize::try_from(v).map_err(|_| Error::InvalidConfig(format!("{} = {v} out of range", self.name())));
        match self {
            SweepAxis::D => out.d = conv(value)?,
            SweepAxis::M => out.m = conv(value)?,
            SweepAxis::N => out.n = value,
            SweepAxis::B => out.b = u32::try_from(value).map_err(|_| Error::InvalidConfig(format!("b = {value} out of range")))?,
        }
        out.validate()?;
        Ok(out)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d" => Ok(SweepAxis::D),
            "m" => Ok(SweepAxis::M),
            "n" => Ok(SweepAxis::N),
            "b" => Ok(SweepAxis::B),
            _ => Err(Error::InvalidArgument(format!("unknown sweep axis {s:?} (expected d, m, n or b)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: u64,
    pub protocol: String,
    pub rho2_star: f64,
    pub rho2_theory: f64,
    pub rho2_lo: f64,
    pub rho2_hi: f64,
    pub type1: f64,
    pub crossed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub fitted_slope: f64,
    pub slope_ci: (f64, f64),
}

/// Least-squares fit `y = a + s x`; returns `(s, standard error of s)`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let k = x.len();
    if k < 2 || y.len() != k {
        return Err(Error::InvalidArgument(format!("need at least two paired points, got {} and {}", x.len(), y.len())));
    }
    let mx = x.iter().sum::<f64>() / k as f64;
    let my = y.iter().sum::<f64>() / k as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all axis values are equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    if k == 2 {
        return Ok((slope, 0.0));
    }
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    Ok((slope, (rss / (k - 2) as f64 / sxx).sqrt()))
}

/// Two-sided 95% Student-t quantile.
fn t_quantile_975(df: usize) -> f64 {
    match StudentsT::new(0.0, 1.0, df as f64) {
        Ok(t) => t.inverse_cdf(0.975),
        Err(_) => f64::INFINITY,
    }
}

/// Empirical thresholds along one axis and the log-log slope of `ρ*²`
/// against the axis value. Each point is calibrated afresh.
pub fn rate_sweep(
    choice: ProtocolChoice,
    template: &ProblemConfig,
    axis: SweepAxis,
    values: &[u64],
    family: &AlternativeFamily,
    options: &SearchOptions,
    null_reps: usize,
    seed: SeedNode,
) -> Result<SweepResult> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument(format!("a sweep needs at least 3 axis values, got {}", values.len())));
    }
    let mut values = values.to_vec();
    values.sort_unstable();
    values.dedup();
    let points = values
        .par_iter()
        .map(|&v| {
            let cfg = axis.apply(template, v)?;
            let protocol = Protocol::new(choice.resolve(&cfg, DEFAULT_M_ALPHA), &cfg)?;
            let node = seed.child(axis.name(), v);
            let cal = calibrate(&protocol, cfg.alpha, null_reps, node.child("calibration", 0))?;
            let search = find_threshold(&protocol, &cal, family, options, node.child("search", 0))?;
            Ok(SweepPoint {
                value: v,
                protocol: protocol.name().to_string(),
                rho2_star: search.rho2_star,
                rho2_theory: search.rate,
                rho2_lo: search.rho2_lo,
                rho2_hi: search.rho2_hi,
                type1: search.type1,
                crossed: search.crossed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| (p.value as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.rho2_star.ln()).collect();
    let (slope, se) = ols_slope(&xs, &ys)?;
    let half = t_quantile_975(points.len() - 2) * se;
    Ok(SweepResult { axis, points, fitted_slope: slope, slope_ci: (slope - half, slope + half) })
}
