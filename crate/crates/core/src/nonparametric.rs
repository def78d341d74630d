//! Signal-in-white-noise layer: Sobolev signals stored as wavelet
//! coefficients, truncation levels, minimax rates and the reduction of the
//! nonparametric problem to a finite-dimensional one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoinMode, Dataset, ProblemConfig, Signal};
use crate::protocols::{Protocol, Replication, ReplicationSeeds, Thresholds};
use crate::randomness::{sample_observations, standard_normal, SeedNode};
use crate::scalar::Real;

/// Sobolev ball `H^{s,R}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolevBall {
    pub s: f64,
    #[serde(rename = "R", alias = "r")]
    pub r: f64,
}

impl SobolevBall {
    pub fn new(s: f64, r: f64) -> Result<Self> {
        let ball = SobolevBall { s, r };
        ball.validate()?;
        Ok(ball)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidConfig("s must be > 0".into()));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidConfig("R must be > 0".into()));
        }
        Ok(())
    }
}

/// Number of coefficients in levels `0..=L`, `ν_L = 2^{L+1} - 1`.
pub fn nu(level: u32) -> usize {
    (1usize << (level + 1)) - 1
}

/// Wavelet coefficients `f_{li}`, level `l` holding `2^l` entries.
/// Coefficients above the stored levels are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeveledSignal<T> {
    levels: Vec<Vec<T>>,
}

impl<T: Real> LeveledSignal<T> {
    pub fn new(levels: Vec<Vec<T>>) -> Result<Self> {
        for (l, coeffs) in levels.iter().enumerate() {
            if coeffs.len() != 1 << l {
                return Err(Error::DimensionMismatch { expected: 1 << l, found: coeffs.len() });
            }
        }
        Ok(LeveledSignal { levels })
    }

    /// The zero signal stored up to `max_level`.
    pub fn zeros(max_level: u32) -> Self {
        LeveledSignal { levels: (0..=max_level).map(|l| vec![T::zero(); 1 << l]).collect() }
    }

    /// Rebuild from the flattened vector of levels `0..=L` (`len = ν_L`).
    pub fn from_flat(flat: &[T]) -> Result<Self> {
        let len = flat.len() + 1;
        if !len.is_power_of_two() || len < 2 {
            return Err(Error::InvalidArgument(format!("length {} is not of the form 2^(L+1) - 1", flat.len())));
        }
        let levels = (0..len.trailing_zeros()).map(|l| flat[(1 << l) - 1..(2 << l) - 1].to_vec()).collect();
        Ok(LeveledSignal { levels })
    }

    /// Highest stored level (`None` for an empty signal).
    pub fn max_level(&self) -> Option<u32> {
        self.levels.len().checked_sub(1).map(|l| l as u32)
    }

    pub fn level(&self, l: u32) -> Option<&[T]> {
        self.levels.get(l as usize).map(Vec::as_slice)
    }

    pub fn l2_norm_sq(&self) -> T {
        self.levels.iter().flatten().map(|&c| c * c).sum()
    }

    pub fn l2_norm(&self) -> T {
        self.l2_norm_sq().sqrt()
    }

    /// `Σ_l 2^{2ls} Σ_i f_{li}²`.
    pub fn sobolev_norm_sq(&self, s: f64) -> T {
        self.levels
            .iter()
            .enumerate()
            .map(|(l, c)| T::lit((2.0 * l as f64 * s).exp2()) * c.iter().map(|&v| v * v).sum::<T>())
            .sum()
    }

    pub fn sobolev_norm(&self, s: f64) -> T {
        self.sobolev_norm_sq(s).sqrt()
    }

    /// `‖f - f^L‖²`, the energy above level `L`.
    pub fn tail_norm_sq(&self, level: u32) -> T {
        self.levels.iter().skip(level as usize + 1).flatten().map(|&c| c * c).sum()
    }

    /// Flattened projection `f̃^L` onto levels `0..=L`, ordered by level then index.
    pub fn truncated(&self, level: u32) -> Signal<T> {
        let mut out = Vec::with_capacity(nu(level));
        for l in 0..=level {
            match self.levels.get(l as usize) {
                Some(c) => out.extend_from_slice(c),
                None => out.extend(std::iter::repeat_n(T::zero(), 1 << l)),
            }
        }
        Signal::new(out)
    }
}

/// `L_s = max(1, floor(log2(1/ρ)/s))`; `1` when `ρ ≥ 1`.
pub fn truncation_level(s: f64, rho: f64) -> u32 {
    if !(rho < 1.0) || s <= 0.0 {
        return 1;
    }
    let l = ((1.0 / rho).log2() / s).floor();
    // keep 2^{L+1} - 1 addressable
    l.clamp(1.0, 40.0) as u32
}

/// Finite-dimensional rate with constant one: `(√d/n)·min(√(d/(b∧d)), √m)`
/// for a public coin, `(√d/n)·min(d/(b∧d), √m)` for a private one.
pub fn theoretical_rate_finite(n: u64, m: usize, d: usize, b: u32, coin: CoinMode) -> f64 {
    let (n, m, d) = (n as f64, m as f64, d as f64);
    let bd = (b as f64).min(d);
    let factor = match coin {
        CoinMode::Public => (d / bd).sqrt(),
        CoinMode::Private => d / bd,
    };
    d.sqrt() / n * factor.min(m.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    High,
    Intermediate,
    Low,
}

/// Budget regime of the nonparametric rate.
pub fn nonparam_regime(n: u64, m: usize, b: u32, s: f64, coin: CoinMode) -> Regime {
    let e = 2.0 * s + 0.5;
    let (n, m, b) = (n as f64, m as f64, b as f64);
    let high = n.powf(1.0 / e);
    let m_exp = match coin {
        CoinMode::Public => (2.0 * s + 1.0) / e,
        CoinMode::Private => (s + 0.75) / e,
    };
    if b >= high {
        Regime::High
    } else if b >= high / m.powf(m_exp) {
        Regime::Intermediate
    } else {
        Regime::Low
    }
}

/// Minimax nonparametric testing rate `ρ²` with constant one.
pub fn theoretical_rate_nonparam(n: u64, m: usize, b: u32, ball: &SobolevBall, coin: CoinMode) -> f64 {
    let s = ball.s;
    let e = 2.0 * s + 0.5;
    let (nf, mf, bf) = (n as f64, m as f64, b as f64);
    match (nonparam_regime(n, m, b, s, coin), coin) {
        (Regime::High, _) => nf.powf(-2.0 * s / e),
        (Regime::Intermediate, CoinMode::Public) => (bf.sqrt() * nf).powf(-2.0 * s / (2.0 * s + 1.0)),
        (Regime::Intermediate, CoinMode::Private) => (bf * nf).powf(-2.0 * s / (2.0 * s + 1.5)),
        (Regime::Low, _) => (nf / mf.sqrt()).powf(-2.0 * s / e),
    }
}

/// Sample `X̃^j_{0:L} = f̃^L + √(m/n) Z^j` for every machine.
pub fn sample_sequence_observations<T: Real>(
    cfg: &ProblemConfig,
    f: &LeveledSignal<T>,
    level: u32,
    seed: SeedNode,
) -> Result<Dataset<T>> {
    sample_observations(&cfg.with_d(nu(level)), &f.truncated(level), seed)
}

/// The finite-dimensional test run on the first `ν_L` coefficients, with
/// `L = L_s(ρ)` for a design separation `ρ`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonparamTest {
    pub ball: SobolevBall,
    pub level: u32,
    pub protocol: Protocol,
}

impl NonparamTest {
    /// `cfg.d` is ignored; the reduced problem has dimension `ν_L`.
    pub fn new(cfg: &ProblemConfig, ball: SobolevBall, rho: f64, m_alpha: usize) -> Result<Self> {
        ball.validate()?;
        let level = truncation_level(ball.s, rho);
        let reduced = cfg.with_d(nu(level));
        Ok(NonparamTest { ball, level, protocol: Protocol::auto(&reduced, m_alpha)? })
    }

    /// Test designed for the minimax rate of the ball.
    pub fn at_rate(cfg: &ProblemConfig, ball: SobolevBall, m_alpha: usize) -> Result<Self> {
        let rate = theoretical_rate_nonparam(cfg.n, cfg.m, cfg.b, &ball, cfg.coin);
        Self::new(cfg, ball, rate.sqrt(), m_alpha)
    }

    pub fn reduced_config(&self) -> &ProblemConfig {
        self.protocol.config()
    }

    pub fn replicate(&self, f: &LeveledSignal<f64>, seeds: &ReplicationSeeds) -> Result<Replication> {
        self.protocol.replicate(&f.truncated(self.level), seeds)
    }
}

/// Decision of the reduced test on one simulated round.
pub fn run_nonparam_test(
    test: &NonparamTest,
    thresholds: &Thresholds,
    f: &LeveledSignal<f64>,
    seeds: &ReplicationSeeds,
) -> Result<bool> {
    let rep = test.replicate(f, seeds)?;
    test.protocol.decide_statistics(&rep.stats, thresholds, seeds.central)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SobolevAlternative {
    BoundaryFlat,
    LowFrequency,
    RandomDirection,
}

impl SobolevAlternative {
    pub fn label(self) -> &'static str {
        match self {
            SobolevAlternative::BoundaryFlat => "BoundaryFlat",
            SobolevAlternative::LowFrequency => "LowFrequency",
            SobolevAlternative::RandomDirection => "RandomDirection",
        }
    }
}

/// Finest level a generated alternative may occupy (`ν ≈ 3.4·10⁷` coefficients).
pub const MAX_SIGNAL_LEVEL: u32 = 24;

/// Alternative with `‖f‖₂ = ρ` inside the ball.
///
/// `BoundaryFlat` spreads the mass evenly over level `L_s(ρ)`,
/// `LowFrequency` puts it on `f_{00}`, `RandomDirection` is uniform on the
/// sphere of levels `0..=L_s(ρ)`.
pub fn make_sobolev_alternative<T: Real>(
    ball: &SobolevBall,
    rho: f64,
    kind: SobolevAlternative,
    seed: SeedNode,
) -> Result<LeveledSignal<T>> {
    ball.validate()?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let level = truncation_level(ball.s, rho);
    if level > MAX_SIGNAL_LEVEL {
        return Err(Error::Infeasible(format!(
            "alternative at rho = {rho}, s = {} needs level {level} > {MAX_SIGNAL_LEVEL}",
            ball.s
        )));
    }
    let flat: Vec<T> = match kind {
        SobolevAlternative::BoundaryFlat => {
            let mut v = vec![T::zero(); nu(level)];
            v[(1 << level) - 1..].fill(T::one());
            v
        }
        SobolevAlternative::LowFrequency => vec![T::one()],
        SobolevAlternative::RandomDirection => {
            let mut rng = seed.rng();
            (0..nu(level)).map(|_| standard_normal(&mut rng)).collect()
        }
    };
    let scaled = Signal::new(flat).with_norm(T::lit(rho))?;
    let f = LeveledSignal::from_flat(scaled.as_slice())?;
    let sob = f.sobolev_norm(ball.s).to_f64_lossy();
    if sob > ball.r {
        return Err(Error::Infeasible(format!(
            "{} alternative at rho = {rho} has Sobolev norm {sob} > R = {}",
            kind.label(),
            ball.r
        )));
    }
    Ok(f)
}
