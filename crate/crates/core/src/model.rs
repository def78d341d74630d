//! Domain types shared by every protocol and harness.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Source of randomness available to the machines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoinMode {
    Private,
    Public,
}

impl fmt::Display for CoinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoinMode::Private => f.write_str("Private"),
            CoinMode::Public => f.write_str("Public"),
        }
    }
}

/// One finite-dimensional distributed testing instance.
///
/// `n` is the total signal-to-noise ratio, so each of the `m` machines sees
/// noise of standard deviation `sqrt(m / n)` per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub n: u64,
    pub m: usize,
    pub d: usize,
    pub b: u32,
    pub alpha: f64,
    pub coin: CoinMode,
}

impl ProblemConfig {
    pub fn new(n: u64, m: usize, d: usize, b: u32, alpha: f64, coin: CoinMode) -> Result<Self> {
        let cfg = ProblemConfig { n, m, d, b, alpha, coin };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidConfig("n must be ≥ 1".into()));
        }
        if self.m < 1 {
            return Err(Error::InvalidConfig("m must be ≥ 1".into()));
        }
        if self.d < 1 {
            return Err(Error::InvalidConfig("d must be ≥ 1".into()));
        }
        if self.b < 1 {
            return Err(Error::InvalidConfig("b must be ≥ 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0,1)".into()));
        }
        Ok(())
    }

    /// Per-coordinate noise standard deviation `sqrt(m/n)`.
    pub fn noise_sd<T: Real>(&self) -> T {
        (T::from_count(self.m) / T::from_u64(self.n).expect("n representable")).sqrt()
    }

    /// `n / m`, the local signal-to-noise ratio.
    pub fn local_snr(&self) -> f64 {
        self.n as f64 / self.m as f64
    }

    pub fn with_d(&self, d: usize) -> Self {
        ProblemConfig { d, ..*self }
    }

    /// Stable textual key used by threshold tables.
    pub fn fingerprint(&self) -> String {
        format!(
            "n={}|m={}|d={}|b={}|alpha={}|coin={}",
            self.n, self.m, self.d, self.b, self.alpha, self.coin
        )
    }
}

/// A finite-dimensional signal `f ∈ R^d`, stored densely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal<T> {
    coeffs: Vec<T>,
}

impl<T: Real> Signal<T> {
    pub fn new(coeffs: Vec<T>) -> Self {
        Signal { coeffs }
    }

    pub fn zeros(d: usize) -> Self {
        Signal { coeffs: vec![T::zero(); d] }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.coeffs
    }

    pub fn into_vec(self) -> Vec<T> {
        self.coeffs
    }

    pub fn l2_norm_sq(&self) -> T {
        self.coeffs.iter().map(|&c| c * c).sum()
    }

    pub fn l2_norm(&self) -> T {
        self.l2_norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn scaled(&self, factor: T) -> Self {
        Signal { coeffs: self.coeffs.iter().map(|&c| c * factor).collect() }
    }

    /// Rescale to Euclidean norm exactly `rho` (never below it after rounding).
    pub fn with_norm(&self, rho: T) -> Result<Self> {
        let norm = self.l2_norm();
        if rho.is_zero() {
            return Ok(Signal::zeros(self.dim()));
        }
        if !(norm > T::zero()) {
            return Err(Error::InvalidArgument("cannot rescale the zero signal".into()));
        }
        let mut scale = rho / norm;
        let mut out = self.scaled(scale);
        // summation rounding can leave the norm short of rho; grow the scale by
        // the observed deficit, at least 2ε per step (1 + ε rounds away when scale < 1)
        let step = T::one() + T::lit(2.0) * T::epsilon();
        let mut guard = 0;
        while out.l2_norm() < rho && guard < 64 {
            let ratio = rho / out.l2_norm();
            scale = scale * if ratio > step { ratio } else { step };
            out = self.scaled(scale);
            guard += 1;
        }
        Ok(out)
    }
}

/// Observations of all machines, row `j` being machine `j`'s `X^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    m: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Real> Dataset<T> {
    pub fn from_rows(m: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != m * d {
            return Err(Error::DimensionMismatch { expected: m * d, found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset entries must be finite".into()));
        }
        Ok(Dataset { m, d, data })
    }

    pub fn machines(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, j: usize) -> &[T] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.d.max(1)).take(self.m)
    }
}

/// The payload one machine sends to the central machine.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transcript {
    words: Vec<u64>,
    len: usize,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Transcript { words: Vec::with_capacity(bits.div_ceil(64)), len: 0 }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut t = Transcript::new();
        for bit in bits {
            t.push_bit(bit);
        }
        t
    }

    /// Exact number of bits carried.
    pub fn bit_count(&self) -> usize {
        self.len
    }

    pub fn push_bit(&mut self, bit: bool) {
        let (w, o) = (self.len / 64, self.len % 64);
        if o == 0 {
            self.words.push(0);
        }
        if bit {
            self.words[w] |= 1 << o;
        }
        self.len += 1;
    }

    /// Append the low `width` bits of `value`, least significant first.
    pub fn push_uint(&mut self, value: u64, width: u32) {
        debug_assert!(width == 64 || value < (1u64 << width), "value does not fit in width");
        for k in 0..width {
            self.push_bit((value >> k) & 1 == 1);
        }
    }

    pub fn append(&mut self, other: &Transcript) {
        for i in 0..other.len {
            self.push_bit(other.bit(i));
        }
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bit(i))
    }

    pub fn read_uint(&self, offset: usize, width: u32) -> u64 {
        (0..width as usize).fold(0u64, |acc, k| acc | ((self.bit(offset + k) as u64) << k))
    }

    /// Index of this transcript in the alphabet `{0,1}^len` (requires `len <= 64`).
    pub fn as_index(&self) -> u64 {
        self.read_uint(0, self.len as u32)
    }
}

/// Monte Carlo estimate of the testing risk of one protocol at one separation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub type1: f64,
    pub type2_by_alternative: BTreeMap<String, f64>,
    pub worst_risk: f64,
    pub mc_radius: f64,
    pub reps: usize,
}

impl RiskReport {
    /// Assemble a report; `worst_risk` and `mc_radius` follow from the estimates.
    pub fn new(type1: f64, type2_by_alternative: BTreeMap<String, f64>, reps: usize) -> Self {
        let worst = type2_by_alternative.values().cloned().fold(0.0f64, f64::max);
        let radius = std::iter::once(type1)
            .chain(type2_by_alternative.values().cloned())
            .map(|p| binomial_radius(p, reps))
            .fold(0.0f64, f64::max);
        RiskReport {
            type1,
            worst_risk: type1 + worst,
            type2_by_alternative,
            mc_radius: radius,
            reps,
        }
    }

    pub fn worst_type2(&self) -> f64 {
        self.type2_by_alternative.values().cloned().fold(0.0f64, f64::max)
    }
}

/// Half-width of the normal-approximation 95% binomial confidence interval.
pub fn binomial_radius(p: f64, reps: usize) -> f64 {
    if reps == 0 {
        return f64::INFINITY;
    }
    1.96 * (p * (1.0 - p) / reps as f64).sqrt()
}
