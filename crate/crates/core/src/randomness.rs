//! Deterministic, counter-based randomness.
//!
//! Every random stream is addressed by a [`SeedNode`], a value obtained by
//! hashing a derivation path (`master → ("rep", r) → ("machine", j) → …`).
//! Streams therefore do not depend on the order in which they are consumed,
//! which keeps parallel Monte Carlo runs bitwise reproducible for any number
//! of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ProblemConfig, Signal};
use crate::scalar::Real;

/// Generator behind every seed node.
pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// A node of the seed derivation tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedNode {
    master: u64,
    key: u64,
    depth: u32,
}

impl SeedNode {
    pub fn root(master_seed: u64) -> Self {
        SeedNode { master: master_seed, key: mix64(master_seed ^ GOLDEN), depth: 0 }
    }

    /// Child stream addressed by `(label, index)`; a pure function of the path.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let h = mix64(self.key ^ label_hash(label));
        let key = mix64(h.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)));
        SeedNode { master: self.master, key, depth: self.depth + 1 }
    }

    pub fn master_seed(&self) -> u64 {
        self.master
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn rng(&self) -> SimRng {
        SimRng::seed_from_u64(self.key)
    }
}

/// Draw a standard normal variate.
#[inline]
pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}

/// Uniform variate on `[0, 1)`.
#[inline]
pub fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let u: f64 = rng.random();
    T::lit(u)
}

/// `Ber(p)` draw; errors when `p` lies outside `[0, 1]`.
pub fn bernoulli<T: Real, R: Rng + ?Sized>(p: T, rng: &mut R) -> Result<bool> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::InvalidProbability(p.to_f64_lossy()));
    }
    Ok(uniform::<T, R>(rng) < p)
}

/// Fill `out` with machine `j`'s observation `f + sqrt(m/n) Z^j`.
///
/// The stream is `seed.child("machine", j)`, so a single row can be drawn
/// without materializing the rest of the dataset.
pub fn sample_observation_row<T: Real>(
    cfg: &ProblemConfig,
    f: &Signal<T>,
    seed: SeedNode,
    j: usize,
    out: &mut [T],
) -> Result<()> {
    if f.dim() != out.len() {
        return Err(Error::DimensionMismatch { expected: out.len(), found: f.dim() });
    }
    let sigma = cfg.noise_sd::<T>();
    let mut rng = seed.child("machine", j as u64).rng();
    for (o, &fi) in out.iter_mut().zip(f.as_slice()) {
        *o = fi + sigma * standard_normal::<T, _>(&mut rng);
    }
    Ok(())
}

/// Sample the full dataset `X^j = f + sqrt(m/n) Z^j`, `j = 0..m`.
pub fn sample_observations<T: Real>(cfg: &ProblemConfig, f: &Signal<T>, seed: SeedNode) -> Result<Dataset<T>> {
    if f.dim() != cfg.d {
        return Err(Error::DimensionMismatch { expected: cfg.d, found: f.dim() });
    }
    let mut data = vec![T::zero(); cfg.m * cfg.d];
    for (j, row) in data.chunks_exact_mut(cfg.d).enumerate() {
        sample_observation_row(cfg, f, seed, j, row)?;
    }
    Dataset::from_rows(cfg.m, cfg.d, data)
}

/// The leading `k` rows of a `d × d` orthogonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalFrame<T> {
    d: usize,
    k: usize,
    rows: Vec<T>,
}

impl<T: Real> OrthogonalFrame<T> {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    /// `(U x)_i` for the stored rows.
    pub fn project_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.d);
        for (i, o) in out.iter_mut().enumerate().take(self.k) {
            *o = self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
    }

    pub fn project(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.k];
        self.project_into(x, &mut out);
        out
    }

    /// Largest absolute deviation of `U Uᵀ` from the identity.
    pub fn orthogonality_defect(&self) -> T {
        let mut worst = T::zero();
        for a in 0..self.k {
            for b in 0..self.k {
                let dot: T = self.row(a).iter().zip(self.row(b)).map(|(&x, &y)| x * y).sum();
                let target = if a == b { T::one() } else { T::zero() };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// A full `d × d` orthogonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalMatrix<T>(OrthogonalFrame<T>);

impl<T: Real> OrthogonalMatrix<T> {
    pub fn dim(&self) -> usize {
        self.0.d
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        self.0.rows[i * self.0.d + j]
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.0.project(x)
    }

    /// Leading `k` rows as a frame.
    pub fn leading_rows(&self, k: usize) -> OrthogonalFrame<T> {
        let k = k.min(self.0.d);
        OrthogonalFrame { d: self.0.d, k, rows: self.0.rows[..k * self.0.d].to_vec() }
    }

    pub fn as_frame(&self) -> &OrthogonalFrame<T> {
        &self.0
    }

    /// `max |UᵀU - I|`.
    pub fn orthogonality_defect(&self) -> T {
        self.0.orthogonality_defect()
    }
}

/// Haar-distributed rotation on `R^d`.
///
/// QR-decomposes a standard Gaussian matrix by (re-orthogonalized) Gram-Schmidt.
/// Gram-Schmidt produces an `R` factor with positive diagonal, which is the
/// sign-corrected factorization, so `Q` is exactly Haar. The matrix returned is
/// `Qᵀ` (also Haar), whose rows are the Gram-Schmidt vectors.
pub fn haar_rotation<T: Real>(d: usize, seed: SeedNode) -> Result<OrthogonalMatrix<T>> {
    Ok(OrthogonalMatrix(haar_frame(d, d, seed)?))
}

/// First `k` rows of [`haar_rotation`]`(d, seed)`, at `O(d k²)` cost.
pub fn haar_frame<T: Real>(d: usize, k: usize, seed: SeedNode) -> Result<OrthogonalFrame<T>> {
    if d < 1 {
        return Err(Error::InvalidArgument("rotation dimension must be ≥ 1".into()));
    }
    if k > d {
        return Err(Error::InvalidArgument(format!("cannot take {k} rows of a {d}-dimensional rotation")));
    }
    let mut rng = seed.rng();
    let mut rows: Vec<T> = Vec::with_capacity(k * d);
    let mut v = vec![T::zero(); d];
    for c in 0..k {
        for x in v.iter_mut() {
            *x = standard_normal::<T, _>(&mut rng);
        }
        for _pass in 0..2 {
            for p in 0..c {
                let q = &rows[p * d..(p + 1) * d];
                let r: T = q.iter().zip(&v).map(|(&a, &b)| a * b).sum();
                for (x, &qi) in v.iter_mut().zip(q) {
                    *x -= r * qi;
                }
            }
        }
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        rows.extend(v.iter().map(|&x| x / norm));
    }
    Ok(OrthogonalFrame { d, k, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoinMode;

    fn cfg(n: u64, m: usize, d: usize) -> ProblemConfig {
        ProblemConfig { n, m, d, b: 1, alpha: 0.05, coin: CoinMode::Private }
    }

    #[test]
    fn child_is_pure_and_path_sensitive() {
        let root = SeedNode::root(7);
        assert_eq!(root.child("rep", 3), root.child("rep", 3));
        assert_ne!(root.child("rep", 3), root.child("rep", 4));
        assert_ne!(root.child("rep", 3), root.child("machine", 3));
        assert_ne!(SeedNode::root(7).child("a", 0), SeedNode::root(8).child("a", 0));
        assert_eq!(root.child("rep", 3).child("x", 1).depth(), 2);
        let a: Vec<u64> = (0..5).map(|_| 0).scan(root.child("s", 0).rng(), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..5).map(|_| 0).scan(root.child("s", 0).rng(), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sibling_streams_uncorrelated() {
        let root = SeedNode::root(11);
        let n = 200_000;
        let mut ra = root.child("machine", 0).rng();
        let mut rb = root.child("machine", 1).rng();
        let mut s = 0.0;
        for _ in 0..n {
            let a: f64 = standard_normal(&mut ra);
            let b: f64 = standard_normal(&mut rb);
            s += a * b;
        }
        let corr = s / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr = {corr}");
    }

    #[test]
    fn bernoulli_edges_and_errors() {
        let mut rng = SeedNode::root(1).rng();
        for _ in 0..1000 {
            assert!(!bernoulli(0.0f64, &mut rng).unwrap());
            assert!(bernoulli(1.0f64, &mut rng).unwrap());
        }
        assert!(bernoulli(1.5f64, &mut rng).is_err());
        assert!(bernoulli(-0.1f64, &mut rng).is_err());
        assert!(bernoulli(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn bernoulli_frequency() {
        let mut rng = SeedNode::root(2).rng();
        let n = 100_000;
        let hits = (0..n).filter(|_| bernoulli(0.3f64, &mut rng).unwrap()).count();
        let sd = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.3).abs() < 3.0 * sd);
    }

    #[test]
    fn zero_signal_rows_are_standard_normal() {
        let c = cfg(10, 10, 6);
        let reps = 20_000;
        let data = sample_observations(&ProblemConfig { m: reps, n: reps as u64, ..c }, &Signal::<f64>::zeros(6), SeedNode::root(5))
            .unwrap();
        for i in 0..6 {
            let mean: f64 = data.rows().map(|r| r[i]).sum::<f64>() / reps as f64;
            assert!(mean.abs() < 4.0 / (reps as f64).sqrt());
        }
    }

    #[test]
    fn spike_mean_recovered() {
        let mut f = vec![0.0f64; 3];
        f[0] = 5.0;
        let c = ProblemConfig { n: 1_000_000, m: 5000, d: 3, b: 1, alpha: 0.1, coin: CoinMode::Private };
        let data = sample_observations(&c, &Signal::new(f), SeedNode::root(6)).unwrap();
        let mean: f64 = data.rows().map(|r| r[0]).sum::<f64>() / 5000.0;
        // sd of mean = sqrt(m/n)/sqrt(m) = 1e-3
        assert!((mean - 5.0).abs() < 5e-3);
    }

    #[test]
    fn dimension_mismatch() {
        let c = cfg(10, 2, 4);
        assert!(matches!(
            sample_observations(&c, &Signal::<f64>::zeros(3), SeedNode::root(0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn haar_orthogonal_and_prefix_consistent() {
        for d in [1usize, 2, 5, 32, 100] {
            let u: OrthogonalMatrix<f64> = haar_rotation(d, SeedNode::root(d as u64)).unwrap();
            assert!(u.orthogonality_defect() < 1e-10);
            let k = d.div_ceil(3);
            let f: OrthogonalFrame<f64> = haar_frame(d, k, SeedNode::root(d as u64)).unwrap();
            assert_eq!(f, u.leading_rows(k));
        }
        assert!(haar_rotation::<f64>(0, SeedNode::root(0)).is_err());
    }

    #[test]
    fn haar_one_dimensional_signs() {
        let root = SeedNode::root(99);
        let n = 20_000;
        let plus = (0..n)
            .filter(|&r| {
                let u: OrthogonalMatrix<f64> = haar_rotation(1, root.child("rep", r)).unwrap();
                let e = u.entry(0, 0);
                assert!(e == 1.0 || e == -1.0);
                e > 0.0
            })
            .count();
        let sd = (0.25 / n as f64).sqrt();
        assert!((plus as f64 / n as f64 - 0.5).abs() < 4.0 * sd);
    }
}
