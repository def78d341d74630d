//! One-bit private-coin test built on local chi-square p-values, and its
//! single-machine fallback.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ProblemConfig, Transcript};
use crate::randomness::bernoulli;
use crate::scalar::Real;
use crate::stats::chi2_cdf;

/// Local statistic `S^j = (n/m) ‖X^j‖²`, chi-square with `d` degrees of freedom under the null.
pub fn local_statistic<T: Real>(cfg: &ProblemConfig, x: &[T]) -> T {
    let snr = T::lit(cfg.local_snr());
    snr * x.iter().map(|&v| v * v).sum::<T>()
}

/// Emit one bit `Y ~ Ber(F_{χ²_d}(S^j))`.
pub fn encode<T: Real, R: Rng + ?Sized>(cfg: &ProblemConfig, x: &[T], rng: &mut R) -> Result<Transcript> {
    let s = local_statistic(cfg, x);
    let p = chi2_cdf(x.len(), s)?;
    let mut t = Transcript::with_capacity(1);
    t.push_bit(bernoulli(p, rng)?);
    Ok(t)
}

/// `|(1/m)(Σ_j (Y^j - 1/2))² - 1/4|` from the number of ones `k` among `m` bits.
pub fn statistic_from_count(m: usize, ones: usize) -> f64 {
    // (Σ (Y - 1/2))² = (2k - m)² / 4
    let dev = 2 * ones as i64 - m as i64;
    let sq = (dev * dev) as f64;
    (sq / (4.0 * m as f64) - 0.25).abs()
}

pub fn count_ones(transcripts: &[Transcript]) -> Result<usize> {
    transcripts.iter().try_fold(0usize, |acc, t| {
        if t.bit_count() != 1 {
            return Err(Error::BitSizeMismatch { expected: 1, found: t.bit_count() });
        }
        Ok(acc + t.bit(0) as usize)
    })
}

pub fn statistic(transcripts: &[Transcript]) -> Result<f64> {
    if transcripts.is_empty() {
        return Err(Error::InvalidArgument("no transcripts".into()));
    }
    Ok(statistic_from_count(transcripts.len(), count_ones(transcripts)?))
}

/// Reject iff the aggregated statistic is at least `kappa`.
pub fn decide(transcripts: &[Transcript], kappa: f64) -> Result<bool> {
    Ok(statistic(transcripts)? >= kappa)
}

/// Standardized local chi-square statistic `(S¹ - d) / √d` of the single-machine test.
pub fn local_test_statistic<T: Real>(cfg: &ProblemConfig, x: &[T]) -> T {
    let d = T::from_count(x.len());
    (local_statistic(cfg, x) - d) / d.sqrt()
}

/// Single-machine chi-square test `1{(S¹ - d)/√d ≥ κ}`.
pub fn local_decide<T: Real>(cfg: &ProblemConfig, x: &[T], kappa: T) -> bool {
    local_test_statistic(cfg, x) >= kappa
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoinMode;
    use crate::randomness::{sample_observations, SeedNode};
    use crate::model::Signal;

    fn cfg(m: usize, d: usize) -> ProblemConfig {
        ProblemConfig { n: 1000, m, d, b: 1, alpha: 0.1, coin: CoinMode::Private }
    }

    #[test]
    fn zero_observation_sends_zero() {
        let c = cfg(4, 5);
        let mut rng = SeedNode::root(0).rng();
        for _ in 0..500 {
            let t = encode(&c, &[0.0f64; 5], &mut rng).unwrap();
            assert_eq!(t.bit_count(), 1);
            assert!(!t.bit(0));
        }
    }

    #[test]
    fn hand_computed_statistics() {
        let all = vec![Transcript::from_bits([true]); 4];
        assert!((statistic(&all).unwrap() - 0.75).abs() < 1e-15);
        assert!(decide(&all, 0.74).unwrap());
        assert!(!decide(&all, 0.76).unwrap());
        let half: Vec<_> = [true, true, false, false].iter().map(|&b| Transcript::from_bits([b])).collect();
        assert!((statistic(&half).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn wrong_size_rejected() {
        let ts = vec![Transcript::from_bits([true, false])];
        assert!(matches!(statistic(&ts), Err(Error::BitSizeMismatch { .. })));
    }

    #[test]
    fn null_bits_are_fair() {
        let c = cfg(20_000, 8);
        let data = sample_observations(&c, &Signal::<f64>::zeros(8), SeedNode::root(3)).unwrap();
        let mut rng = SeedNode::root(4).rng();
        let ones = data.rows().filter(|x| encode(&c, x, &mut rng).unwrap().bit(0)).count();
        let sd = (0.25 / c.m as f64).sqrt();
        assert!((ones as f64 / c.m as f64 - 0.5).abs() < 3.0 * sd);
    }

    #[test]
    fn local_test_accepts_zero() {
        let c = cfg(1, 16);
        assert!((local_test_statistic(&c, &[0.0f64; 16]) + 4.0).abs() < 1e-12);
        assert!(!local_decide(&c, &[0.0f64; 16], -3.9));
        assert!(local_decide(&c, &[0.0f64; 16], -4.0));
    }
}
