//! Public-coin test: sign bits of randomly rotated coordinates.

use crate::error::{Error, Result};
use crate::model::{ProblemConfig, Transcript};
use crate::randomness::OrthogonalFrame;
use crate::scalar::Real;

/// Bits actually sent, `b' = min(b, d)`; excess budget is discarded.
pub fn effective_bits(cfg: &ProblemConfig) -> usize {
    (cfg.b as usize).min(cfg.d)
}

/// `(Y^j)_i = 1{(√(n/m) U X^j)_i > 0}` for `i < bits`.
pub fn encode_bits<T: Real>(
    cfg: &ProblemConfig,
    x: &[T],
    coin: &OrthogonalFrame<T>,
    bits: usize,
) -> Result<Transcript> {
    if coin.dim() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: coin.dim() });
    }
    if coin.rows() < bits {
        return Err(Error::InvalidArgument(format!(
            "coin provides {} rotated directions, {bits} needed",
            coin.rows()
        )));
    }
    let scale = T::lit(cfg.local_snr().sqrt());
    let mut t = Transcript::with_capacity(bits);
    for i in 0..bits {
        let proj: T = coin.row(i).iter().zip(x).map(|(&u, &v)| u * v).sum();
        t.push_bit(scale * proj > T::zero());
    }
    Ok(t)
}

pub fn encode<T: Real>(cfg: &ProblemConfig, x: &[T], coin: Option<&OrthogonalFrame<T>>) -> Result<Transcript> {
    let coin = coin.ok_or_else(|| Error::MissingCoin("T2".into()))?;
    encode_bits(cfg, x, coin, effective_bits(cfg))
}

/// Column sums `(S_II)_i = Σ_j (Y^j)_i`.
pub fn column_counts(transcripts: &[Transcript], bits: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; bits];
    for t in transcripts {
        if t.bit_count() != bits {
            return Err(Error::BitSizeMismatch { expected: bits, found: t.bit_count() });
        }
        for (i, c) in counts.iter_mut().enumerate() {
            *c += t.bit(i) as usize;
        }
    }
    Ok(counts)
}

/// `|(1/(√b' m)) Σ_i ((S_II)_i - m/2)² - √b'/4|` from the column counts.
pub fn statistic_from_counts(m: usize, counts: &[usize]) -> f64 {
    let bits = counts.len() as f64;
    // Σ (S - m/2)² = Σ (2S - m)² / 4, accumulated exactly
    let sum: i128 = counts
        .iter()
        .map(|&s| {
            let dev = 2 * s as i128 - m as i128;
            dev * dev
        })
        .sum();
    (sum as f64 / (4.0 * bits.sqrt() * m as f64) - bits.sqrt() / 4.0).abs()
}

pub fn statistic(transcripts: &[Transcript], bits: usize) -> Result<f64> {
    if transcripts.is_empty() || bits == 0 {
        return Err(Error::InvalidArgument("no transcripts".into()));
    }
    let counts = column_counts(transcripts, bits)?;
    Ok(statistic_from_counts(transcripts.len(), &counts))
}

/// Reject iff the statistic strictly exceeds `kappa`.
pub fn decide(transcripts: &[Transcript], bits: usize, kappa: f64) -> Result<bool> {
    Ok(statistic(transcripts, bits)? > kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoinMode, Signal};
    use crate::randomness::{haar_frame, haar_rotation, sample_observations, SeedNode};
    use crate::stats::normal_cdf;

    fn cfg(m: usize, d: usize, b: u32) -> ProblemConfig {
        ProblemConfig { n: 100, m, d, b, alpha: 0.1, coin: CoinMode::Public }
    }

    #[test]
    fn one_dimensional_sign() {
        let c = cfg(1, 1, 1);
        let u = haar_rotation::<f64>(1, SeedNode::root(0)).unwrap();
        let s = u.entry(0, 0);
        let t = encode(&c, &[0.7 * s], Some(u.as_frame())).unwrap();
        assert!(t.bit(0));
        let t = encode(&c, &[-0.7 * s], Some(u.as_frame())).unwrap();
        assert!(!t.bit(0));
    }

    #[test]
    fn missing_coin() {
        assert!(matches!(encode::<f64>(&cfg(1, 2, 1), &[1.0, 0.0], None), Err(Error::MissingCoin(_))));
    }

    #[test]
    fn excess_budget_discarded() {
        let c = cfg(1, 3, 10);
        assert_eq!(effective_bits(&c), 3);
        let u = haar_frame::<f64>(3, 3, SeedNode::root(1)).unwrap();
        assert_eq!(encode(&c, &[1.0, 2.0, 3.0], Some(&u)).unwrap().bit_count(), 3);
    }

    #[test]
    fn hand_computed_statistic() {
        let ts = vec![Transcript::from_bits([true]); 2];
        assert!((statistic(&ts, 1).unwrap() - 0.25).abs() < 1e-15);
        assert!(decide(&ts, 1, 0.2).unwrap());
        assert!(!decide(&ts, 1, 0.25).unwrap());
        assert!(statistic(&ts, 2).is_err());
    }

    #[test]
    fn conditional_bit_frequency_matches_normal_cdf() {
        // given U, bit i is Ber(Φ(√(n/m) (U f)_i))
        let c = ProblemConfig { n: 40_000, m: 40_000, d: 2, b: 2, alpha: 0.1, coin: CoinMode::Public };
        let f = Signal::new(vec![0.4f64, -0.3]);
        let u = haar_frame::<f64>(2, 2, SeedNode::root(17)).unwrap();
        let uf = u.project(f.as_slice());
        let data = sample_observations(&c, &f, SeedNode::root(18)).unwrap();
        let ts: Vec<_> = data.rows().map(|x| encode(&c, x, Some(&u)).unwrap()).collect();
        let counts = column_counts(&ts, 2).unwrap();
        for i in 0..2 {
            let p = normal_cdf(uf[i]);
            let freq = counts[i] as f64 / c.m as f64;
            let sd = (p * (1.0 - p) / c.m as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * sd, "i={i} freq={freq} p={p}");
        }
    }
}
