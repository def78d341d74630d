//! Special functions and the closed-form tail bounds used as numeric oracles.
//!
//! Everything here is a pure function, generic over [`Real`].

use crate::error::{Error, Result};
use crate::scalar::Real;

const MAX_ITER: usize = 200_000;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // reflection
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS_COEF[0]);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::from_count(i));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// `ln Γ(a) - [(a - 1/2) ln a - a + ln(2π)/2]`, the remainder of Stirling's formula.
fn stirling_remainder<T: Real>(a: T) -> T {
    if a >= T::lit(15.0) {
        let inv = a.recip();
        let inv2 = inv * inv;
        inv * (T::lit(1.0 / 12.0)
            - inv2
                * (T::lit(1.0 / 360.0)
                    - inv2 * (T::lit(1.0 / 1260.0) - inv2 * T::lit(1.0 / 1680.0))))
    } else {
        ln_gamma(a) - ((a - T::lit(0.5)) * a.ln() - a + T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// `ln(x^a e^{-x} / Γ(a))`, computed without the cancellation of the naive form.
fn ln_gamma_prefactor<T: Real>(a: T, x: T) -> T {
    let t = x / a;
    let tm1 = t - T::one();
    // a (ln t - t + 1) = -a * (tm1 - ln(1 + tm1))
    let phi = tm1 - tm1.ln_1p();
    -a * phi + T::lit(0.5) * a.ln() - T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) - stirling_remainder(a)
}

/// Regularized incomplete gamma pair `(P(a, x), Q(a, x))`.
///
/// Series for `x < a + 1`, Lentz continued fraction otherwise.
pub fn gamma_pq<T: Real>(a: T, x: T) -> Result<(T, T)> {
    if !(a > T::zero()) {
        return Err(Error::InvalidArgument(format!("gamma shape must be positive, got {a}")));
    }
    if x.is_nan() {
        return Err(Error::InvalidArgument("gamma argument is NaN".into()));
    }
    if x <= T::zero() {
        return Ok((T::zero(), T::one()));
    }
    if x.is_infinite() {
        return Ok((T::one(), T::zero()));
    }
    let eps = T::epsilon();
    let ln_pre = ln_gamma_prefactor(a, x);
    if x < a + T::one() {
        // P(a,x) = x^a e^-x / Γ(a+1) * Σ x^n / ((a+1)...(a+n))
        let mut term = T::one();
        let mut sum = T::one();
        let mut denom = a;
        for _ in 0..MAX_ITER {
            denom += T::one();
            term *= x / denom;
            sum += term;
            if term < sum * eps {
                break;
            }
        }
        let p = (ln_pre - a.ln()).exp() * sum;
        let p = p.min(T::one());
        Ok((p, T::one() - p))
    } else {
        let tiny = T::min_positive_value() / eps;
        let mut b = x + T::one() - a;
        let mut c = tiny.recip();
        let mut d = b.recip();
        let mut h = d;
        for i in 1..MAX_ITER {
            let fi = T::from_count(i);
            let an = -fi * (fi - a);
            b += T::lit(2.0);
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = d.recip();
            let delta = d * c;
            h *= delta;
            if (delta - T::one()).abs() < eps {
                break;
            }
        }
        let q = (ln_pre.exp() * h).min(T::one());
        Ok((T::one() - q, q))
    }
}

/// Cumulative distribution function of the chi-square law with `df` degrees of freedom.
pub fn chi2_cdf<T: Real>(df: usize, x: T) -> Result<T> {
    if df < 1 {
        return Err(Error::InvalidArgument("chi-square needs df >= 1".into()));
    }
    if x <= T::zero() {
        return Ok(T::zero());
    }
    let half = T::lit(0.5);
    Ok(gamma_pq(T::from_count(df) * half, x * half)?.0)
}

/// Upper tail `P(χ²_df > x)`, accurate far into the tail.
pub fn chi2_sf<T: Real>(df: usize, x: T) -> Result<T> {
    if df < 1 {
        return Err(Error::InvalidArgument("chi-square needs df >= 1".into()));
    }
    if x <= T::zero() {
        return Ok(T::one());
    }
    let half = T::lit(0.5);
    Ok(gamma_pq(T::from_count(df) * half, x * half)?.1)
}

/// Quantile of the chi-square law: the `x` with `chi2_cdf(df, x) = p`.
pub fn chi2_quantile<T: Real>(df: usize, p: T) -> Result<T> {
    if !(p >= T::zero() && p < T::one()) {
        return Err(Error::InvalidProbability(p.to_f64_lossy()));
    }
    if p == T::zero() {
        return Ok(T::zero());
    }
    let mut lo = T::zero();
    let mut hi = T::from_count(df).max(T::one());
    while chi2_cdf(df, hi)? < p {
        lo = hi;
        hi = hi * T::lit(2.0);
    }
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(df, mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * T::lit(0.5))
}

/// Complementary error function.
///
/// Positive-term series for `|z| < 2.5`, continued fraction beyond.
pub fn erfc<T: Real>(z: T) -> T {
    if z < T::zero() {
        return T::lit(2.0) - erfc(-z);
    }
    let two = T::lit(2.0);
    let sqrt_pi = T::lit(std::f64::consts::PI.sqrt());
    if z < T::lit(2.5) {
        // erf z = 2/√π e^{-z²} Σ 2^n z^{2n+1} / (2n+1)!!
        let z2 = z * z;
        let mut term = z;
        let mut sum = z;
        let mut k = T::one();
        for _ in 0..MAX_ITER {
            k += two;
            term *= two * z2 / k;
            sum += term;
            if term < sum * T::epsilon() {
                break;
            }
        }
        T::one() - two / sqrt_pi * (-z2).exp() * sum
    } else {
        // erfc z = e^{-z²}/√π · 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
        let tiny = T::min_positive_value() / T::epsilon();
        let mut f = z;
        let mut c = z;
        let mut d = T::zero();
        for i in 1..MAX_ITER {
            let an = T::from_count(i) * T::lit(0.5);
            d = z + an * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = z + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = d.recip();
            let delta = c * d;
            f *= delta;
            if (delta - T::one()).abs() < T::epsilon() {
                break;
            }
        }
        (-z * z).exp() / (sqrt_pi * f)
    }
}

/// Standard normal cumulative distribution function Φ.
pub fn normal_cdf<T: Real>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    let z = x * T::lit(std::f64::consts::FRAC_1_SQRT_2);
    if x < T::zero() {
        T::lit(0.5) * erfc(-z)
    } else {
        T::one() - T::lit(0.5) * erfc(z)
    }
}

/// Lower bound `min(x², 1) / 12` on `(Φ(x) - 1/2)²`.
pub fn normal_gap_lower_bound<T: Real>(x: T) -> T {
    (x * x).min(T::one()) / T::lit(12.0)
}

/// Chernoff bound `exp(-df (c - 1 - ln c) / 2)` on `P(χ²_df ≥ c·df)` for `c > 1`
/// and on `P(χ²_df ≤ c·df)` for `c < 1`.
pub fn chi2_tail_bound<T: Real>(df: usize, c: T) -> Result<T> {
    if !(c > T::zero()) {
        return Err(Error::InvalidArgument(format!("chi-square tail bound needs c > 0, got {c}")));
    }
    let rate = c - T::one() - c.ln();
    Ok((-T::from_count(df) * rate * T::lit(0.5)).exp())
}

/// Bound `2d e^{-x/4}` on `P(max_i Z_i² ≥ x)` for `d` iid standard normals.
pub fn gauss_max_tail_bound<T: Real>(d: usize, x: T) -> T {
    T::lit(2.0) * T::from_count(d) * (-x / T::lit(4.0)).exp()
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Probability mass function of `Binomial(n, 1/2)` as a dense vector, computed in log space.
pub fn binomial_half_pmf(n: u64) -> Vec<f64> {
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    (0..=n).map(|k| (ln_binomial(n, k) + ln_half_n).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_two_df_closed_form() {
        let x = 2.0 * std::f64::consts::LN_2;
        assert!((chi2_cdf(2, x).unwrap() - 0.5).abs() < 1e-14);
        for &x in &[0.1, 1.0, 5.0, 30.0] {
            let exact = 1.0 - (-x / 2.0f64).exp();
            assert!((chi2_cdf(2, x).unwrap() - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn chi2_at_zero_and_negative() {
        assert_eq!(chi2_cdf(7, 0.0).unwrap(), 0.0);
        assert_eq!(chi2_cdf(7, -3.0).unwrap(), 0.0);
        assert!(chi2_cdf(0, 1.0f64).is_err());
    }

    #[test]
    fn chi2_one_df_matches_normal_identity() {
        // P(χ²_1 ≤ x) = 2Φ(√x) - 1, with Φ evaluated on the independent erfc route
        for &x in &[0.01f64, 0.5, 1.0, 2.0, 9.0, 25.0] {
            let via_normal = 2.0 * normal_cdf(f64::sqrt(x)) - 1.0;
            assert!((chi2_cdf(1, x).unwrap() - via_normal).abs() < 1e-13, "x={x}");
        }
        assert!((chi2_cdf(1, 1.0f64).unwrap() - 0.682_689_492_137_085_9).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0f64), 0.5);
        assert!((normal_cdf(0.5f64) - 0.691_462_461_274_013_1).abs() < 1e-13);
        assert!((normal_cdf(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-13);
        assert!((normal_cdf(-3.0f64) - 0.001_349_898_031_630_094_6).abs() < 1e-15);
        assert_eq!(normal_cdf(40.0f64), 1.0);
        assert!(normal_cdf(-40.0f64) < 1e-300);
    }

    #[test]
    fn normal_cdf_f32() {
        assert!((normal_cdf(0.5f32) - 0.691_462_46).abs() < 1e-6);
    }

    #[test]
    fn gap_bound_examples() {
        assert_eq!(normal_gap_lower_bound(0.0), 0.0);
        assert_eq!(normal_gap_lower_bound(2.0), 1.0 / 12.0);
        let lhs = (normal_cdf(0.5) - 0.5f64).powi(2);
        assert!((lhs - 0.036_66).abs() < 1e-4);
        assert!(lhs >= normal_gap_lower_bound(0.5));
    }

    #[test]
    fn chi2_tail_bound_examples() {
        assert_eq!(chi2_tail_bound(10, 1.0f64).unwrap(), 1.0);
        assert!((chi2_tail_bound(10, 2.0f64).unwrap() - 0.215_6).abs() < 1e-3);
        assert!((chi2_tail_bound(10, 0.5f64).unwrap() - 0.380_5).abs() < 1e-3);
        assert!(chi2_tail_bound(10, 0.0f64).is_err());
        assert!(chi2_tail_bound(10, -1.0f64).is_err());
    }

    #[test]
    fn gauss_max_bound_examples() {
        assert!((gauss_max_tail_bound(1, 40.0) - 2.0 * (-10.0f64).exp()).abs() < 1e-18);
        assert!((gauss_max_tail_bound(16, 16.0) - 32.0 * (-4.0f64).exp()).abs() < 1e-12);
        assert!(gauss_max_tail_bound(4, 4.0) > 1.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &df in &[1usize, 3, 64, 500] {
            for &p in &[0.01f64, 0.5, 0.9, 0.999] {
                let q = chi2_quantile(df, p).unwrap();
                assert!((chi2_cdf(df, q).unwrap() - p).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        for n in [1u64, 4, 63, 1000] {
            let s: f64 = binomial_half_pmf(n).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        let p4 = binomial_half_pmf(4);
        assert!((p4[2] - 6.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0f64;
        for k in 1..30u32 {
            assert!((ln_gamma(k as f64) - fact.ln()).abs() < 1e-12 * fact.ln().abs().max(1.0));
            fact *= k as f64;
        }
    }
}
