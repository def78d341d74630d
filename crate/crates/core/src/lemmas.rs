//! Grid and Monte Carlo checks of the numeric inequality lemmas.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::randomness::SeedNode;
use crate::stats::{chi2_cdf, chi2_tail_bound, gauss_max_tail_bound, normal_cdf, normal_gap_lower_bound};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// `chi2_cdf(df, x)` from 40-digit incomplete gamma evaluations.
pub const CHI2_REFERENCE: [(usize, f64, f64); 13] = [
    (1, 0.5, 0.52049987781304653768),
    (1, 1.0, 0.68268949213708589717),
    (2, 3.0, 0.77686983985157017107),
    (3, 7.5, 0.94244154802736359303),
    (5, 0.1, 0.00016231661192261503623),
    (10, 10.0, 0.55950671493478758856),
    (10, 25.0, 0.9946544945128659357),
    (64, 50.0, 0.10006791703272422051),
    (64, 90.0, 0.98221762977825865632),
    (100, 100.0, 0.51880831547204328189),
    (1000, 1100.0, 0.98538559187370480595),
    (2047, 2000.0, 0.23275217562448128054),
    (100000, 100500.0, 0.86814518839661622151),
];

fn three_sigma(freq: f64, draws: usize) -> f64 {
    3.0 * (freq * (1.0 - freq) / draws as f64).sqrt()
}

/// `(Φ(x) - 1/2)² ≥ min(x², 1)/12` on `[-10, 10]` with step `1e-3`, no tolerance.
pub fn check_normal_gap() -> LemmaCheck {
    let violations: Vec<f64> = (-10_000..=10_000)
        .map(|k| k as f64 * 1e-3)
        .filter(|&x| (normal_cdf(x) - 0.5).powi(2) < normal_gap_lower_bound(x))
        .collect();
    LemmaCheck {
        name: "normal-gap".into(),
        passed: violations.is_empty(),
        detail: format!("20001 grid points, {} violations", violations.len()),
    }
}

/// `P(max_i Z_i² ≥ x) ≤ 2d e^{-x/4}` against `draws` simulated maxima.
pub fn check_gauss_max(draws: usize, seed: SeedNode) -> LemmaCheck {
    let mut worst = f64::NEG_INFINITY;
    for (k, (d, x)) in [(1usize, 4.0f64), (4, 8.0), (16, 16.0), (64, 30.0)].into_iter().enumerate() {
        let mut rng = seed.child("case", k as u64).rng();
        let hits = (0..draws)
            .filter(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).fold(0.0, f64::max) >= x)
            .count();
        let freq = hits as f64 / draws as f64;
        worst = worst.max(freq - gauss_max_tail_bound(d, x) - three_sigma(freq, draws));
    }
    LemmaCheck {
        name: "gaussian-max".into(),
        passed: worst <= 0.0,
        detail: format!("largest excess over bound + 3σ: {worst:.3e}"),
    }
}

/// Chernoff bounds on both chi-square tails against simulated frequencies.
pub fn check_chi2_tails(draws: usize, seed: SeedNode) -> LemmaCheck {
    let mut worst = f64::NEG_INFINITY;
    for (i, df) in [1usize, 2, 10, 100].into_iter().enumerate() {
        let chi = ChiSquared::new(df as f64).expect("positive df");
        for (j, c) in [0.25f64, 0.5, 2.0, 4.0].into_iter().enumerate() {
            let mut rng = seed.child("case", (4 * i + j) as u64).rng();
            let cut = c * df as f64;
            let hits = (0..draws)
                .filter(|_| {
                    let v: f64 = chi.sample(&mut rng);
                    if c > 1.0 { v >= cut } else { v <= cut }
                })
                .count();
            let freq = hits as f64 / draws as f64;
            let bound = chi2_tail_bound(df, c).expect("c > 0");
            worst = worst.max(freq - bound - three_sigma(freq, draws));
        }
    }
    LemmaCheck {
        name: "chi2-tails".into(),
        passed: worst <= 0.0,
        detail: format!("largest excess over bound + 3σ: {worst:.3e}"),
    }
}

/// Largest absolute error of `chi2_cdf` on [`CHI2_REFERENCE`], accepted below `1e-10`.
pub fn check_chi2_reference() -> LemmaCheck {
    let worst = CHI2_REFERENCE
        .iter()
        .map(|&(df, x, want)| chi2_cdf::<f64>(df, x).map(|v| (v - want).abs()).unwrap_or(f64::INFINITY))
        .fold(0.0f64, f64::max);
    LemmaCheck {
        name: "chi2-cdf-reference".into(),
        passed: worst <= 1e-10,
        detail: format!("max abs error {worst:.2e}"),
    }
}

pub fn lemma_suite(draws: usize, seed: SeedNode) -> Vec<LemmaCheck> {
    vec![
        check_normal_gap(),
        check_gauss_max(draws, seed.child("gaussian-max", 0)),
        check_chi2_tails(draws, seed.child("chi2-tails", 0)),
        check_chi2_reference(),
    ]
}
