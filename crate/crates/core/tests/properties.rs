use distest::model::Transcript;
use distest::nonparametric::{
    make_sobolev_alternative, theoretical_rate_nonparam, LeveledSignal, SobolevAlternative,
};
use distest::randomness::haar_rotation;
use distest::stats::chi2_cdf;
use distest::{CoinMode, SeedNode, SobolevBall};
use proptest::prelude::*;

fn leveled(max_level: u32) -> impl Strategy<Value = LeveledSignal<f64>> {
    let total = (1usize << (max_level + 1)) - 1;
    prop::collection::vec(-1.0f64..1.0, total).prop_map(|flat| LeveledSignal::from_flat(&flat).unwrap())
}

fn coin() -> impl Strategy<Value = CoinMode> {
    prop_oneof![Just(CoinMode::Private), Just(CoinMode::Public)]
}

proptest! {
    #[test]
    fn sobolev_tail_is_controlled(f in leveled(6), s in 0.2f64..3.0, r in 0.1f64..5.0) {
        let norm = f.sobolev_norm(s);
        prop_assume!(norm > 0.0);
        // rescale onto the boundary of the ball
        let flat: Vec<f64> = f.truncated(6).into_vec().iter().map(|c| c * r / norm).collect();
        let g = LeveledSignal::from_flat(&flat).unwrap();
        for l in 0..=6u32 {
            let bound = r * r * 2f64.powf(-2.0 * l as f64 * s);
            prop_assert!(g.tail_norm_sq(l) <= bound * (1.0 + 1e-12), "L={l}: {} > {bound}", g.tail_norm_sq(l));
        }
    }

    #[test]
    fn transcript_fields_round_trip(values in prop::collection::vec((0u64..u64::MAX, 1u32..=64), 1..12)) {
        let mut t = Transcript::new();
        let mut offset = 0;
        let mut expected = Vec::new();
        for &(v, w) in &values {
            let v = if w == 64 { v } else { v & ((1u64 << w) - 1) };
            t.push_uint(v, w);
            expected.push((offset, w, v));
            offset += w as usize;
        }
        prop_assert_eq!(t.bit_count(), offset);
        for (o, w, v) in expected {
            prop_assert_eq!(t.read_uint(o, w), v);
        }
    }

    #[test]
    fn nonparametric_rate_is_monotone(
        log_n in 8u32..30,
        m in 2usize..4096,
        b in 1u32..64,
        s in 0.25f64..3.0,
        coin in coin(),
    ) {
        let n = 1u64 << log_n;
        let ball = SobolevBall::new(s, 1.0).unwrap();
        let rate = theoretical_rate_nonparam(n, m, b, &ball, coin);
        let tol = 1.0 + 1e-9;
        prop_assert!(theoretical_rate_nonparam(n, m, b + 1, &ball, coin) <= rate * tol);
        prop_assert!(theoretical_rate_nonparam(2 * n, m, b, &ball, coin) <= rate * tol);
        prop_assert!(theoretical_rate_nonparam(n, m + 1, b, &ball, coin) * tol >= rate);
    }

    #[test]
    fn alternatives_lie_in_the_ball(
        s in 0.5f64..3.0,
        r in 0.5f64..4.0,
        rho in 0.001f64..0.5,
        kind in prop_oneof![
            Just(SobolevAlternative::BoundaryFlat),
            Just(SobolevAlternative::LowFrequency),
            Just(SobolevAlternative::RandomDirection),
        ],
        seed in any::<u64>(),
    ) {
        let ball = SobolevBall::new(s, r).unwrap();
        match make_sobolev_alternative::<f64>(&ball, rho, kind, SeedNode::root(seed)) {
            Ok(f) => {
                prop_assert!(f.l2_norm() >= rho);
                prop_assert!(f.sobolev_norm(s) <= r);
            }
            Err(distest::Error::Infeasible(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn haar_rotation_preserves_norms(d in 1usize..24, seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 24)) {
        let u = haar_rotation::<f64>(d, SeedNode::root(seed)).unwrap();
        let x = &x[..d];
        let y = u.apply(x);
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ny: f64 = y.iter().map(|v| v * v).sum();
        prop_assert!((nx - ny).abs() <= 1e-10 * (1.0 + nx));
    }
}

#[test]
fn chi2_cdf_is_monotone_in_x_and_df() {
    for df in 1..=64usize {
        let mut prev = 0.0;
        for k in 0..=2000 {
            let x = k as f64 * 0.1;
            let p = chi2_cdf::<f64>(df, x).unwrap();
            assert!((0.0..=1.0).contains(&p));
            assert!(p >= prev, "df={df} x={x}: {p} < {prev}");
            prev = p;
            if df > 1 && x > 0.0 {
                let lower = chi2_cdf::<f64>(df - 1, x).unwrap();
                assert!(p <= lower, "df={df} x={x}: {p} > {lower}");
            }
        }
    }
}

#[test]
fn nonparametric_rate_has_no_large_jumps() {
    // scanning n finely, neighbouring values differ by far less than a regime switch could
    for coin in [CoinMode::Private, CoinMode::Public] {
        for (m, b, s) in [(64usize, 1u32, 1.0f64), (64, 8, 0.5), (1024, 16, 2.0), (16, 32, 1.0)] {
            let ball = SobolevBall::new(s, 1.0).unwrap();
            let mut n = 256.0f64;
            let mut prev = theoretical_rate_nonparam(n as u64, m, b, &ball, coin);
            while n < 1e12 {
                n *= 1.01;
                let rate = theoretical_rate_nonparam(n as u64, m, b, &ball, coin);
                let ratio = (rate / prev).max(prev / rate);
                assert!(ratio <= 4.0, "{coin} m={m} b={b} s={s} n={n}: jump {ratio}");
                prev = rate;
            }
        }
    }
}
