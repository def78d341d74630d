use distest::risk::{Alternative, SweepAxis};
use distest::{CoinMode, ProtocolChoice, ProtocolKind};
use distest_cli::{CliError, ExperimentConfig};

const FULL: &str = r#"
protocol = "T2"
master_seed = 42
reps = 500
null_reps = 2000
rho2 = 0.125
family = ["Flat", "Spike"]
output = "out.csv"
thresholds = "th.json"
m_alpha = 8
sampler = "Full"

[problem]
n = 10000
m = 64
d = 16
b = 2
alpha = 0.05
coin = "Public"

[nonparam]
s = 1.0
R = 2.0
s_min = 0.5
s_max = 2.0
signal = "RandomDirection"
multiplier = 4.0
count_predicate = "Level"
kappa_level = 0.1

[sweep]
axis = "n"
values = [1000, 10000, 100000]
target_risk = 0.4
steps = 8

[diagnose]
kernel = "sign"
samples = 5000
"#;

#[test]
fn full_config_round_trips() {
    let cfg = ExperimentConfig::from_toml(FULL).unwrap();
    assert_eq!(cfg.protocol, Some(ProtocolChoice::Fixed(ProtocolKind::T2)));
    assert_eq!(cfg.problem.coin, CoinMode::Public);
    assert_eq!(cfg.family, vec![Alternative::Flat, Alternative::Spike]);
    assert_eq!(cfg.sweep.as_ref().unwrap().axis, SweepAxis::N);
    assert_eq!(cfg.nonparam.as_ref().unwrap().r, 2.0);
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn minimal_config_round_trips() {
    let cfg = ExperimentConfig::from_toml(
        "[problem]\nn = 100\nm = 4\nd = 2\nb = 1\nalpha = 0.1\ncoin = \"Private\"\n",
    )
    .unwrap();
    assert_eq!(cfg.protocol, None);
    assert_eq!(cfg.family, Alternative::ALL.to_vec());
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}

#[test]
fn unknown_keys_are_rejected() {
    for (from, to) in [("reps = 500", "repz = 500"), ("b = 2", "b = 2\nbits = 3"), ("kernel = \"sign\"", "kernal = \"sign\"")] {
        let err = ExperimentConfig::from_toml(&FULL.replace(from, to)).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{from}: {err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn invalid_values_are_usage_errors() {
    for (from, to) in [
        ("alpha = 0.05", "alpha = 1.5"),
        ("reps = 500", "reps = 0"),
        ("protocol = \"T2\"", "protocol = \"T4\""),
        ("target_risk = 0.4", "target_risk = 1.0"),
        ("rho2 = 0.125", "rho2 = -1.0"),
    ] {
        let err = ExperimentConfig::from_toml(&FULL.replace(from, to)).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{to}: {err}");
    }
}
