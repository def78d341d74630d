use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use distest::adaptive::{
    adaptive_rate, bonferroni_threshold, build_grid, log_log, AdaptiveDecision, AdaptiveOptions, AdaptiveSubtest,
    AdaptiveTest,
};
use distest::infodiag::{check_dpi, diagnose_all, estimate_xi, DpiReport, Kernel, KernelKind};
use distest::lemmas::{lemma_suite, LemmaCheck};
use distest::model::RiskReport;
use distest::nonparametric::{make_sobolev_alternative, LeveledSignal, NonparamTest};
use distest::risk::{estimate_risk_with, rate_sweep, AlternativeFamily, SweepResult};
use distest::{
    calibrate, Calibration, CoinMode, Protocol, ProtocolChoice, ReplicationSeeds, SeedNode, SobolevBall,
    ThresholdTable,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{csv_document, Envelope, VERSION};

/// What a command produced: text for stdout, files to write and an
/// optional failure to report after writing them.
#[derive(Debug, Default)]
pub struct CommandOutput {
    pub stdout: String,
    pub files: Vec<(PathBuf, String)>,
    pub failure: Option<CliError>,
}

impl CommandOutput {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, CliError::exit_code)
    }
}

pub fn calibration_seed(master_seed: u64) -> SeedNode {
    SeedNode::root(master_seed).child("calibration", 0)
}

pub fn run_seed(master_seed: u64) -> SeedNode {
    SeedNode::root(master_seed).child("run", 0)
}

pub fn sweep_seed(master_seed: u64) -> SeedNode {
    SeedNode::root(master_seed).child("sweep", 0)
}

pub fn adaptive_seed(master_seed: u64) -> SeedNode {
    SeedNode::root(master_seed).child("adaptive", 0)
}

pub fn diagnose_seed(master_seed: u64) -> SeedNode {
    SeedNode::root(master_seed).child("diagnose", 0)
}

/// Seeds of round `r` of the adaptive command under `hypothesis` (`"null"` or `"alternative"`).
pub fn adaptive_round(master_seed: u64, hypothesis: &str, r: usize) -> ReplicationSeeds {
    ReplicationSeeds::from_node(adaptive_seed(master_seed).child(hypothesis, 0).child("rep", r as u64))
}

fn resolve_protocol(cfg: &ExperimentConfig) -> Result<Protocol, CliError> {
    let choice = cfg.protocol.ok_or_else(|| {
        CliError::Usage("missing protocol name: set `protocol` in the config or pass --protocol".into())
    })?;
    Ok(Protocol::new(choice.resolve(&cfg.problem, cfg.m_alpha), &cfg.problem)?)
}

/// On-disk threshold cache.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdFile {
    pub version: String,
    /// Config of the most recent `calibrate` run; each entry keeps its own seed.
    pub config: Option<ExperimentConfig>,
    pub table: ThresholdTable,
}

impl ThresholdFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("threshold file {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(CliError::Io(format!("{}: {e}", path.display()))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("threshold file serializes") + "\n"
    }
}

pub fn cmd_calibrate(cfg: &ExperimentConfig, thresholds: &Path) -> Result<CommandOutput, CliError> {
    let protocol = resolve_protocol(cfg)?;
    let cal = calibrate(&protocol, cfg.problem.alpha, cfg.null_reps, calibration_seed(cfg.master_seed))?;
    let mut file = ThresholdFile::load(thresholds)?;
    file.version = VERSION.to_string();
    file.config = Some(cfg.clone());
    file.table.insert(cal.clone());
    Ok(CommandOutput {
        stdout: Envelope::new("calibrate", cfg, &cal).to_json()?,
        files: vec![(thresholds.to_path_buf(), file.to_json())],
        failure: None,
    })
}

/// One line of the `run` CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub protocol: String,
    pub n: u64,
    pub m: usize,
    pub d: usize,
    pub b: u32,
    pub coin: CoinMode,
    pub rho2: f64,
    pub type1: f64,
    pub type2_worst: f64,
    pub risk: f64,
    pub mc_radius: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub protocol: String,
    pub rho2: f64,
    pub calibration: Calibration,
    pub report: RiskReport,
}

pub fn cmd_run(
    cfg: &ExperimentConfig,
    thresholds: &Path,
    auto_calibrate: bool,
    out: Option<&Path>,
) -> Result<CommandOutput, CliError> {
    let rho2 = cfg.rho2.ok_or_else(|| CliError::Usage("run needs `rho2` in the config".into()))?;
    let protocol = resolve_protocol(cfg)?;
    let file = ThresholdFile::load(thresholds)?;
    let cal = match file.table.get(protocol.kind(), &cfg.problem) {
        Some(c) => c.clone(),
        None if auto_calibrate => {
            calibrate(&protocol, cfg.problem.alpha, cfg.null_reps, calibration_seed(cfg.master_seed))?
        }
        None => {
            return Err(distest::Error::Uncalibrated(format!(
                "no thresholds for {} at {} in {}; run `calibrate` first or pass --auto-calibrate",
                protocol.name(),
                cfg.problem.fingerprint(),
                thresholds.display()
            ))
            .into())
        }
    };
    let family = AlternativeFamily::new(cfg.family.clone())?;
    let report =
        estimate_risk_with(&protocol, &cal, &family, rho2.sqrt(), cfg.reps, run_seed(cfg.master_seed), cfg.sampler)?;
    let p = &cfg.problem;
    let row = RunRow {
        protocol: protocol.name().to_string(),
        n: p.n,
        m: p.m,
        d: p.d,
        b: p.b,
        coin: p.coin,
        rho2,
        type1: report.type1,
        type2_worst: report.worst_type2(),
        risk: report.worst_risk,
        mc_radius: report.mc_radius,
        seed: cfg.master_seed,
    };
    let result = RunResult { protocol: row.protocol.clone(), rho2, calibration: cal, report };
    let mut output = CommandOutput { stdout: Envelope::new("run", cfg, &result).to_json()?, ..Default::default() };
    if let Some(path) = out.map(Path::to_path_buf).or_else(|| cfg.output.clone()) {
        output.files.push((path, csv_document("run", cfg, &[row])?));
    }
    Ok(output)
}

/// One line of the `sweep` CSV: a `point` row per axis value, then one `summary` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub row: String,
    pub axis: String,
    pub value: Option<u64>,
    pub protocol: Option<String>,
    pub rho2_star: Option<f64>,
    pub rho2_lo: Option<f64>,
    pub rho2_hi: Option<f64>,
    pub rho2_theory: Option<f64>,
    pub type1: Option<f64>,
    pub crossed: Option<bool>,
    pub slope: Option<f64>,
    pub slope_ci_lo: Option<f64>,
    pub slope_ci_hi: Option<f64>,
}

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepRow> {
    let axis = result.axis.name().to_string();
    let mut rows: Vec<SweepRow> = result
        .points
        .iter()
        .map(|p| SweepRow {
            row: "point".into(),
            axis: axis.clone(),
            value: Some(p.value),
            protocol: Some(p.protocol.clone()),
            rho2_star: Some(p.rho2_star),
            rho2_lo: Some(p.rho2_lo),
            rho2_hi: Some(p.rho2_hi),
            rho2_theory: Some(p.rho2_theory),
            type1: Some(p.type1),
            crossed: Some(p.crossed),
            slope: None,
            slope_ci_lo: None,
            slope_ci_hi: None,
        })
        .collect();
    rows.push(SweepRow {
        row: "summary".into(),
        axis,
        value: None,
        protocol: None,
        rho2_star: None,
        rho2_lo: None,
        rho2_hi: None,
        rho2_theory: None,
        type1: None,
        crossed: None,
        slope: Some(result.fitted_slope),
        slope_ci_lo: Some(result.slope_ci.0),
        slope_ci_hi: Some(result.slope_ci.1),
    });
    rows
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<CommandOutput, CliError> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Usage("sweep needs a [sweep] section".into()))?;
    let family = AlternativeFamily::new(cfg.family.clone())?;
    let result = rate_sweep(
        cfg.protocol.unwrap_or(ProtocolChoice::Auto),
        &cfg.problem,
        sweep.axis,
        &sweep.values,
        &family,
        &sweep.search_options(cfg.reps, cfg.sampler),
        cfg.null_reps,
        sweep_seed(cfg.master_seed),
    )?;
    let mut output = CommandOutput { stdout: Envelope::new("sweep", cfg, &result).to_json()?, ..Default::default() };
    if let Some(path) = out.map(Path::to_path_buf).or_else(|| cfg.output.clone()) {
        output.files.push((path, csv_document("sweep", cfg, &sweep_rows(&result))?));
    }
    Ok(output)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalInfo {
    pub kind: String,
    pub s: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub norm: f64,
    pub max_level: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRates {
    pub type1: f64,
    pub type2: f64,
}

/// Summary of one statistic at one level under one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub hypothesis: String,
    pub subtest: String,
    pub level: u32,
    pub mean: f64,
    pub sd: f64,
    pub threshold: f64,
    pub exceed_rate: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdaptiveResult {
    /// `adaptive`, or `single-level` when `s_min = s_max`.
    pub mode: String,
    pub s_min: f64,
    pub s_max: f64,
    pub signal: SignalInfo,
    pub rho_map: Vec<(u32, f64)>,
    pub m_prime: Option<usize>,
    pub kappa_count: Option<f64>,
    pub tests: BTreeMap<String, TestRates>,
    pub report: RiskReport,
    pub level_statistics: Vec<LevelRow>,
}

/// Per-round output shared by both adaptive paths.
struct Round {
    /// `(subtest label, level, value)` for every statistic.
    stats: Vec<(String, u32, f64)>,
    /// Decision of every reported test, keyed by name.
    decisions: Vec<(String, bool)>,
}

fn summarize_levels(hypothesis: &str, rounds: &[Round], thresholds: &BTreeMap<(String, u32), f64>) -> Vec<LevelRow> {
    let mut groups: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
    for round in rounds {
        for (label, level, value) in &round.stats {
            groups.entry((label.clone(), *level)).or_default().push(*value);
        }
    }
    groups
        .into_iter()
        .map(|((subtest, level), values)| {
            let k = values.len() as f64;
            let mean = values.iter().sum::<f64>() / k;
            let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
            let threshold = thresholds.get(&(subtest.clone(), level)).copied().unwrap_or(f64::NAN);
            let exceed = values.iter().filter(|&&v| v >= threshold).count() as f64 / k;
            LevelRow { hypothesis: hypothesis.into(), subtest, level, mean, sd: var.sqrt(), threshold, exceed_rate: exceed, reps: values.len() }
        })
        .collect()
}

fn rejection_rates(rounds: &[Round]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for round in rounds {
        for (name, d) in &round.decisions {
            *counts.entry(name.clone()).or_default() += *d as usize;
        }
    }
    counts.into_iter().map(|(k, c)| (k, c as f64 / rounds.len() as f64)).collect()
}

fn simulate<F>(reps: usize, master_seed: u64, hypothesis: &str, round: F) -> Result<Vec<Round>, CliError>
where
    F: Fn(&ReplicationSeeds) -> distest::Result<Round> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| round(&adaptive_round(master_seed, hypothesis, r)).map_err(CliError::from))
        .collect()
}

fn adaptive_decisions(d: &AdaptiveDecision, coin: CoinMode) -> Vec<(String, bool)> {
    let mut out = vec![("T1-adapt".to_string(), d.chi_square_bits)];
    match coin {
        CoinMode::Public => out.push(("T2-adapt".into(), d.rotated_signs)),
        CoinMode::Private => out.push(("T3-adapt".into(), d.partitioned_signs || d.counting)),
    }
    out.push(("combined".into(), d.combined));
    out
}

pub fn cmd_adaptive(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<CommandOutput, CliError> {
    let np = cfg.nonparam.as_ref().ok_or_else(|| CliError::Usage("adaptive needs a [nonparam] section".into()))?;
    let p = &cfg.problem;
    let (s_min, s_max) = (np.s_min.unwrap_or(np.s), np.s_max.unwrap_or(np.s));
    let ball = SobolevBall::new(np.s, np.r)?;
    let norm = np.multiplier * log_log(p.n).powf(0.25) * adaptive_rate(p.n, p.m, p.b, np.s, p.coin).sqrt();
    let f: LeveledSignal<f64> =
        make_sobolev_alternative(&ball, norm, np.signal, adaptive_seed(cfg.master_seed).child("signal", 0))?;
    let signal = SignalInfo { kind: np.signal.label().into(), s: np.s, r: np.r, norm, max_level: f.max_level() };

    let mut thresholds: BTreeMap<(String, u32), f64> = BTreeMap::new();
    let (mode, rho_map, m_prime, kappa_count, null, alt);
    if s_min == s_max {
        let grid = build_grid(s_min, s_max, p.n, p.m, p.b, p.coin)?;
        let test = NonparamTest::new(p, SobolevBall::new(s_min, np.r)?, grid.points[0].rho, cfg.m_alpha)?;
        let cal = calibrate(&test.protocol, p.alpha, cfg.null_reps, adaptive_seed(cfg.master_seed).child("calibration", 0))?;
        let name = test.protocol.name().to_string();
        let k = test.protocol.num_statistics();
        let label = |i: usize| if k == 1 { name.clone() } else { format!("{name}#{i}") };
        for (i, c) in cal.thresholds.cutoffs.iter().enumerate() {
            thresholds.insert((label(i), test.level), c.kappa);
        }
        let round = |f: &LeveledSignal<f64>, seeds: &ReplicationSeeds| -> distest::Result<Round> {
            let rep = test.replicate(f, seeds)?;
            let decision = test.protocol.decide_statistics(&rep.stats, &cal.thresholds, seeds.central)?;
            Ok(Round {
                stats: rep.stats.iter().enumerate().map(|(i, &v)| (label(i), test.level, v)).collect(),
                decisions: vec![(name.clone(), decision), ("combined".into(), decision)],
            })
        };
        let zero = LeveledSignal::zeros(0);
        null = simulate(cfg.reps, cfg.master_seed, "null", |s| round(&zero, s))?;
        alt = simulate(cfg.reps, cfg.master_seed, "alternative", |s| round(&f, s))?;
        mode = "single-level";
        rho_map = grid.rho_map();
        m_prime = None;
        kappa_count = None;
    } else {
        let options = AdaptiveOptions { predicate: np.count_predicate, kappa_count: None };
        let mut test = AdaptiveTest::build(p, s_min, s_max, options)?;
        let kappa = test.calibrate_counting(np.kappa_level, cfg.null_reps, adaptive_seed(cfg.master_seed).child("kappa", 0))?;
        let base = bonferroni_threshold(p.n);
        for plan in &test.plans {
            let t = match (plan.subtest, kappa) {
                (AdaptiveSubtest::Counting, Some(k)) => k * log_log(p.n).sqrt(),
                _ => base,
            };
            for lp in &plan.levels {
                thresholds.insert((plan.subtest.label().to_string(), lp.level), t);
            }
        }
        let round = |f: &LeveledSignal<f64>, seeds: &ReplicationSeeds| -> distest::Result<Round> {
            let rep = test.replicate(f, seeds)?;
            let decision = test.decide(&rep)?;
            Ok(Round {
                stats: rep.stats.iter().map(|s| (s.subtest.label().to_string(), s.level, s.value)).collect(),
                decisions: adaptive_decisions(&decision, p.coin),
            })
        };
        let zero = LeveledSignal::zeros(0);
        null = simulate(cfg.reps, cfg.master_seed, "null", |s| round(&zero, s))?;
        alt = simulate(cfg.reps, cfg.master_seed, "alternative", |s| round(&f, s))?;
        mode = "adaptive";
        rho_map = test.grid.rho_map();
        m_prime = Some(test.schedule.m_prime);
        kappa_count = kappa;
    }

    let null_rates = rejection_rates(&null);
    let alt_rates = rejection_rates(&alt);
    let tests: BTreeMap<String, TestRates> = null_rates
        .iter()
        .map(|(k, &t1)| (k.clone(), TestRates { type1: t1, type2: 1.0 - alt_rates.get(k).copied().unwrap_or(0.0) }))
        .collect();
    let combined = tests["combined"];
    let report = RiskReport::new(combined.type1, BTreeMap::from([(signal.kind.clone(), combined.type2)]), cfg.reps);
    let mut level_statistics = summarize_levels("null", &null, &thresholds);
    level_statistics.extend(summarize_levels("alternative", &alt, &thresholds));

    let result = AdaptiveResult {
        mode: mode.into(),
        s_min,
        s_max,
        signal,
        rho_map,
        m_prime,
        kappa_count,
        tests,
        report,
        level_statistics,
    };
    let mut output = CommandOutput { stdout: Envelope::new("adaptive", cfg, &result).to_json()?, ..Default::default() };
    if let Some(path) = out.map(Path::to_path_buf).or_else(|| cfg.output.clone()) {
        output.files.push((path, csv_document("adaptive", cfg, &result.level_statistics)?));
    }
    Ok(output)
}

/// One bound check of one kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseRow {
    pub kernel: String,
    pub n: u64,
    pub m: usize,
    pub d: usize,
    pub b: u32,
    pub check: String,
    pub value: f64,
    pub bound: f64,
    pub slack: f64,
    pub margin: f64,
    pub passed: bool,
    pub samples: usize,
    pub seed: u64,
}

pub fn diagnose_rows(reports: &[DpiReport], seed: u64) -> Vec<DiagnoseRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.checks.iter().map(move |c| DiagnoseRow {
                kernel: r.kernel.name().into(),
                n: r.config.n,
                m: r.config.m,
                d: r.config.d,
                b: r.config.b,
                check: c.name.clone(),
                value: c.value,
                bound: c.bound,
                slack: c.slack,
                margin: c.margin,
                passed: c.passed,
                samples: r.estimate.mc_samples,
                seed,
            })
        })
        .collect()
}

pub fn cmd_diagnose(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<CommandOutput, CliError> {
    let section = cfg.diagnose.clone().unwrap_or_default();
    let seed = diagnose_seed(cfg.master_seed);
    let reports = if section.kernel == "all" {
        diagnose_all(&cfg.problem, section.samples, seed)?
    } else {
        let kind: KernelKind = section.kernel.parse()?;
        // same seed branches as `diagnose_all`
        let kernel = Kernel::new(kind, &cfg.problem, seed.child(kind.name(), 0))?;
        vec![check_dpi(&estimate_xi(&kernel, section.samples, seed.child(kind.name(), 1))?, &cfg.problem)]
    };
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.kernel.name()).collect();
    let mut output = CommandOutput { stdout: Envelope::new("diagnose", cfg, &reports).to_json()?, ..Default::default() };
    if let Some(path) = out.map(Path::to_path_buf).or_else(|| cfg.output.clone()) {
        output.files.push((path, csv_document("diagnose", cfg, &diagnose_rows(&reports, cfg.master_seed))?));
    }
    if !failed.is_empty() {
        output.failure = Some(CliError::CheckFailed(format!("information bounds violated by {}", failed.join(", "))));
    }
    Ok(output)
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub version: &'static str,
    pub command: &'static str,
    pub master_seed: u64,
    pub draws: usize,
    pub checks: Vec<LemmaCheck>,
    pub passed: bool,
}

pub fn cmd_selftest(master_seed: u64, draws: usize) -> Result<CommandOutput, CliError> {
    if draws == 0 {
        return Err(CliError::Usage("selftest needs a positive number of draws".into()));
    }
    let checks = lemma_suite(draws, SeedNode::root(master_seed).child("selftest", 0));
    let passed = checks.iter().all(|c| c.passed);
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let report = SelftestReport { version: VERSION, command: "selftest", master_seed, draws, checks, passed };
    Ok(CommandOutput {
        stdout: serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?,
        files: Vec::new(),
        failure: (!passed).then(|| CliError::CheckFailed(format!("lemma checks failed: {}", failed.join(", ")))),
    })
}
