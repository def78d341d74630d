use std::path::{Path, PathBuf};

use distest::adaptive::CountPredicate;
use distest::nonparametric::SobolevAlternative;
use distest::risk::{Alternative, Sampler, SearchOptions, SweepAxis};
use distest::{ProblemConfig, ProtocolChoice};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn default_seed() -> u64 {
    1
}
fn default_reps() -> usize {
    1000
}
fn default_null_reps() -> usize {
    10_000
}
fn default_family() -> Vec<Alternative> {
    Alternative::ALL.to_vec()
}
fn default_thresholds() -> PathBuf {
    PathBuf::from("thresholds.json")
}
fn default_m_alpha() -> usize {
    distest::protocols::DEFAULT_M_ALPHA
}

/// One experiment, as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `T1`, `T1-local`, `T2`, `T3` or `auto`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolChoice>,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_null_reps")]
    pub null_reps: usize,
    /// Squared signal norm for `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho2: Option<f64>,
    #[serde(default = "default_family")]
    pub family: Vec<Alternative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_thresholds")]
    pub thresholds: PathBuf,
    #[serde(default = "default_m_alpha")]
    pub m_alpha: usize,
    #[serde(default)]
    pub sampler: Sampler,
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonparam: Option<NonparamSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseSection>,
}

fn default_signal() -> SobolevAlternative {
    SobolevAlternative::BoundaryFlat
}
fn default_multiplier() -> f64 {
    10.0
}
fn default_kappa_level() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonparamSection {
    /// Smoothness of the simulated signal.
    pub s: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(default = "default_signal")]
    pub signal: SobolevAlternative,
    /// Signal norm is `multiplier · (log log n)^{1/4} · ρ_s`.
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    #[serde(default)]
    pub count_predicate: CountPredicate,
    /// Null rejection level used to calibrate the counting subtest.
    #[serde(default = "default_kappa_level")]
    pub kappa_level: f64,
}

fn default_target() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<u64>,
    #[serde(default = "default_target")]
    pub target_risk: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_reps: Option<usize>,
}

impl SweepSection {
    /// Search settings; `fine_reps` falls back to the experiment's `reps`.
    pub fn search_options(&self, reps: usize, sampler: Sampler) -> SearchOptions {
        let base = SearchOptions::default();
        SearchOptions {
            target_risk: self.target_risk,
            steps: self.steps.unwrap_or(base.steps),
            coarse_reps: self.coarse_reps.unwrap_or(base.coarse_reps),
            fine_reps: self.fine_reps.unwrap_or(reps),
            sampler,
            ..base
        }
    }
}

fn default_kernel() -> String {
    "all".into()
}
fn default_samples() -> usize {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    /// Kernel name or `all`.
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection { kernel: default_kernel(), samples: default_samples() }
    }
}

impl ExperimentConfig {
    /// Parse without validation, so command-line overrides can be applied first.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Io(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.problem.validate()?;
        if self.reps == 0 {
            return Err(CliError::Usage("reps must be positive".into()));
        }
        if self.null_reps == 0 {
            return Err(CliError::Usage("null_reps must be positive".into()));
        }
        if self.family.is_empty() {
            return Err(CliError::Usage("family must name at least one alternative".into()));
        }
        if let Some(r) = self.rho2 {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(CliError::Usage(format!("rho2 must be finite and non-negative, got {r}")));
            }
        }
        if let Some(np) = &self.nonparam {
            if !(np.s > 0.0 && np.r > 0.0) {
                return Err(CliError::Usage("nonparam.s and nonparam.R must be positive".into()));
            }
            if !(np.kappa_level > 0.0 && np.kappa_level < 1.0) {
                return Err(CliError::Usage("nonparam.kappa_level must lie in (0,1)".into()));
            }
        }
        if let Some(sw) = &self.sweep {
            if !(sw.target_risk > 0.0 && sw.target_risk < 1.0) {
                return Err(CliError::Usage("sweep.target_risk must lie in (0,1)".into()));
            }
        }
        Ok(())
    }
}
