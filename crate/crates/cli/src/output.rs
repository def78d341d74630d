use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Package version plus `git describe` of the build tree.
pub const VERSION: &str = env!("DISTEST_VERSION");

/// Provenance wrapper around every JSON result.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub version: &'static str,
    pub command: &'a str,
    pub master_seed: u64,
    pub config: &'a ExperimentConfig,
    pub result: T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig, result: T) -> Self {
        Envelope { version: VERSION, command, master_seed: config.master_seed, config, result }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Io(format!("serializing output: {e}")))
    }
}

/// CSV text preceded by `# ` lines holding the version, seed and resolved config.
///
/// Read back with `csv::ReaderBuilder::new().comment(Some(b'#'))`.
pub fn csv_document<R: Serialize>(command: &str, config: &ExperimentConfig, rows: &[R]) -> Result<String, CliError> {
    let cfg_json = serde_json::to_string(config).map_err(|e| CliError::Io(e.to_string()))?;
    let mut out = format!(
        "# distest {VERSION}\n# command: {command}\n# master_seed: {}\n# config: {cfg_json}\n",
        config.master_seed
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(format!("csv: {e}")))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

pub fn write_file(path: &std::path::Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
