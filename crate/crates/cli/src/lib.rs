//! Command-line front end for the `distest` simulations.
//!
//! Every command reads a TOML [`ExperimentConfig`], applies command-line
//! overrides, and prints a JSON envelope with the version, resolved config
//! and master seed. Tabular results go to CSV files for plotting.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use distest::ProtocolChoice;

pub use commands::CommandOutput;
pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "distest", version = output::VERSION, about = "Distributed Gaussian mean testing simulations")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate thresholds and store them in the threshold file.
    Calibrate(ExperimentArgs),
    /// Estimate Type I, Type II and risk at `rho2`.
    Run(ExperimentArgs),
    /// Empirical separation thresholds along one axis.
    Sweep(ExperimentArgs),
    /// Smoothness-adaptive tests on a Sobolev signal.
    Adaptive(ExperimentArgs),
    /// Information diagnostics of transcript kernels.
    Diagnose(ExperimentArgs),
    /// Numeric checks of the inequality lemmas.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Monte Carlo draws per tail check.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `reps`; for `diagnose`, the number of Monte Carlo samples.
    #[arg(long)]
    pub reps: Option<usize>,
    /// CSV output (for `calibrate`, the threshold file).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `protocol`.
    #[arg(long)]
    pub protocol: Option<ProtocolChoice>,
    /// Overrides the threshold file path.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Calibrate on a threshold cache miss instead of failing.
    #[arg(long)]
    pub auto_calibrate: bool,
}

impl ExperimentArgs {
    /// Config with command-line overrides applied, validated.
    pub fn resolve(&self, diagnose: bool) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::read(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(reps) = self.reps {
            if diagnose {
                cfg.diagnose.get_or_insert_with(Default::default).samples = reps;
            } else {
                cfg.reps = reps;
            }
        }
        if let Some(p) = self.protocol {
            cfg.protocol = Some(p);
        }
        if let Some(t) = &self.thresholds {
            cfg.thresholds = t.clone();
        }
        if self.reps == Some(0) {
            return Err(CliError::Usage("--reps must be positive".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run one parsed command without touching the filesystem beyond reading inputs.
pub fn execute(cli: &Cli) -> Result<CommandOutput, CliError> {
    match &cli.command {
        Command::Calibrate(a) => {
            let cfg = a.resolve(false)?;
            let path = a.out.clone().unwrap_or_else(|| cfg.thresholds.clone());
            commands::cmd_calibrate(&cfg, &path)
        }
        Command::Run(a) => {
            let cfg = a.resolve(false)?;
            commands::cmd_run(&cfg, &cfg.thresholds, a.auto_calibrate, a.out.as_deref())
        }
        Command::Sweep(a) => commands::cmd_sweep(&a.resolve(false)?, a.out.as_deref()),
        Command::Adaptive(a) => commands::cmd_adaptive(&a.resolve(false)?, a.out.as_deref()),
        Command::Diagnose(a) => commands::cmd_diagnose(&a.resolve(true)?, a.out.as_deref()),
        Command::Selftest { seed, draws } => commands::cmd_selftest(*seed, *draws),
    }
}

/// Write the produced files, print stdout, and return the exit code.
pub fn finish(result: Result<CommandOutput, CliError>) -> i32 {
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    for (path, contents) in &output.files {
        if let Err(e) = output::write_file(path, contents) {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    }
    println!("{}", output.stdout);
    if let Some(e) = &output.failure {
        eprintln!("error: {e}");
    }
    output.exit_code()
}
