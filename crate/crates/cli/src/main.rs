//! `driftlab` — measure how far discrete SGD updates drift from their
//! corrected continuous flows, and emit reproducible reports.

mod commands;
mod config;
mod output;
mod problems;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unusable configuration or environment; exit status 2.
    #[error("{0}")]
    Config(String),
    /// Integration or training failure; exit status 3.
    #[error("{0}")]
    Numerical(String),
}

impl From<driftlab_core::Error> for CliError {
    fn from(e: driftlab_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl CliError {
    fn status(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "driftlab",
    about = "Drift-order verification for SGD against corrected gradient flows",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; omitted keys take documented defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config `out` key)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override (overrides the config `seed` key)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep step sizes, fit drift orders, and check them against theory
    VerifyOrder(RunArgs),
    /// Run training and write per-step diagnostics (losses, conflict, bracket)
    Diagnostics(RunArgs),
    /// Run the registered invariant suite
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run() -> Result<ExitCode, CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::VerifyOrder(args) => {
            let cfg = resolve_config(&args)?;
            let all_pass = commands::run_verify_order(&cfg)?;
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Diagnostics(args) => {
            let cfg = resolve_config(&args)?;
            commands::run_diagnostics(&cfg)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { inject_fault } => {
            let all_pass = selftest::run_selftest(inject_fault)?;
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status())
        }
    }
}
