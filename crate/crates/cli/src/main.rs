//! `nrlangevin`: configuration-driven runs of the splitting samplers.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, IngestConfig};
use crate::error::CliError;
use crate::output::OutDir;

#[derive(Parser)]
#[command(name = "nrlangevin", version, about = "Nonreversible Langevin splitting samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact bias and variance tables for the linear Gaussian model.
    GaussianAnalysis(Common),
    /// Budget-matched sampler runs (warped, logistic, cox, sample).
    Experiment(Common),
    /// Validate a dataset and write it in tabular form.
    Ingest(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replica runs.
    #[arg(long)]
    threads: Option<usize>,
    /// Base seed; overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(k) = threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {k} threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let report = match cli.command {
        Command::GaussianAnalysis(c) => {
            let cfg = experiment_config(&c)?;
            commands::run_gaussian_analysis(&cfg, &OutDir::create(&cfg.output.dir)?)?
        }
        Command::Experiment(c) => {
            let cfg = experiment_config(&c)?;
            init_threads(c.threads)?;
            commands::run_experiment(&cfg, &OutDir::create(&cfg.output.dir)?)?
        }
        Command::Ingest(c) => {
            let mut cfg = IngestConfig::load(&c.config)?;
            if let Some(dir) = c.out {
                cfg.output.dir = dir;
            }
            commands::run_ingest(&cfg, &OutDir::create(&cfg.output.dir)?)?
        }
    };
    if report.all_failed {
        return Err(CliError::Numerical("every computation failed; see the output tables".into()));
    }
    Ok(())
}

fn experiment_config(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(dir) = &c.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nrlangevin: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
