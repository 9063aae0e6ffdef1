//! `sgdlab`: command-line driver for the stochastic-training laboratory.

mod artifact;
mod config;
mod error;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{defaults_table, load_config};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "sgdlab",
    version,
    about = "Numerical laboratory for stochastic training dynamics on solvable models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML; `.json` files are parsed as JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to `SGDLAB_WORKERS` or all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Base RNG seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts plus a manifest.
    Run(CommonArgs),
    /// Tabulate a closed-form stationary density with its critical points.
    AnalyticPdf(CommonArgs),
    /// Compare a trajectory CSV against a closed-form density.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Trajectory CSV with a `v` column, e.g. an earlier `run` artifact.
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Parse and validate a config without running anything.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also print the table of config defaults.
        #[arg(long)]
        explain: bool,
    },
}

fn worker_count(cli_workers: Option<usize>) -> usize {
    cli_workers
        .or_else(|| {
            std::env::var("SGDLAB_WORKERS")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Run(c) | Command::AnalyticPdf(c) => c,
        Command::Compare { common, .. } | Command::Validate { common, .. } => common,
    };
    let config_bytes = std::fs::read(&common.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.out));
    let workers = worker_count(common.workers);

    match &cli.command {
        Command::Run(_) => experiments::run_experiment(&cfg, &config_bytes, &out, workers),
        Command::AnalyticPdf(_) => experiments::analytic_pdf(&cfg, &out, &config_bytes),
        Command::Compare { trajectory, .. } => {
            let text = std::fs::read_to_string(trajectory).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", trajectory.display()))
            })?;
            experiments::compare_trajectory(&cfg, &text, &out, &config_bytes)
        }
        Command::Validate { explain, .. } => {
            config::validate_for_run(&cfg)?;
            println!("config ok: experiment {}", cfg.experiment);
            if *explain {
                println!("defaults:");
                for (key, value) in defaults_table() {
                    println!("  {key} = {value}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgdlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
