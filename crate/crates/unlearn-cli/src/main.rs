//! `unlearn` — config-driven benchmark runner.
//!
//! Exit codes: 0 success, 2 input/format error, 3 configuration error,
//! 4 numeric failure.

mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use unlearn_core::error::Result;

#[derive(Parser)]
#[command(name = "unlearn", version, about = "Machine-unlearning benchmark harness")]
struct Cli {
    /// Experiment configuration file (flat key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Run seed (overrides the config's run_seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Method name (overrides the config's method).
    #[arg(long, global = true)]
    method: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate dataset files and print a summary.
    PrepareData,
    /// Train the original model on the full train set.
    TrainOriginal,
    /// Run the configured unlearning method and evaluate it.
    Unlearn,
    /// Re-evaluate a persisted checkpoint.
    Evaluate,
    /// Build comparison tables from report files.
    Compare {
        /// Report JSON paths to compare.
        reports: Vec<PathBuf>,
        /// Retrain reference report (required; no silent default).
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run class-forgetting for every class and tabulate UA/RA/TA.
    PerClass,
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.ok_or_else(|| {
        unlearn_core::error::Error::config("--config PATH is required")
    })?;
    let mut cfg = ExperimentConfig::load(&config_path)?;
    let method_flag = cli.method.clone();
    cfg.apply_overrides(
        cli.output,
        cli.seed,
        cli.method.as_deref().filter(|m| *m != "original"),
    )?;
    match cli.command {
        Command::PrepareData => commands::cmd_prepare_data(&cfg),
        Command::TrainOriginal => commands::cmd_train_original(&cfg).map(|_| ()),
        Command::Unlearn => commands::cmd_unlearn(&cfg).map(|_| ()),
        Command::Evaluate => commands::cmd_evaluate(&cfg, method_flag.as_deref()).map(|_| ()),
        Command::Compare { reports, reference } => {
            commands::cmd_compare(&cfg, &reports, reference.as_deref())
        }
        Command::PerClass => commands::cmd_per_class(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
