//! `iwrl` — train a multi-task behavior prior with per-task soft critics,
//! adapt it to held-out tasks by importance-weighted re-weighting, verify
//! every operator against exact oracles, and aggregate result curves.

mod adapt_cmd;
mod config;
mod report;
mod train;
mod util;
mod verify_cmd;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit-code contract: 0 success, 1 verification/runtime failure, 2 config
/// error, 3 artifact incompatibility.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Failed(String),
    Artifact(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Artifact(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Failed(m) | CliError::Artifact(m) => m,
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "iwrl",
    about = "Multi-task RL with behavior priors and importance-weighted adaptation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the multi-task learner; writes checkpoint, task set, metrics.
    Train(TrainArgs),
    /// Adapt a pretrained checkpoint to held-out tasks; writes curves CSV.
    Adapt(AdaptArgs),
    /// Run the oracle/invariant verification suite.
    Verify(VerifyArgs),
    /// Aggregate adaptation curves from one or more run directories.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Single-actor strict-alternation mode; reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Run seed; defaults to the first entry of the config's `seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct AdaptArgs {
    /// Experiment config JSON (adaptation protocol and defaults).
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Task-set JSON produced by `train`; held-out tasks are used.
    #[arg(long)]
    task_set: PathBuf,
    /// Comma-separated variants; defaults to the config's `variants`.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Comma-separated seeds; defaults to the config's `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Also export rolling-mean smoothed curves (raw CSV is untouched).
    #[arg(long)]
    smooth_window: Option<usize>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Where to write the machine-readable JSONL results.
    #[arg(long, default_value = "verify_results.jsonl")]
    output: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Adaptation run directories (each holding curves.csv + provenance).
    run_dirs: Vec<PathBuf>,
    /// Output CSV with per-variant mean curves and 95% confidence bands.
    #[arg(long, default_value = "report.csv")]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train::run(args),
        Command::Adapt(args) => adapt_cmd::run(args),
        Command::Verify(args) => verify_cmd::run(args),
        Command::Report(args) => report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
