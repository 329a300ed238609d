//! `specgate`: run, compare and validate comparator-gated design searches.
//!
//! Exit codes: 0 solved or ok, 1 internal error, 2 config error,
//! 3 evaluator error, 4 budget exhausted without a solution.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use specgate::Mode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Evaluator(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Evaluator(_) => 3,
        }
    }
}

impl From<specgate::Error> for CliError {
    fn from(e: specgate::Error) -> Self {
        use specgate::Error as E;
        match e {
            E::Config { .. } | E::Incompatible(_) | E::Checkpoint(_) | E::Contract(_) => CliError::Config(e.to_string()),
            E::Evaluator { .. } | E::Evaluation(_) => CliError::Evaluator(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "specgate", version, about = "Comparator-gated evolutionary design search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an optimization and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Artifact directory; defaults to `<artifact root>/<run id>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Keep a numbered checkpoint every N iterations (0 disables).
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
        /// Root for default artifact directories.
        #[arg(long, env = "SPECGATE_ARTIFACT_ROOT", default_value = "runs")]
        artifact_root: PathBuf,
    },
    /// Merge finished runs into curve and summary tables.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Check a config file and probe its evaluator once.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            mode,
            seed,
            max_iterations,
            out,
            resume,
            checkpoint_every,
            artifact_root,
        } => commands::run(commands::RunArgs {
            config,
            mode,
            seed,
            max_iterations,
            out,
            resume,
            checkpoint_every,
            artifact_root,
        }),
        Command::Compare { runs, out } => commands::compare(&runs, &out).map(|()| 0),
        Command::Validate { config } => commands::validate(&config),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
