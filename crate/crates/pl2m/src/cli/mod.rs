//! Command-line entry points: `train`, `predict`, `evaluate`,
//! `gen-synthetic`, and `bench`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod bench;
mod config;
mod evaluate;
mod gen;
mod predict;
mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;

pub use bench::BenchArgs;
pub use evaluate::EvaluateArgs;
pub use gen::GenArgs;
pub use predict::PredictArgs;
pub use train::TrainArgs;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "pl2m",
    about = "Parallel coordinate descent for feature-based matrix factorization",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and append one metrics line per epoch.
    Train(TrainArgs),
    /// Score query-target pairs with a trained model.
    Predict(PredictArgs),
    /// Evaluate a trained model on held-out observations.
    Evaluate(EvaluateArgs),
    /// Generate a planted-model synthetic dataset.
    GenSynthetic(GenArgs),
    /// Time algorithm/thread combinations and report speedups.
    Bench(BenchArgs),
}

/// Failures carrying their process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => train::cmd_train(&args),
        Command::Predict(args) => predict::cmd_predict(&args),
        Command::Evaluate(args) => evaluate::cmd_evaluate(&args),
        Command::GenSynthetic(args) => gen::cmd_gen_synthetic(&args),
        Command::Bench(args) => bench::cmd_bench(&args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Load a feature matrix, or build an identity matrix over `fallback_n`
/// instances when no path is given (the plain matrix-factorization case).
pub(crate) fn load_features_or_identity(
    path: &Option<PathBuf>,
    fallback_n: usize,
    what: &str,
) -> Result<crate::sparse::FeatureMatrix, CliError> {
    match path {
        Some(p) => Ok(crate::sparse::FeatureMatrix::load(p)?),
        None => {
            if fallback_n == 0 {
                return Err(CliError::Data(format!(
                    "no {what} feature file given and the observation file names no instances"
                )));
            }
            Ok(crate::sparse::FeatureMatrix::identity(fallback_n))
        }
    }
}

/// Scan an observation file for the number of queries/targets it implies.
pub(crate) fn scan_observation_dims(path: &std::path::Path) -> Result<(usize, usize), CliError> {
    let triples = crate::sparse::read_triple_file(path)?;
    let q = triples.iter().map(|t| t.0 + 1).max().unwrap_or(0);
    let p = triples.iter().map(|t| t.1 + 1).max().unwrap_or(0);
    Ok((q, p))
}
