//! `acbk`: command-line experiments for accent-codebook ASR.
//!
//! Subcommands cover the full pipeline: `gen-data` synthesizes an accented
//! corpus, `split` produces speaker-disjoint train/dev/test manifests,
//! `train` fits a model, `decode` runs the beam-search variants, and
//! `evaluate` scores the results. A full pipeline under one seed is
//! bit-reproducible end to end (wall-clock fields aside).

mod commands;
mod config;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

impl From<acbk_core::data::DataError> for CliError {
    fn from(e: acbk_core::data::DataError) -> Self {
        match e {
            acbk_core::data::DataError::Infeasible(msg) => CliError::Infeasible(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<acbk_core::model::ModelError> for CliError {
    fn from(e: acbk_core::model::ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<acbk_core::model::CheckpointError> for CliError {
    fn from(e: acbk_core::model::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<acbk_core::decoding::DecodeError> for CliError {
    fn from(e: acbk_core::decoding::DecodeError) -> Self {
        match e {
            acbk_core::decoding::DecodeError::Config(msg) => CliError::Config(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<acbk_core::evaluate::EvalError> for CliError {
    fn from(e: acbk_core::evaluate::EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "acbk",
    version,
    about = "Accent-codebook ASR experiments: generate, split, train, decode, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic accented corpus (features + manifest).
    GenData(commands::gen_data::GenDataArgs),
    /// Split a manifest into speaker-disjoint train/dev/test sets.
    Split(commands::split::SplitArgs),
    /// Train a model on a manifest.
    Train(commands::train::TrainArgs),
    /// Decode a manifest with one or more beam-search variants.
    Decode(commands::decode::DecodeArgs),
    /// Score decode outputs: WER tables, significance, heatmap, entropy.
    Evaluate(commands::evaluate::EvaluateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Split(args) => commands::split::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Decode(args) => commands::decode::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
