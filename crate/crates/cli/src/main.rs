//! `mricnn`: phantom synthesis, preprocessing, training, evaluation and
//! gradient checking from the command line.
//!
//! Exit codes: 0 success, 1 failed gradient check or internal error,
//! 2 usage or input error, 3 checkpoint mismatch, 4 numerical divergence.

mod gradcheck_cmd;
mod manifest;
mod preprocess_cmd;
mod synth_cmd;
mod train_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "mricnn",
    version,
    about = "Slice-based CNN pipeline for NC / MCI / AD classification"
)]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate labeled phantom volumes.
    Synth(synth_cmd::SynthArgs),
    /// Turn labeled volumes into a slice corpus.
    Preprocess(preprocess_cmd::PreprocessArgs),
    /// Train a network on a slice corpus.
    Train(train_cmd::TrainArgs),
    /// Evaluate a checkpoint on a corpus split.
    Evaluate(train_cmd::EvaluateArgs),
    /// Compare back-propagated gradients with finite differences.
    Gradcheck(gradcheck_cmd::GradcheckArgs),
}

/// Raised when a gradient check exceeds its tolerance.
#[derive(Debug)]
pub struct GradcheckFailed;

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("gradient check exceeded tolerance")
    }
}

impl std::error::Error for GradcheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use mricnn::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<GradcheckFailed>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::CheckpointMismatch(_) => 3,
                E::Divergence { .. } | E::NonFinite(_) => 4,
                E::Internal(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Synth(a) => synth_cmd::run(a),
        Command::Preprocess(a) => preprocess_cmd::run(a),
        Command::Train(a) => train_cmd::run_train(a),
        Command::Evaluate(a) => train_cmd::run_evaluate(a),
        Command::Gradcheck(a) => gradcheck_cmd::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
