//! `singtech`: train, evaluate, and inspect the singing-technique classifier.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "singtech", version, about = "Singing-technique classifier experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, the epoch log, and a final report.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(commands::eval::EvalArgs),
    /// Finite-difference checks of every differentiable operation.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Parameter counts and deltas for all five placements.
    Params(commands::params::ParamsArgs),
    /// Generate the synthetic long-tail corpus.
    Synth(commands::synth::SynthArgs),
    /// Precompute spectrogram caches for a corpus.
    Features(commands::features::FeaturesArgs),
}

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_NUMERIC: i32 = 3;

fn classify_error(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<singtech::Error>() {
        Some(singtech::Error::Numeric(_)) => EXIT_NUMERIC,
        Some(singtech::Error::InvalidArg(_)) => EXIT_USAGE,
        Some(_) => EXIT_DATA,
        None => EXIT_DATA,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output is not an error.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Params(args) => commands::params::run(args),
        Command::Synth(args) => commands::synth::run(args),
        Command::Features(args) => commands::features::run(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(classify_error(&err));
        }
    }
}
