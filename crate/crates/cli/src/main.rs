//! `scatter`: score, evaluate, sweep and train from the command line.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 transport (embedding
//! service or offline cache miss), 4 numeric failure, 5 storage.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use scatter_core::{ErrorClass, Result};

use crate::args::{Cli, Command};
use crate::config::FileConfig;

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Input => 2,
        ErrorClass::Transport => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::Storage => 5,
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| scatter_core::Error::Config(e.to_string()))?;
    }
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match &cli.command {
        Command::Score(a) => commands::score(&file, a),
        Command::Evaluate(a) => commands::evaluate(&file, a),
        Command::TrainToy(a) => commands::train_toy(&file, a, seed),
        Command::Sweep(a) => commands::sweep(&file, a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
