//! Command-line front end: dataset generation, training, closed-loop
//! rollouts, unconditional sampling and the invariant suite.
//!
//! Every command reads one JSON config (`--config`) and dotted overrides such
//! as `--train.epochs 5` or `--nfe 1`. Exit codes: 0 success, 1 property
//! failure, 2 config error, 3 I/O error, 4 numeric divergence.

pub mod commands;
pub mod config;
pub mod error;

use std::path::Path;

pub use config::{load_config, parse_overrides, Command, RunConfig};
pub use error::{CliError, CliResult};

/// Loads, validates and runs `cmd`.
pub fn execute(cmd: Command, config: Option<&Path>, overrides: &[String]) -> CliResult<()> {
    let pairs = parse_overrides(overrides)?;
    let v = load_config(config, &pairs)?.validate(cmd)?;
    match cmd {
        Command::GenData => commands::gen_data(&v),
        Command::Train => commands::train_cmd(&v),
        Command::Rollout => commands::rollout(&v),
        Command::Sample => commands::sample(&v),
        Command::EvalProperties => commands::eval_properties(&v),
        Command::ShowConfig => commands::show_config(&v),
    }
}

/// [`execute`], reporting errors on stderr and returning the exit code.
pub fn run(cmd: Command, config: Option<&Path>, overrides: &[String]) -> i32 {
    match execute(cmd, config, overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
