use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rfmp_cli::Command;

/// Riemannian flow matching policies.
#[derive(Parser)]
#[command(name = "rfmp", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted overrides, e.g. `--train.epochs 5 --t-end 2.0`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset at `paths.dataset`.
    GenData(Common),
    /// Train a vector field and write `paths.checkpoint` and loss.csv.
    Train(Common),
    /// Run seeded reach episodes with a trained policy.
    Rollout(Common),
    /// Draw unconditional samples from a trained model.
    Sample(Common),
    /// Run the invariant suite.
    EvalProperties(Common),
    /// Print the config after overrides and defaults.
    ShowConfig(Common),
}

fn main() -> ExitCode {
    let (cmd, common) = match Cli::parse().command {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Rollout(c) => (Command::Rollout, c),
        Cmd::Sample(c) => (Command::Sample, c),
        Cmd::EvalProperties(c) => (Command::EvalProperties, c),
        Cmd::ShowConfig(c) => (Command::ShowConfig, c),
    };
    let code = rfmp_cli::run(cmd, common.config.as_deref(), &common.overrides);
    ExitCode::from(code as u8)
}
