//! `secfed` — run, sweep and self-check secure-aggregation experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use secfed_core::cli::{cmd_run, cmd_selfcheck, cmd_sweep, CliOverrides};

#[derive(Parser)]
#[command(
    name = "secfed",
    about = "Secure federated aggregation simulator: Paillier AHE, block-Hankel pruning, \
             Gaussian DP, two-server masked decryption",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct OverrideArgs {
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's round count.
    #[arg(long)]
    rounds: Option<u32>,
    /// Override the config's dropout rate.
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<String>,
}

impl From<&OverrideArgs> for CliOverrides {
    fn from(args: &OverrideArgs) -> Self {
        CliOverrides {
            seed: args.seed,
            rounds: args.rounds,
            dropout_rate: args.dropout_rate,
            output_dir: args.output_dir.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation from a TOML experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the dropout-rate comparison sweep.
    Sweep {
        config: PathBuf,
        /// Comma-separated dropout rates, e.g. "0,0.25,0.5,0.75".
        #[arg(long)]
        dropout_rates: String,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the fast invariant suite and print a pass/fail table.
    Selfcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, overrides } => cmd_run(config, &overrides.into()),
        Command::Sweep {
            config,
            dropout_rates,
            overrides,
        } => cmd_sweep(config, dropout_rates, &overrides.into()),
        Command::Selfcheck => Ok(cmd_selfcheck()),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
