//! `oneshot-auction`: train, evaluate and sweep one-shot auctions, and
//! render the resulting CSVs as SVG charts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod chart;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(name = "oneshot-auction", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct EvalOverrides {
    /// Valuation samples per seed.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated master seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Reference revenue for the beta ratio.
    #[arg(long)]
    pub benchmark: Option<f64>,
    /// Worker threads (defaults to the number of hardware threads).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one auction on a single bid profile.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate the first bidder's misreports and retrain one auction each.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: EvalOverrides,
    },
    /// Run the evaluation for several noise multipliers.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated noise multipliers, e.g. 0.03,0.05,0.09.
        #[arg(long)]
        sigmas: String,
        /// Also run a baseline with differential privacy disabled.
        #[arg(long)]
        no_dp: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: EvalOverrides,
    },
    /// Render sample-report CSVs as regret and revenue line charts.
    Report {
        /// Sample-report CSV files.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Output directory for regret.svg and revenue.svg.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out } => commands::cmd_train(&config, &out),
        Command::Evaluate {
            config,
            out,
            overrides,
        } => commands::cmd_evaluate(&config, &out, &overrides),
        Command::Sweep {
            config,
            sigmas,
            no_dp,
            out,
            overrides,
        } => commands::cmd_sweep(&config, &sigmas, no_dp, &out, &overrides),
        Command::Report { csv, out } => commands::cmd_report(&csv, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
