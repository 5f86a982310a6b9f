//! `gat`: batch front end for zero-curvature checks, option pricing,
//! finite-difference solves, solver comparison and Monte Carlo estimation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gat_core::cli::{run, Command, RunArgs};

#[derive(Debug, Parser)]
#[command(name = "gat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Zero-curvature residual, arbitrage measure and kernel dimension per time point.
    CheckZc(Common),
    /// Call price surface from the perturbation series.
    Price(Common),
    /// Call price surface from the finite-difference solver.
    SolvePde(Common),
    /// Perturbation versus finite differences, with the convergence-order table.
    Compare(Common),
    /// Monte Carlo ensemble and empirical arbitrage-measure report.
    Simulate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::CheckZc(c) => (Command::CheckZc, c),
        Sub::Price(c) => (Command::Price, c),
        Sub::SolvePde(c) => (Command::SolvePde, c),
        Sub::Compare(c) => (Command::Compare, c),
        Sub::Simulate(c) => (Command::Simulate, c),
    };
    let args = RunArgs {
        config: common.config,
        out: common.out,
        seed: common.seed,
    };
    match run(command, &args) {
        Ok(outcome) => {
            println!("{}: {}", command.name(), outcome.summary);
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("gat {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
