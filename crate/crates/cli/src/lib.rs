//! Command-line front end: dataset generation, training, evaluation sweeps,
//! runtime benchmarking, and plot-ready CSV export.

pub mod commands;
pub mod common;
pub mod config;

use clap::{Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;

/// A bad invocation (exit code 2) as opposed to a runtime failure (3).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

#[macro_export]
macro_rules! usage_bail {
    ($($arg:tt)*) => {
        return Err($crate::UsageError(format!($($arg)*)).into())
    };
}

#[derive(Parser, Debug)]
#[command(
    name = "graphtrack",
    version,
    about = "Track graph signals through nonlinear state-space models: EKF, \
             graph-filter EKF, and a learned-gain filter"
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset of simulated trajectories.
    Simulate(commands::simulate::SimulateArgs),
    /// Train the learned-gain filter on a dataset.
    Train(commands::train::TrainArgs),
    /// Evaluate one filter on a dataset.
    Eval(commands::eval::EvalArgs),
    /// Sweep filters across a noise grid, writing a plot-ready CSV.
    Sweep(commands::sweep::SweepArgs),
    /// Measure per-step filter runtimes across graph sizes.
    Bench(commands::bench::BenchArgs),
}

/// Runs a parsed invocation. Errors carrying a [`UsageError`] should exit
/// with code 2, anything else with 3.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => config::ConfigFile::load(path)?,
        None => config::ConfigFile::default(),
    };
    match cli.command {
        Command::Simulate(args) => commands::simulate::run(&file, args),
        Command::Train(args) => commands::train::run(&file, args),
        Command::Eval(args) => commands::eval::run(&file, args),
        Command::Sweep(args) => commands::sweep::run(&file, args),
        Command::Bench(args) => commands::bench::run(&file, args),
    }
}
