//! `pirbf` command-line front end.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csv;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "pirbf", version, about = "Physics-informed RBF networks for Black-Scholes pricing")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (PIRBF_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress per-iteration progress on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from a config file.
    Train,
    /// Train once per seed and summarise the spread.
    Sweep(SweepArgs),
    /// Resume a checkpoint against changed problem parameters.
    Finetune(FinetuneArgs),
    /// Price points with the closed form, Monte Carlo or a trained network.
    Price(PriceArgs),
    /// Evaluate a trained network on a grid.
    Surface(SurfaceArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Seeds as a list and/or ranges, e.g. `1,2,5-8`.
    #[arg(long, required = true)]
    pub seeds: String,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Checkpoint written by `train` (checkpoint.json).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Problem parameter override, e.g. `sigma.0=0.3`, `r=0.04`, `rho.0.1=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriceMode {
    ClosedForm,
    Mc,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    Auto,
    ClosedForm,
    Mc,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableArg {
    Exchange,
    Basket,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    /// Pricer to use.
    #[arg(long, value_enum)]
    pub mode: PriceMode,
    /// Problem preset (defaults to the checkpoint's problem in network mode).
    #[arg(long)]
    pub problem: Option<String>,
    /// Checkpoint of a trained network (network mode).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// A point `S1,...,Sd,t`; repeatable.
    #[arg(long = "point", value_name = "S1,..,t")]
    pub points: Vec<String>,
    /// CSV file of points with a header row.
    #[arg(long)]
    pub points_file: Option<PathBuf>,
    /// One of the published table layouts.
    #[arg(long, value_enum)]
    pub table: Option<TableArg>,
    /// Reference pricer for network mode.
    #[arg(long, value_enum, default_value = "auto")]
    pub reference: ReferenceArg,
    /// Monte Carlo paths.
    #[arg(long, default_value_t = 1_000_000)]
    pub paths: u64,
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    /// Checkpoint written by `train` (checkpoint.json).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Grid axis `name=lo:hi:n` with name `s1`..`sd` or `t`; repeatable.
    #[arg(long = "axis", value_name = "NAME=LO:HI:N")]
    pub axes: Vec<String>,
    /// Fixed coordinate `name=value`; repeatable.
    #[arg(long = "fix", value_name = "NAME=VALUE")]
    pub fixed: Vec<String>,
    /// Diagonal `lo:hi:n` with every asset equal.
    #[arg(long)]
    pub diagonal: Option<String>,
    /// Time slices for the diagonal grid; repeatable.
    #[arg(long = "time")]
    pub times: Vec<f64>,
}

/// Worker threads from `PIRBF_THREADS`, falling back to `--threads`.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("PIRBF_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidConfig(format!("PIRBF_THREADS: expected a positive integer, got `{v}`"))),
        Err(_) => Ok(flag),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        // a pool may already exist when called from tests; keep it then
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let progress = !cli.quiet;
    match &cli.command {
        Command::Train => commands::cmd_train(&cli, progress),
        Command::Sweep(a) => commands::cmd_sweep(&cli, a, progress),
        Command::Finetune(a) => commands::cmd_finetune(&cli, a, progress),
        Command::Price(a) => commands::cmd_price(&cli, a),
        Command::Surface(a) => commands::cmd_surface(&cli, a),
    }
}
