//! Command-line driver for sparse shift networks: dataset ingestion, JSON configs,
//! binary checkpoints, and the `train`, `eval`, `cost`, `sparsity`, `ablate` and
//! `bench` subcommands.

pub mod checkpoint;
pub mod cifar;
pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Overrides;
use crate::config::{BenchConfig, Config};
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sparse-shift", version, about = "Train, inspect and benchmark sparse shift networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write metrics.csv and model.ckpt to the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training seed (overrides `train.seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Iteration count (overrides `train.total_iters`).
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Report test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print multiply-adds and parameter count; accepts a run config or a bare arch document.
    Cost {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print per-layer shift sparsity of a checkpoint.
    Sparsity {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Remove the most sparse shift layers and re-evaluate.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of layers to remove; omit to sweep from none to all.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run kernel micro-benchmarks and per-operator decompositions.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Directory for CSV reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Executes one parsed command line, writing reports to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out: dir, seed, iters } => {
            let mut cfg = Config::load(&config)?;
            Overrides { out: dir, seed, iters }.apply(&mut cfg)?;
            commands::cmd_train(&cfg, out).map(drop)
        }
        Command::Eval { config, checkpoint } => commands::cmd_eval(&Config::load(&config)?, &checkpoint, out).map(drop),
        Command::Cost { config } => commands::cmd_cost(&commands::load_arch(&config)?, out).map(drop),
        Command::Sparsity { checkpoint } => commands::cmd_sparsity(&checkpoint, out).map(drop),
        Command::Ablate { config, checkpoint, k } => {
            commands::cmd_ablate(&Config::load(&config)?, &checkpoint, k, out).map(drop)
        }
        Command::Bench { config, out: dir } => {
            commands::cmd_bench(&BenchConfig::load(&config)?, dir.as_deref(), out).map(drop)
        }
    }
}
