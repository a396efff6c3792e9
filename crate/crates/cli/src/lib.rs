//! Library side of the `tandem` experiment runner.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "tandem", version, about = "SPRT with TANDEM density-ratio estimation on synthetic data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (`tandem-config v1` JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override `dataset.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for trial and batch parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Skip SVG output.
    #[arg(long, global = true)]
    pub no_plots: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write train/val/test datasets.
    Generate,
    /// Train the estimator and write a snapshot plus `train_report.csv`.
    Train,
    /// SAT curve, error rates and per-sequence decisions on the test set.
    Evaluate,
    /// SPRT versus Neyman-Pearson sample efficiency.
    NpCompare,
    /// Check the implementation against closed-form oracles.
    OracleCheck,
    /// Train and evaluate each loss configuration.
    Ablation,
}

/// Load the config and apply command-line overrides.
pub fn resolve_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let path = g.config.as_deref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = g.seed {
        cfg.dataset.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("--threads")?;
    }
    let cfg = resolve_config(&cli.global)?;
    let run = commands::Run::new(cfg, !cli.global.no_plots)?;
    match cli.command {
        Command::Generate => commands::generate(&run),
        Command::Train => commands::train(&run),
        Command::Evaluate => commands::evaluate(&run),
        Command::NpCompare => commands::np_compare(&run),
        Command::OracleCheck => commands::oracle_check(&run),
        Command::Ablation => commands::ablation(&run),
    }
}
