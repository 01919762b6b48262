//! Experiment harness for manifold-learning flows: configuration,
//! checkpoints, and the `train`, `sample`, `eval`, `mcmc` and `landscape`
//! subcommands.

pub mod artifacts;
pub mod checkpoint;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] mflow::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use mflow::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(
                E::Diverged { .. }
                | E::NonFinite(_)
                | E::SinkhornNotConverged { .. }
                | E::DegenerateGram { .. }
                | E::Integration { .. }
                | E::SplineParams(_),
            ) => 3,
            CliError::Core(E::InvalidArgument(_) | E::Unsupported(_) | E::Dimension { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mflow", version, about = "Train and evaluate manifold-learning flows")]
pub struct Cli {
    /// Config file with `section.key = value` entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the `out` key.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Sets any config key; repeatable, applied after the file.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes model.ckpt, losses.csv and train_report.*.
    Train,
    /// Draw samples from a checkpoint into samples.csv.
    Sample {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compute metrics for a checkpoint into report.*.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sample the mixture parameter posterior into chain.csv and mcmc_report.*.
    Mcmc {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Tabulate the line-model loss landscape into landscape.csv.
    Landscape,
}

impl Cli {
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("out={}", toml::Value::String(o.display().to_string())));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.experiment()?;
    let default_ckpt = || cfg.out.join(commands::CHECKPOINT_FILE);
    match &cli.command {
        Command::Train => {
            let out = commands::run_train(&cfg)?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("losses: {}", out.losses.display());
        }
        Command::Sample { checkpoint } => {
            let path = commands::run_sample(&cfg, &checkpoint.clone().unwrap_or_else(default_ckpt))?;
            println!("samples: {}", path.display());
        }
        Command::Eval { checkpoint } => {
            let report = commands::run_eval(&cfg, &checkpoint.clone().unwrap_or_else(default_ckpt))?;
            print!("{}", report.to_text());
        }
        Command::Mcmc { checkpoint } => {
            let path = checkpoint.clone().unwrap_or_else(default_ckpt);
            let report = commands::run_mcmc(&cfg, Some(&path))?;
            print!("{}", report.to_text());
        }
        Command::Landscape => {
            let path = commands::run_landscape(&cfg)?;
            println!("landscape: {}", path.display());
        }
    }
    Ok(())
}
