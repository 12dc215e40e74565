use std::path::PathBuf;

use clap::{Parser, Subcommand};

use eagle_cli::config::ExperimentConfig;
use eagle_cli::{commands, exit_code, precision_from_env, Precision};
use eagle_core::{Error, Result, Scalar};

#[derive(Parser)]
#[command(
    name = "eagle",
    version,
    about = "Structured filter pruning: train, search pruning strategies, fine-tune, report"
)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every section seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for candidate evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full-size model and write its checkpoint.
    Train,
    /// Sample, evaluate, and rank pruning candidates from a trained model.
    Search {
        /// Full-model checkpoint to prune.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fine-tune a pruned checkpoint, logging per-epoch weight histograms.
    Finetune {
        /// Pruned (or any) checkpoint to fine-tune.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fine-tune every candidate in the given files and correlate
    /// evaluation scores with fine-tuned accuracy.
    Correlate {
        /// Full-model checkpoint the candidates were sampled from.
        #[arg(long)]
        checkpoint: PathBuf,
        /// label=path pairs of candidate result files; repeatable.
        #[arg(long = "candidates", required = true)]
        candidates: Vec<String>,
    },
    /// Compare inherited vs recalibrated BN statistics against reference
    /// statistics computed on held-out data.
    BnDistance {
        /// Full-model checkpoint.
        #[arg(long)]
        full: PathBuf,
        /// Pruned checkpoint with an embedded strategy.
        #[arg(long)]
        pruned: PathBuf,
    },
    /// Evaluate a checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One of: train, subval, recalib, test.
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn dispatch<T: Scalar>(config: &ExperimentConfig, workers: usize, command: &Command) -> Result<()> {
    match command {
        Command::Train => commands::cmd_train::<T>(config),
        Command::Search { checkpoint } => commands::cmd_search::<T>(config, workers, checkpoint),
        Command::Finetune { checkpoint } => commands::cmd_finetune::<T>(config, checkpoint),
        Command::Correlate {
            checkpoint,
            candidates,
        } => {
            let labeled = candidates
                .iter()
                .map(|arg| {
                    arg.split_once('=')
                        .map(|(label, path)| (label.to_string(), PathBuf::from(path)))
                        .ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "--candidates takes label=path pairs, got \"{arg}\""
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            commands::cmd_correlate::<T>(config, checkpoint, &labeled)
        }
        Command::BnDistance { full, pruned } => commands::cmd_bn_distance::<T>(config, full, pruned),
        Command::Eval { checkpoint, split } => commands::cmd_eval::<T>(config, checkpoint, split),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let precision = precision_from_env()?;
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--config is required".into()))?;
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.override_seeds(seed);
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    match precision {
        Precision::F32 => dispatch::<f32>(&config, cli.workers, &cli.command),
        Precision::F64 => dispatch::<f64>(&config, cli.workers, &cli.command),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
