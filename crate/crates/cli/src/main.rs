//! `bayesic`: generate, train, score, evaluate, fuse and ablate runs.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bayesic", version, about = "Per-agent mobility anomaly detection with a chain-rule density cascade")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; falls back to $BAYESIC_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set training.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory receiving every artifact and the run manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test set with injected anomalies.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the cascade and write a checkpoint plus training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training staypoint CSV.
        #[arg(long)]
        train: PathBuf,
    },
    /// Score a test set with a trained checkpoint.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test staypoint CSV.
        #[arg(long)]
        test: PathBuf,
    },
    /// Compute metrics and curves at staypoint and agent level.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// `scores.csv` from `score`.
        #[arg(long)]
        scores: PathBuf,
        /// Labeled test staypoint CSV the scores came from.
        #[arg(long)]
        test: PathBuf,
        /// `agent_id,label` CSV; defaults to labels derived from staypoints.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Multiply model agent scores by normalized visit-rate scores.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// `agent_scores.csv` from `score`.
        #[arg(long)]
        agent_scores: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train and evaluate the full pipeline and each single-component ablation.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common }
            | Command::Train { common, .. }
            | Command::Score { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Fuse { common, .. }
            | Command::Ablate { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let path = config::config_path(common.config.as_deref());
    let cfg = config::resolve(path.as_deref(), &common.overrides)?;
    let out = common.out_dir.as_path();
    let manifest = match &cli.command {
        Command::Generate { .. } => commands::generate_cmd(&cfg, out)?,
        Command::Train { train, .. } => commands::train_cmd(&cfg, out, train)?,
        Command::Score { checkpoint, test, .. } => commands::score_cmd(&cfg, out, checkpoint, test)?,
        Command::Evaluate { scores, test, labels, .. } => {
            commands::evaluate_cmd(&cfg, out, scores, test, labels.as_deref())?
        }
        Command::Fuse { agent_scores, train, test, labels, .. } => {
            commands::fuse_cmd(&cfg, out, agent_scores, train, test, labels.as_deref())?
        }
        Command::Ablate { train, test, labels, .. } => {
            commands::ablate_cmd(&cfg, out, train, test, labels.as_deref())?
        }
    };
    eprintln!("manifest: {}", manifest.display());
    Ok(())
}
