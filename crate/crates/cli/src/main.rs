use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

mod commands;
mod config;

/// Audio/text emotion classification with a contrastive regularizer.
#[derive(Parser)]
#[command(name = "emofuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with controlled cross-modal conflicts.
    Gencorpus(GencorpusArgs),
    /// Turn 16 kHz WAV files and embedding files into a feature file.
    Featurize(FeaturizeArgs),
    /// Train one model on one fold.
    Train(TrainArgs),
    /// Score a checkpoint on a fold's test part.
    Eval(EvalArgs),
    /// Cross-validated search over the contrastive weight.
    Gridsearch(GridsearchArgs),
    /// Finite-difference check of every op and the full objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct Common {
    /// JSON file with defaults for any flag (keys use `_` for `-`).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to one per core).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GencorpusArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub audio_scale: Option<f64>,
    #[arg(long)]
    pub text_scale: Option<f64>,
    #[arg(long)]
    pub min_text_len: Option<usize>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Directory holding `<utterance>.wav` and `<utterance>.emb`.
    #[arg(long)]
    pub wav_dir: Option<PathBuf>,
    /// Lines of `<utterance> <label>`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct DataArgs {
    /// A feature file (`.cfe`) or a manifest listing feature files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Seed for the fold assignment (defaults to 0).
    #[arg(long)]
    pub fold_seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct HyperArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train without the pair discriminator (only valid with alpha 0).
    #[arg(long)]
    pub no_discriminator: bool,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Which part of the fold to score: test, validation, train or all.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GridsearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Contrastive weight of the composite objective.
    #[arg(long)]
    pub alpha: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
