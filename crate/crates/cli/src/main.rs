//! `sidepar`: train, evaluate, count, compare and explain from the command line.
//!
//! Every command writes its artifacts under `--out`. Exit status is 0 on
//! success, 1 for invalid input and 2 for failures while running; errors are
//! reported as one JSON object on stderr.

mod commands;
mod explain;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sidepar_core::train::TuningMode;

#[derive(Parser, Debug)]
#[command(name = "sidepar", version, about = "Video pedestrian attribute recognition with side-tuned dual encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write its checkpoint, log and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Count trainable parameters and print the ablation table.
    CountParams(CountArgs),
    /// Train side tuning and the PEFT baselines on the same data and compare.
    ComparePeft(TrainArgs),
    /// Generate a synthetic tracklet dataset.
    SynthData(SynthArgs),
    /// Render attention-rollout heatmaps for one tracklet.
    Explain(ExplainArgs),
    /// Convert a CSV annotation table into a manifest.
    ConvertManifest(ConvertArgs),
}

/// Flags shared by commands that read a run configuration. Flags override
/// values from the file, which override the preset.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tracklet manifest (overrides `data.manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Attribute schema (overrides `data.schema`).
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// What to train: side, frozen, full or peft.
    #[arg(long, value_parser = parse_tuning)]
    pub tuning: Option<TuningMode>,
    /// Number of optimizer steps (overrides epochs).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Frames sampled per tracklet.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Seed for data order and frame sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run configuration; its data and train sections override the checkpoint's.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest to evaluate (defaults to the one the checkpoint was trained on).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split to evaluate: train or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Decision threshold on probabilities.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    /// Run configuration; defaults to the full-scale preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Attribute schema; defaults to the bundled reconstructed MARS-style schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of tracklets.
    #[arg(long, default_value_t = 32)]
    pub num: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attribute schema to render; defaults to the built-in synthetic schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Trailing fraction of tracklets assigned to the test split.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Tracklet id.
    #[arg(long)]
    pub tracklet: String,
    /// Attribute name (for example "motion walking") or index.
    #[arg(long)]
    pub attribute: String,
    /// Manifest holding the tracklet (defaults to the checkpoint's).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Heatmap opacity in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// CSV with columns id, split, frames and one column per attribute group.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Attribute schema.
    #[arg(long)]
    pub schema: PathBuf,
    /// mars, duke or generic; mars and duke check the attribute count.
    #[arg(long, default_value = "generic")]
    pub layout: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_tuning(s: &str) -> Result<TuningMode, String> {
    match s {
        "side" => Ok(TuningMode::Side),
        "frozen" => Ok(TuningMode::Frozen),
        "full" => Ok(TuningMode::Full),
        "peft" => Ok(TuningMode::Peft),
        other => Err(format!("unknown tuning '{other}' (side, frozen, full or peft)")),
    }
}

fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_record("usage", first));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(e.kind(), &e.to_string()));
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
