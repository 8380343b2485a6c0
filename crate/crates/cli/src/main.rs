//! Command-line front door: reproducible runs of scoring, training,
//! summarization and evaluation over feature-matrix datasets.
//!
//! Exit codes: 0 success, 1 bad input (paths, flags, malformed data),
//! 2 internal error (shape bugs, diverged training).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vidsum_core::metrics::{DEFAULT_EPSILON, DEFAULT_NEIGHBOR_RATIO, DEFAULT_SMOOTH_SIGMA};
use vidsum_core::refine::TrainConfig;
use vidsum_core::summarize::{DEFAULT_SHOT_LEN, DEFAULT_SUMMARY_RATIO};
use vidsum_core::synth::SynthSpec;
use vidsum_core::Error;

#[derive(Parser)]
#[command(
    name = "vidsum",
    version,
    about = "Per-frame importance and summary evaluation for videos given as feature matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted key, redundant and
    /// background frames.
    Synth(SynthArgs),
    /// Score every frame of every manifest video by importance.
    Score(ScoreArgs),
    /// Train the projector and uniqueness filter on manifest videos.
    Train(TrainArgs),
    /// Turn per-frame scores into knapsack-selected shot summaries.
    Summarize(SummarizeArgs),
    /// Cross-validated evaluation against reference annotations.
    Eval(EvalArgs),
}

/// Multiplicative factors of the importance product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Metric {
    /// Mean squared distance to the nearest-neighbor set.
    Align,
    /// Log-mean-exp closeness to all other frames.
    Uniform,
    /// Trained uniqueness-filter probability (needs a model).
    Filter,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Align => "align",
            Metric::Uniform => "uniform",
            Metric::Filter => "filter",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SettingArg {
    Canonical,
    Augmented,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AggArg {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScorerArg {
    /// Signals computed directly on the pretrained features.
    Free,
    /// Signals computed on trained projections, plus the filter head.
    Refined,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Directory that receives features/, references/, manifest.json and
    /// labels.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().n_videos)]
    videos: usize,
    #[arg(long, default_value_t = SynthSpec::default().frames)]
    frames: usize,
    #[arg(long, default_value_t = SynthSpec::default().dim)]
    dim: usize,
    /// Theme directions per video.
    #[arg(long, default_value_t = SynthSpec::default().n_clusters)]
    clusters: usize,
    /// Near-duplicate frames planted per theme.
    #[arg(long, default_value_t = SynthSpec::default().redundancy)]
    redundancy: usize,
    #[arg(long, default_value_t = SynthSpec::default().noise_sigma)]
    noise: f64,
    /// Fraction of frames that are key frames.
    #[arg(long, default_value_t = SynthSpec::default().key_fraction)]
    key_fraction: f64,
    /// Background directions shared across videos; 0 disables background.
    #[arg(long, default_value_t = SynthSpec::default().background_pool)]
    pool: usize,
    #[arg(long, default_value_t = SynthSpec::default().seed)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    /// Dataset manifest; video paths are resolved relative to it.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory that receives scores.json, per-video CSVs and
    /// config.json.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated factors to multiply; `filter` needs --checkpoint.
    #[arg(long, value_delimiter = ',', default_values_t = [Metric::Align, Metric::Uniform])]
    metrics: Vec<Metric>,
    /// Fraction of frames in each neighbor set (ignored with
    /// --checkpoint, which carries its own).
    #[arg(long, default_value_t = DEFAULT_NEIGHBOR_RATIO)]
    neighbor_ratio: f64,
    /// Additive floor of the combined importance.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Gaussian smoothing width in frames; 0 disables smoothing.
    #[arg(long, default_value_t = DEFAULT_SMOOTH_SIGMA)]
    sigma: f64,
    /// Score on trained projections from this checkpoint instead of the
    /// raw features.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads for per-video scoring; 0 picks the CPU count.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Serialize)]
struct TrainFlags {
    #[arg(long, default_value_t = TrainConfig::default().proj_dim)]
    proj_dim: usize,
    #[arg(long, default_value_t = TrainConfig::default().hidden_dim)]
    hidden_dim: usize,
    #[arg(long, default_value_t = TrainConfig::default().filter_hidden)]
    filter_hidden: usize,
    /// Frames pooled into one segment for the uniqueness signal.
    #[arg(long, default_value_t = TrainConfig::default().segment_len)]
    segment_len: usize,
    /// Fraction of frames in each neighbor set.
    #[arg(long, default_value_t = TrainConfig::default().neighbor_ratio)]
    neighbor_ratio: f64,
    /// Weight of the global-consistency term.
    #[arg(long, default_value_t = TrainConfig::default().lambda1)]
    lambda1: f64,
    /// Weight of the uniqueness term.
    #[arg(long, default_value_t = TrainConfig::default().lambda2)]
    lambda2: f64,
    /// Weight of the filter term.
    #[arg(long, default_value_t = TrainConfig::default().lambda3)]
    lambda3: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    seed: u64,
    /// Resample every training video to this many frames before fitting;
    /// 0 keeps original lengths.
    #[arg(long, default_value_t = vidsum_core::featureio::DEFAULT_TARGET_LENGTH)]
    target_length: usize,
}

impl TrainFlags {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            proj_dim: self.proj_dim,
            hidden_dim: self.hidden_dim,
            filter_hidden: self.filter_hidden,
            segment_len: self.segment_len,
            neighbor_ratio: self.neighbor_ratio,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest; all its videos become the training batch.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory that receives model.ckpt, loss_history.csv and
    /// config.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Dataset manifest; supplies frame counts and shot boundaries.
    #[arg(long)]
    manifest: PathBuf,
    /// scores.json produced by `score` (video id to per-frame scores).
    #[arg(long)]
    scores: PathBuf,
    /// Directory that receives summary.json and config.json.
    #[arg(long)]
    out: PathBuf,
    /// Summary length as a fraction of the video length.
    #[arg(long, default_value_t = DEFAULT_SUMMARY_RATIO)]
    ratio: f64,
    /// Fixed shot length for videos without manifest shot boundaries.
    #[arg(long, default_value_t = DEFAULT_SHOT_LEN)]
    shot_len: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset manifest with videos, folds and references.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory that receives results.csv, per_video.csv, result.json
    /// and config.json.
    #[arg(long)]
    out: PathBuf,
    /// Cross-validation setting; defaults to the manifest's.
    #[arg(long)]
    setting: Option<SettingArg>,
    /// How multiple reference summaries aggregate into one F1; defaults
    /// to the manifest's, then mean.
    #[arg(long)]
    agg: Option<AggArg>,
    #[arg(long, value_enum, default_value_t = ScorerArg::Free)]
    scorer: ScorerArg,
    /// Factors to multiply; defaults to align,uniform for --scorer free
    /// and align,uniform,filter for --scorer refined.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    /// Additive floor of the combined importance.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Gaussian smoothing width in frames; 0 disables smoothing.
    #[arg(long, default_value_t = DEFAULT_SMOOTH_SIGMA)]
    sigma: f64,
    /// Summary length as a fraction of the video length.
    #[arg(long, default_value_t = DEFAULT_SUMMARY_RATIO)]
    ratio: f64,
    /// Fixed shot length for videos without manifest shot boundaries.
    #[arg(long, default_value_t = DEFAULT_SHOT_LEN)]
    shot_len: usize,
    /// Evaluate this trained model instead of fitting per fold; its
    /// stored hyperparameters replace the training flags.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Shape(_) | Error::TrainingDiverged(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth(&args),
        Command::Score(args) => commands::score(&args),
        Command::Train(args) => commands::train(&args),
        Command::Summarize(args) => commands::summarize(&args),
        Command::Eval(args) => commands::eval(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
