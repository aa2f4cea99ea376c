//! Command-line pipeline: synth, flow, filter, preprocess, train, eval, infer, render.

pub mod commands;
pub mod config;
pub mod rundir;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

/// Marks errors caused by bad invocations (exit code 2) as opposed to failures
/// inside the pipeline (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "flowmotion", version, about = "Optical-flow based still/moving vehicle classification")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; must not exist yet.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes with ground-truth flow.
    Synth(SynthArgs),
    /// Estimate optical flow for the frame pairs of each scene.
    Flow(FlowArgs),
    /// Filter annotations, build labeled samples and split them.
    Filter(FilterArgs),
    /// Crop and resize flow ROIs for every sample.
    Preprocess(PreprocessArgs),
    /// Train the classifier on preprocessed ROIs.
    Train(TrainArgs),
    /// Compute precision, recall and F1.
    Eval(EvalArgs),
    /// Draw predicted labels onto scene frames.
    Infer(InferArgs),
    /// Render a flow file with the color-wheel coding.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of one-object scenes.
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Image width and height in pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// A scene directory or a directory of scenes.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Pair frame i with frame i + N instead of consecutive keyframes.
    #[arg(long)]
    pub interval: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f32>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// A scene directory or a directory of scenes.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Must match the interval the flow was computed with.
    #[arg(long)]
    pub interval: Option<usize>,
    #[arg(long)]
    pub eval_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub roi_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest written by `preprocess`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub step_size: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predict with this checkpoint; otherwise use the manifest's predictions.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Which samples to score.
    #[arg(long, value_enum, default_value_t = SplitChoice::Eval)]
    pub split: SplitChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Eval,
    All,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A scene directory or a directory of scenes, with flow.
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub interval: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// NPY flow file.
    #[arg(long)]
    pub flow: PathBuf,
    /// Fixed magnitude mapped to full saturation; default is the field maximum.
    #[arg(long)]
    pub max_magnitude: Option<f32>,
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        2
    } else {
        1
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .ok_or_else(|| UsageError::new("--out is required"))?;
    commands::dispatch(cli.command, file, cli.seed, &out)
}
