//! `mri-forge` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input or usage.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mri_forge_core::dataset::CorpusTag;

/// Input that fails validation; maps to exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(
    name = "mri-forge",
    version,
    about = "SSIM/MRI tooling and DeepFake dataset pipeline"
)]
struct Cli {
    /// Worker threads (default: one per core). Output does not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run configuration (TOML); falls back to $MRI_FORGE_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the mean SSIM of two images.
    Ssim(SsimArgs),
    /// Write the MRI (1 - SSIM per pixel) of two images.
    Mri(MriArgs),
    /// Apply augmentations to one image.
    Augment(AugmentArgs),
    /// Overlay a distraction on a directory of frames.
    Distract(DistractArgs),
    /// Generate the synthetic fake/real video corpus.
    SynthCorpus(SynthArgs),
    /// Build the paired face/MRI dataset and its manifest.
    MakeDataset(DatasetArgs),
    /// Write a balanced epoch sample of a manifest.
    EpochSample(EpochArgs),
    /// Recompute loss terms for dumped predictions.
    EvalLosses(LossArgs),
    /// Aggregate face scores into video verdicts and metrics.
    Detect(DetectArgs),
    /// Same as `detect --grid`.
    GridSearch(DetectArgs),
}

#[derive(Args, Debug)]
struct SsimOpts {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    #[arg(long)]
    dynamic_range: Option<f64>,
}

#[derive(Args, Debug)]
struct SsimArgs {
    a: PathBuf,
    b: PathBuf,
    /// Also write the SSIM map (clamped to [0, 1], scaled to 8 bits).
    #[arg(long)]
    map: Option<PathBuf>,
    #[command(flatten)]
    ssim: SsimOpts,
}

#[derive(Args, Debug)]
struct MriArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the unclamped values next to the PNG as `<out>.mri`.
    #[arg(long)]
    raw: bool,
    #[command(flatten)]
    ssim: SsimOpts,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Explicit augmentation as JSON, e.g. '{"kind":"gaussian","variance":16}'.
    /// Repeat to chain. Without it a plan is drawn from the policy.
    #[arg(long = "spec")]
    specs: Vec<String>,
    /// Plan policy (TOML).
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DistractArgs {
    input_dir: PathBuf,
    output_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Explicit distraction as JSON; drawn from the policy otherwise.
    #[arg(long)]
    spec: Option<String>,
    /// Distraction policy (TOML).
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    n_videos: usize,
    #[arg(long = "frames", default_value_t = 10)]
    frames_per_video: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value = "dfdc")]
    corpus: CorpusTag,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    sources: Option<PathBuf>,
    #[arg(long)]
    boxes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Build policy (TOML).
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    face_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct EpochArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    epoch: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<SplitArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum L2Arg {
    Mse,
    Norm,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding predictions.jsonl.
    #[arg(long)]
    predictions: PathBuf,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    l2_mode: Option<L2Arg>,
    #[arg(long)]
    real_label: Option<f64>,
    #[arg(long)]
    fake_label: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    PlainFrames,
    MriBased,
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Face scores (JSONL).
    #[arg(long)]
    scores: PathBuf,
    /// Video labels (JSONL).
    #[arg(long)]
    labels: PathBuf,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with_all = ["threshold", "fraction"])]
    preset: Option<Preset>,
    #[arg(long, requires = "fraction")]
    threshold: Option<f64>,
    #[arg(long, requires = "threshold")]
    fraction: Option<f64>,
    /// Choose the parameters by grid search.
    #[arg(long, conflicts_with_all = ["preset", "threshold", "fraction"])]
    grid: bool,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 2;
    }
    match err.downcast_ref::<mri_forge_core::Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
