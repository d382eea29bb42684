//! The `signforge` command line: argument parsing, settings resolution and verb dispatch.

pub mod commands;
pub mod settings;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use signforge_training::Metric;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for bad flags, bad config or bad input files.
pub const EXIT_USER: i32 = 1;
/// Exit code for failures inside the pipeline.
pub const EXIT_INTERNAL: i32 = 2;

/// An error caused by the invocation rather than the pipeline.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const FORMATS: &str = "\
File formats:
  manifest.json   {version, classes[], image_size[h,w], normalization{mean[],std[]},
                  samples[{path,label,split,quality}]}; paths relative to the manifest.
  *.sgnf          binary model weights with the model spec embedded (see docs/formats.md).
  config file     JSON object; keys: seed, max_epochs, batch_size, learning_rate, momentum,
                  patience, min_delta, monitor (val_loss|val_accuracy), augment{rotation_deg,
                  scale[lo,hi], translate, flip_prob, seed}, image_size, val_fraction,
                  quality_threshold, k, tau, idle_ms. Unknown keys are errors.
                  Precedence: command line > config file > defaults.
  frame pipe      repeated [width u32][height u32][index u32] little-endian + RGB24 payload.
  comparison.csv  Model Name,Epochs Executed,Train Accuracy,Train Loss,Validation Accuracy,
                  Validation Loss,Time Train,Time Execution";

#[derive(Debug, Parser)]
#[command(name = "signforge", version, about = "ASL fingerspelling recognition: datasets, training, comparison and live serving", after_long_help = FORMATS)]
pub struct Cli {
    /// Seed for every random choice (splits, initialization, shuffling, augmentation).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// JSON settings file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep every n-th frame of a recorded stream and write the kept frames as PNG.
    #[command(after_long_help = FORMATS)]
    ExtractFrames(ExtractArgs),
    /// Scan letter folders, score image quality, split and write a manifest.
    #[command(after_long_help = FORMATS)]
    BuildDataset(BuildArgs),
    /// Render a small synthetic shapes dataset with a manifest, for smoke tests.
    #[command(after_long_help = FORMATS)]
    SynthShapes(SynthArgs),
    /// Train one model and write a run directory.
    #[command(after_long_help = FORMATS)]
    Train(TrainArgs),
    /// Accuracy and loss of a weights file on a manifest's splits.
    #[command(after_long_help = FORMATS)]
    Evaluate(EvaluateArgs),
    /// Train several models under one configuration and write the comparison table.
    #[command(after_long_help = FORMATS)]
    Compare(CompareArgs),
    /// Run the live recognition service.
    #[command(after_long_help = FORMATS)]
    Serve(ServeArgs),
    /// Classify one image; prints `label prob`.
    #[command(after_long_help = FORMATS)]
    Predict(PredictArgs),
    /// Print the comparison table from run directories or a comparison JSON file.
    #[command(after_long_help = FORMATS)]
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of decoded frames (sorted by file name), or a raw frame pipe file; `-` reads stdin.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
    /// Output directory for `frame_NNNNNN.png`.
    #[arg(long)]
    pub out: PathBuf,
    /// Nominal frame rate of the source.
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Directory with one folder per letter (A-Y, no J).
    #[arg(long)]
    pub root: PathBuf,
    /// Manifest path to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Square side samples are resized to when loaded [default: 32].
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Per-class validation fraction [default: 0.2].
    #[arg(long, conflicts_with = "val_dir")]
    pub val_fraction: Option<f64>,
    /// Separate validation directory with the same letter folders.
    #[arg(long)]
    pub val_dir: Option<PathBuf>,
    /// Drop samples whose sharpness score is below this [default: 0].
    #[arg(long)]
    pub quality_threshold: Option<f64>,
    /// Write dropped samples (path, label, score) here for manual review.
    #[arg(long)]
    pub review_list: Option<PathBuf>,
    /// Write the per-class histogram CSV (`label,count`) here.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Epochs without improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_delta: Option<f64>,
    /// Early-stopping metric.
    #[arg(long, value_parser = parse_metric)]
    pub monitor: Option<Metric>,
    /// Augment training batches (defaults unless the config file sets parameters).
    #[arg(long, conflicts_with = "no_augment")]
    pub augment: bool,
    #[arg(long)]
    pub no_augment: bool,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s {
        "val_loss" => Ok(Metric::ValLoss),
        "val_accuracy" => Ok(Metric::ValAccuracy),
        _ => Err(format!("expected val_loss or val_accuracy, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Registry name (mini-vgg, ...) or a model spec JSON file.
    #[arg(long)]
    pub model: String,
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated registry names or spec files; at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comparison CSV to write; a JSON copy is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one run directory per model under this directory.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Consecutive confident frames to commit a letter [default: 8].
    #[arg(long)]
    pub k: Option<usize>,
    /// Confidence threshold [default: 0.6].
    #[arg(long)]
    pub tau: Option<f32>,
    /// Pause before a word space, milliseconds [default: 1500].
    #[arg(long)]
    pub idle_ms: Option<u64>,
    /// Web client bundle directory served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories written by `train`.
    #[arg(long, num_args = 1.., required_unless_present = "comparison")]
    pub runs: Vec<PathBuf>,
    /// JSON written by `compare`.
    #[arg(long, conflicts_with = "runs")]
    pub comparison: Option<PathBuf>,
    /// Write CSV here instead of printing the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv`, runs the verb and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USER,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            code
        }
    }
}

/// Maps an error chain to `EXIT_USER` or `EXIT_INTERNAL`.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    use signforge_core::models::ModelError;
    use signforge_dataset::DatasetError;
    use signforge_serve::ServeError;
    use signforge_training::TrainError;
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USER;
        }
        if let Some(d) = cause.downcast_ref::<DatasetError>() {
            return if matches!(d, DatasetError::Tensor(_)) { EXIT_INTERNAL } else { EXIT_USER };
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            match t {
                TrainError::Config(_) | TrainError::EmptySplit(_) | TrainError::Io { .. } => return EXIT_USER,
                TrainError::Model(_) | TrainError::Dataset(_) => continue,
                _ => return EXIT_INTERNAL,
            }
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            return match m {
                ModelError::InvalidSpec(_)
                | ModelError::Stage { .. }
                | ModelError::InputShape { .. }
                | ModelError::UnknownModel(_)
                | ModelError::Io(_)
                | ModelError::BadMagic
                | ModelError::Version { .. }
                | ModelError::Truncated
                | ModelError::Checksum { .. }
                | ModelError::Format(_) => EXIT_USER,
                _ => EXIT_INTERNAL,
            };
        }
        if let Some(s) = cause.downcast_ref::<ServeError>() {
            match s {
                ServeError::Config(_) | ServeError::Channels(_) | ServeError::Bind { .. } => return EXIT_USER,
                ServeError::LoadModel { .. } | ServeError::Model(_) => continue,
                _ => return EXIT_INTERNAL,
            }
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            use std::io::ErrorKind as K;
            return match io.kind() {
                K::NotFound | K::PermissionDenied | K::AlreadyExists | K::InvalidData | K::InvalidInput => EXIT_USER,
                _ => EXIT_INTERNAL,
            };
        }
        if cause.is::<image::ImageError>() || cause.is::<serde_json::Error>() {
            return EXIT_USER;
        }
    }
    EXIT_INTERNAL
}
