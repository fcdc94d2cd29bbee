use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wildfire_core::stats::Alternative;

#[derive(Debug, Parser)]
#[command(name = "firecli", version, about = "Wildfire detection experiments on multispectral patch containers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Decision threshold on predicted probabilities.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Comma-separated band labels, e.g. `B3,B6,B7`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub bands: Option<Vec<String>>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small models and a schedule suited to CPU runs on small data.
    Desk,
    /// Full-width models and the long schedule.
    Paper,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a patch container from raw band files or synthetic data.
    Ingest(IngestArgs),
    /// Train the mask-predicting FCN.
    TrainFcn(TrainFcnArgs),
    /// Score a saved model against a container.
    Eval(EvalArgs),
    /// Write one predicted mask per patch as PGM.
    Predict(PredictArgs),
    /// Segment the cirrus band of every patch into contamination classes.
    Segment(SegmentArgs),
    /// Train benchmark, control and experimental classifiers and compare them.
    Sensitivity(SensitivityArgs),
    /// Run a hypothesis test.
    Stats(StatsArgs),
    /// Fire pixels versus cirrus contamination table and scatter plots.
    Eda(EdaArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Output container path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory with one sub-directory per patch holding `<band>.bin`
    /// (u16 little-endian) and `mask.bin` (u8).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub raw_dir: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Patch height and width.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub fire_probability: f64,
    #[arg(long, default_value_t = 0.75)]
    pub cirrus_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainFcnArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train on every patch with no validation split.
    #[arg(long)]
    pub train_all: bool,
    /// Record the training-split metric after each epoch.
    #[arg(long)]
    pub eval_train: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Also write metrics.csv, confusion.txt and a manifest here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Write 16-bit probability rasters instead of thresholded masks.
    #[arg(long)]
    pub probabilities: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "B9")]
    pub band: String,
    /// Min-max scale (value, row, col) before clustering.
    #[arg(long)]
    pub normalize_features: bool,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minimum cirrus-band maximum for a patch to be kept.
    #[arg(long, default_value_t = 500.0)]
    pub cirrus_threshold: f64,
    /// Use every patch; the container is already cirrus-filtered.
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, default_value = "greater", value_parser = parse_alternative)]
    pub alternative: Alternative,
    #[command(subcommand)]
    pub test: StatsTest,
}

fn parse_alternative(s: &str) -> Result<Alternative, String> {
    s.parse().map_err(|e: wildfire_core::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum StatsTest {
    /// Two-proportion z-test.
    Proportions {
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        n1: u64,
        #[arg(long)]
        p2: f64,
        #[arg(long)]
        n2: u64,
    },
    /// Welch's t-test from summary statistics.
    Welch {
        #[arg(long)]
        m1: f64,
        #[arg(long)]
        sd1: f64,
        #[arg(long)]
        n1: u64,
        #[arg(long)]
        m2: f64,
        #[arg(long)]
        sd2: f64,
        #[arg(long)]
        n2: u64,
    },
    /// Welch's t-test on the per-epoch seconds of two training logs.
    Logs {
        #[arg(long)]
        log1: PathBuf,
        #[arg(long)]
        log2: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EdaArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory of `segment`; segmentation is recomputed when absent.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "B9")]
    pub band: String,
}
