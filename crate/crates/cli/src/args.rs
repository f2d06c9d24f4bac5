use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use deshadow_core::training::Layout;

#[derive(Debug, Parser)]
#[command(name = "deshadow", version, about = "Single-image shadow removal with a mask prior and an unrolled solver")]
pub struct Cli {
    /// Pipeline config (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a shadow mask per image from precomputed candidate masks.
    PrepMask(PrepArgs),
    /// Train the solver end to end.
    Train(TrainArgs),
    /// Remove shadows from a directory of images.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Merge metrics files into a comparison table with charts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Image file or directory of PNG images.
    #[arg(long)]
    pub images: PathBuf,
    /// Root of `<id>/` candidate directories (default: paths.candidates).
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Dataset masks used when an image has no candidates.
    #[arg(long)]
    pub fallback_masks: Option<PathBuf>,
    /// Output directory (default: <paths.output>/masks).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root (default: paths.dataset).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(Layout))]
    pub layout: Option<Layout>,
    /// Candidate mask root used to build target masks.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Loss trace CSV (default: loss_trace.csv next to the checkpoint).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Square training size; 0 keeps native resolution.
    #[arg(long)]
    pub resize: Option<usize>,
    /// Continue from the checkpoint if it exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Image file or directory of PNG images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory (default: paths.output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory with `<id>_Ms.png` (used as is) or `<id>.png` (dilated).
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    /// Candidate mask root, used when no prepared mask exists.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Blend weight of the enhancement curve.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also write every stage's restored image and gain map.
    #[arg(long)]
    pub dump_stages: bool,
    /// Square processing size; omitted or 0 keeps native resolution.
    #[arg(long)]
    pub resize: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Shadow masks; without them masks are derived from --shadow.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Shadow inputs, used for masks when --mask is absent.
    #[arg(long)]
    pub shadow: Option<PathBuf>,
    /// Output directory for metrics.csv and report.md (default: paths.output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Square evaluation size; 0 keeps native resolution.
    #[arg(long, default_value_t = 256)]
    pub resize: usize,
    /// Report root-mean-square LAB error instead of mean absolute error.
    #[arg(long)]
    pub true_rmse: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// metrics.csv files, one per method.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    /// Comma-separated row labels, one per metrics file.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Output directory (default: <paths.output>/report).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Shadow inputs for image strips.
    #[arg(long, requires = "results")]
    pub inputs: Option<PathBuf>,
    /// Results for image strips.
    #[arg(long, requires = "inputs")]
    pub results: Option<PathBuf>,
    /// Masks for image strips.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Number of image strips.
    #[arg(long, default_value_t = 4)]
    pub strips: usize,
}
