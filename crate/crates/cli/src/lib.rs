//! Batch driver behind the `panobox` binary. Every subcommand reads its
//! inputs, runs deterministically for a given config and seed, and writes
//! outputs atomically.

mod cmd;
mod io;
pub mod logging;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use io::Diagnostics;

#[derive(Debug, Parser)]
#[command(name = "panobox", version, about = "Panorama box generation and dataset tooling")]
pub struct Cli {
    /// TOML configuration; defaults apply for anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop panoramas closer than the minimum separation to an earlier one.
    Filter(FilterArgs),
    /// Project map objects into box sets, one file per panorama.
    Generate(GenerateArgs),
    /// Apply the refinement rules to a directory of box sets.
    Refine(RefineArgs),
    /// Compare a noisy box set collection against a clean one.
    Noise(NoiseArgs),
    /// Per-class and per-image dataset statistics.
    Stats(StatsArgs),
    /// Neighbourhood-grouped train/val/test split.
    Split(SplitArgs),
    /// Repeat factor sampling plan and optional curriculum shards.
    Sample(SampleArgs),
    /// Circular padding, unpadding and classification tiles.
    #[command(subcommand)]
    Transform(TransformCommand),
    /// Image-level F-score and detection metrics.
    Eval(EvalArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `ingest.min_separation_m`.
    #[arg(long)]
    pub min_separation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// GeoJSON FeatureCollection of map objects.
    #[arg(long)]
    pub objects: PathBuf,
    /// Terrain model grid (ESRI ASCII).
    #[arg(long, requires = "dsm")]
    pub dtm: Option<PathBuf>,
    /// Surface model grid (ESRI ASCII).
    #[arg(long, requires = "dtm")]
    pub dsm: Option<PathBuf>,
    /// JSON-lines panorama poses.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Refine the generated boxes before writing them.
    #[arg(long)]
    pub refine: bool,
    /// Write skipped objects per panorama to this JSON file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Drop unusable features with a warning instead of failing.
    #[arg(long)]
    pub skip_invalid: bool,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub noisy: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write IoU, GIoU and coordinate shift histograms as CSV.
    #[arg(long)]
    pub histograms: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving stats.json, per_class.csv and per_image.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// JSON object mapping panorama id to neighbourhood.
    #[arg(long)]
    pub neighbourhoods: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write curriculum shards here; needs `--neighbourhoods`.
    #[arg(long, requires = "neighbourhoods")]
    pub curriculum: Option<PathBuf>,
    #[arg(long)]
    pub neighbourhoods: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TransformCommand {
    /// Pad box sets circularly and crop the bottom band.
    Pad(TransformArgs),
    /// Undo `pad`, dropping the duplicated strips.
    Unpad(TransformArgs),
    /// Tile windows and per-tile class labels for padded sets.
    Tiles(TransformArgs),
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for pad/unpad, JSON file for tiles.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth box sets.
    #[arg(long)]
    pub truth: PathBuf,
    /// COCO results array of scored detections.
    #[arg(long, required_unless_present = "labels")]
    pub detections: Option<PathBuf>,
    /// JSON object mapping panorama id to predicted class names.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Box sets shown to workers.
    #[arg(long)]
    pub boxes: PathBuf,
    /// Expert box sets; their panoramas become gold images.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub neighbourhoods: Option<PathBuf>,
    /// Directory of panorama images named `<id>.<ext>`.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Gold panorama used to qualify new workers.
    #[arg(long)]
    pub qualification: Option<String>,
    /// Event logs, snapshots and published annotations.
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides `service.bind`.
    #[arg(long)]
    pub bind: Option<String>,
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    cmd::run(cli)
}
