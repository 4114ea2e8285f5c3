mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "vidsplat", version, about = "Per-frame Gaussian splat reconstruction of multi-view videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view video dataset with ground truth.
    SynthData(SynthArgs),
    /// Reconstruct every frame of a dataset into a .v3dz file.
    Reconstruct(ReconstructArgs),
    /// Render a .v3dz file from orbit or manifest cameras to PNG sequences.
    Render(RenderArgs),
    /// Score a .v3dz file against a reference image.
    Evaluate(EvaluateArgs),
    /// Run a view-count / motion ablation grid over a dataset.
    Ablate(AblateArgs),
    /// Recompute the configuration hash recorded in an output.
    Verify(VerifyArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// blobs or snowman
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub motion_amplitude: Option<f64>,
    #[arg(long)]
    pub gaussians: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub splats: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Global seed; per-frame seeds derive from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep only every n-th view of each frame.
    #[arg(long)]
    pub views: Option<usize>,
    /// Directory for per-frame loss traces as CSV.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Write a PLY checkpoint of each frame every k steps.
    #[arg(long, requires = "checkpoint_dir")]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub video: PathBuf,
    /// Number of orbit cameras.
    #[arg(long, conflicts_with = "camera_file")]
    pub cameras: Option<usize>,
    /// Camera manifest in the dataset's cameras.json format.
    #[arg(long)]
    pub camera_file: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// `surrogate` or the URL of an embedding service.
    #[arg(long, env = "VIDSPLAT_EMBEDDER_URL")]
    pub embedder: Option<String>,
    /// Ground-truth .v3dz; adds PSNR from held-out cameras.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub cameras: Option<usize>,
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, env = "VIDSPLAT_EMBEDDER_URL")]
    pub embedder: Option<String>,
    #[arg(long)]
    pub splats: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// A dataset or output directory, a .v3dz file or a report JSON.
    pub path: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Render(a) => commands::render(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.code())
        }
    }
}
