mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nucleo::model::{DEFAULT_NMS_RADIUS, DEFAULT_PRIOR_VARIANCE, DEFAULT_ROTATIONS};

#[derive(Parser)]
#[command(name = "nucleo", version, about = "Nuclei detection and weakly-supervised segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset: images, annotations and instance masks.
    Synth(SynthArgs),
    /// Learn a model from images and isolated-nucleus annotations.
    Train(TrainArgs),
    /// Detect nuclei; writes one detection table per image.
    Detect(DetectArgs),
    /// Segment nuclei; writes one 16-bit label PNG per image.
    Segment(SegmentArgs),
    /// Score detections or label maps against ground truth.
    Eval(EvalArgs),
    /// Render a precision-recall table and resample it to 101 recall levels.
    Plot(PlotArgs),
    /// Export model and decomposition images for inspection.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 10)]
    pub images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub min_count: usize,
    #[arg(long, default_value_t = 14)]
    pub max_count: usize,
    #[arg(long, default_value_t = 0.0)]
    pub touching: f64,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub texture: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub kernels: usize,
    #[arg(long, default_value_t = 20)]
    pub mixtures: usize,
    #[arg(long, default_value_t = 27)]
    pub patch: usize,
    /// Number of learned convolution filters.
    #[arg(long, default_value_t = 32)]
    pub filters: usize,
    #[arg(long, default_value_t = 5)]
    pub kernel_size: usize,
    /// Reuse the filter bank of an existing model file.
    #[arg(long)]
    pub filters_from: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 3.0)]
    pub psi: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_PRIOR_VARIANCE)]
    pub prior_variance: f64,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = DEFAULT_ROTATIONS)]
    pub rotations: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_NMS_RADIUS)]
    pub nms_radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Images used to calibrate the detection threshold (best F1).
    #[arg(long, requires = "calibrate_annotations")]
    pub calibrate_images: Option<PathBuf>,
    #[arg(long, requires = "calibrate_images")]
    pub calibrate_annotations: Option<PathBuf>,
}

#[derive(Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Image files or directories.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Skip the candidate prior from the segmentation.
    #[arg(long)]
    pub no_prior: bool,
    /// Score threshold; defaults to the model's calibrated value.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "all_peaks")]
    pub threshold: Option<f64>,
    /// Keep every peak regardless of score (for precision-recall sweeps).
    #[arg(long)]
    pub all_peaks: bool,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rotations: Option<Vec<f64>>,
    #[arg(long)]
    pub nms_radius: Option<f64>,
    #[arg(long)]
    pub prior_variance: Option<f64>,
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fixed foreground threshold instead of Otsu.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write 8-bit overlays with instance boundaries under `overlays/`.
    #[arg(long)]
    pub overlay: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EvalMode {
    Detection,
    Segmentation,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = EvalMode::Detection)]
    pub mode: EvalMode,
    /// Detection tables or label PNGs (file or directory).
    #[arg(long)]
    pub pred: PathBuf,
    /// Annotation files (detection) or label PNGs (segmentation).
    #[arg(long)]
    pub gt: PathBuf,
    /// Output directory for the report and the precision-recall table.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
}

#[derive(Args)]
pub struct PlotArgs {
    /// Precision-recall table written by `eval`.
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out_image: PathBuf,
    #[arg(long)]
    pub out_table: PathBuf,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Image for activation maps and decomposition overlays.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
}

fn init_threads() -> Result<(), commands::Failure> {
    if let Ok(v) = std::env::var("NUCLEO_THREADS") {
        let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| commands::Failure::usage(format!("NUCLEO_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| commands::Failure::runtime(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Detect(a) => commands::detect(&a),
        Command::Segment(a) => commands::segment(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Plot(a) => commands::plot(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
