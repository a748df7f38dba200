mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use facecheck_core::corpus::Split;
use facecheck_core::degradation::DegradationSpec;
use facecheck_core::geometry::MaskType;

/// Face-swap detection by identity consistency of the outer face.
#[derive(Parser, Debug)]
#[command(name = "facecheck", version, arg_required_else_help = true)]
pub struct Cli {
    /// Flat key=value file; every flag has a twin there (`seed=1`,
    /// `train.epochs=12`). Command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the procedural face corpus and its manifest.
    SynthGen(SynthGenArgs),
    /// Train an embedding model on the real faces of the train split.
    Train(TrainArgs),
    /// Verify one suspect face against references of its claimed identity.
    Verify(VerifyArgs),
    /// Score a split and write report.json, the ROC curve and per-frame scores.
    Evaluate(EvaluateArgs),
    /// Degrade one image or every image of a manifest.
    Degrade(DegradeArgs),
    /// Write the aligned, masked crop the model would see.
    MaskPreview(MaskPreviewArgs),
    /// Occlusion saliency map of one face.
    Saliency(SaliencyArgs),
    /// Pick the threshold maximizing Youden's J on a split.
    CalibrateThreshold(CalibrateArgs),
    /// Draw an identity-even subset of a split.
    SampleFrames(SampleFramesArgs),
    /// Print a checkpoint's configuration.
    ModelInfo(ModelInfoArgs),
    /// Check manifest invariants and, optionally, audit evaluation scores.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct SynthGenArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub identities: usize,
    #[arg(long, default_value_t = 20)]
    pub images_per_identity: usize,
    #[arg(long, default_value_t = 2)]
    pub frames_per_video: usize,
    /// 1.0 replaces the inner face without any seam.
    #[arg(long, default_value_t = 1.0)]
    pub fidelity: f64,
    /// Largest in-plane rotation, degrees.
    #[arg(long, default_value_t = 15.0)]
    pub rotation: f64,
    /// Largest translation, pixels.
    #[arg(long, default_value_t = 5.0)]
    pub translation: f64,
    /// Render every frame in the canonical pose.
    #[arg(long)]
    pub no_jitter: bool,
    #[arg(long, default_value_t = 160)]
    pub image_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    None,
    Eye,
    Hull,
    Unite,
    Inner,
}

impl From<MaskArg> for MaskType {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::None => MaskType::NoMask,
            MaskArg::Eye => MaskType::EyeMask,
            MaskArg::Hull => MaskType::HullMask,
            MaskArg::Unite => MaskType::UniteMask,
            MaskArg::Inner => MaskType::InnerMask,
        }
    }
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long, value_enum, default_value_t = MaskArg::Inner)]
    pub mask: MaskArg,
    /// Disk radius for the point masks, crop pixels.
    #[arg(long, default_value_t = 13)]
    pub radius: u32,
    /// Eye distance as a fraction of the crop width.
    #[arg(long, default_value_t = 0.27)]
    pub ratio: f64,
    #[arg(long, default_value_t = 112)]
    pub crop_size: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Checkpoint to write; the epoch log goes next to it as `<out>.log.csv`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Comma-separated zero-based epochs at which lr is divided by 10.
    #[arg(long, default_value = "6,8", value_delimiter = ',')]
    pub lr_drops: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub margin_warmup: usize,
    #[arg(long, default_value_t = 64.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Random,
    Nearest,
    Farthest,
}

#[derive(Args, Debug)]
pub struct SelectionArgs {
    #[arg(long, value_enum, default_value_t = StrategyArg::Random)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 1)]
    pub ref_count: usize,
    #[arg(long, default_value_t = 100)]
    pub pool_size: usize,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "IMAGE")]
    pub suspect: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub landmarks: PathBuf,
    /// Manifest whose real reference candidates form the pool.
    #[arg(long, value_name = "FILE")]
    pub refs_manifest: PathBuf,
    /// Claimed identity; optional when the manifest holds only one.
    #[arg(long)]
    pub identity: Option<String>,
    /// Video of the suspect, excluded from the pool.
    #[arg(long)]
    pub suspect_video: Option<String>,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).map_err(|e| e.to_string())
}

fn parse_degradation(s: &str) -> Result<DegradationSpec, String> {
    s.parse().map_err(|e: facecheck_core::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// `none`, `jpeg:Q`, `resize:F`, `noise:SIGMA[:SEED]` or `external:TAG`.
    #[arg(long, default_value = "none", value_parser = parse_degradation)]
    pub degrade: DegradationSpec,
    /// Root of externally degraded frames for `external:TAG`.
    #[arg(long, value_name = "DIR")]
    pub external_root: Option<PathBuf>,
    /// Identity-even sample of this many frames per class.
    #[arg(long)]
    pub frames_per_class: Option<usize>,
    /// Also report per-video accuracy at this threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DegradeKind {
    None,
    Jpeg,
    Resize,
    Noise,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    /// Single input image.
    #[arg(long = "in", value_name = "IMAGE", conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Output image, or output directory with `--manifest`.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Degrade every frame of this manifest into a sibling tree.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: DegradeKind,
    #[arg(long, default_value_t = 20)]
    pub quality: u8,
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    #[arg(long, default_value_t = 5.0)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct MaskPreviewArgs {
    #[arg(long, value_name = "IMAGE")]
    pub image: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub landmarks: PathBuf,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    /// Masked crop, PNG.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Binary mask, PNG; white marks removed pixels.
    #[arg(long, value_name = "FILE")]
    pub mask_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "IMAGE")]
    pub image: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub landmarks: PathBuf,
    /// Reference face whose distance to the unoccluded suspect is reported.
    #[arg(long, value_name = "IMAGE", requires = "reference_landmarks")]
    pub reference: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub reference_landmarks: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub patch: usize,
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.0)]
    pub fill: f32,
    /// Directory for saliency.csv and saliency.svg.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, default_value = "val", value_parser = parse_split)]
    pub split: Split,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Args, Debug)]
pub struct SampleFramesArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub per_class: usize,
    /// Subset manifest; relative paths still resolve against the source
    /// manifest's directory, so keep it there.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ModelInfoArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// scores.jsonl from `evaluate`, audited for same-video references.
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
}

fn main() -> ExitCode {
    let mut argv: Vec<OsString> = std::env::args_os().collect();
    if let Some(path) = config::config_path(&argv) {
        match config::inject(&Cli::command(), argv, PathBuf::from(path).as_path()) {
            Ok(a) => argv = a,
            Err(msg) => {
                eprintln!("error: {msg}");
                return ExitCode::from(2);
            }
        }
    }
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
