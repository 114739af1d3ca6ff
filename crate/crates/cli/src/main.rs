//! `ldrc`: data generation, training, inference, evaluation and checks.
//!
//! Exit codes: 0 success, 1 check or runtime failure, 2 usage error.

mod bench;
mod commands;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldrcnet::arch::Ablation;
use ldrcnet::data::{ImageFormat, Range};
use ldrcnet::gradcheck::GradModule;
use ldrcnet::train::Phase;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing prerequisites, misaligned inputs.
    Usage(String),
    /// A verification ran and failed.
    Check(String),
    Runtime(ldrcnet::Error),
}

impl From<ldrcnet::Error> for CliError {
    fn from(e: ldrcnet::Error) -> Self {
        match e {
            ldrcnet::Error::Config(m) => Self::Usage(m),
            ldrcnet::Error::InvalidArgument(m) => Self::Usage(m),
            other => Self::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "ldrc", version, about = "Degradation-constrained single-image deraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render rainy/clean pairs from a directory of clean images.
    GenData(GenDataArgs),
    /// Run one training phase.
    Train(TrainArgs),
    /// Derain an image or a directory of images.
    Infer(InferArgs),
    /// Score predictions against ground truth (PSNR, SSIM).
    Eval(EvalArgs),
    /// Finite-difference gradient checks of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Dump an intermediate activation as grayscale images.
    Inspect(InspectArgs),
    /// Time a kernel over a size sweep after checking it against its oracle.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Png,
    Ppm,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Png => ImageFormat::Png,
            FormatArg::Ppm => ImageFormat::Ppm,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Directory of clean .png/.ppm images.
    #[arg(long)]
    pub clean_dir: PathBuf,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Streak angle from vertical in degrees, `v` or `lo:hi`.
    #[arg(long, default_value = "-30:30", allow_hyphen_values = true)]
    pub angle: Range,
    /// Streak length in pixels, `v` or `lo:hi`.
    #[arg(long, default_value = "9:17")]
    pub length: Range,
    /// Fraction of pixels seeding a streak, `v` or `lo:hi`.
    #[arg(long, default_value = "0.02")]
    pub density: Range,
    /// Streak brightness, `v` or `lo:hi`.
    #[arg(long, default_value = "0.8:1.0")]
    pub intensity: Range,
    #[arg(long, value_enum, default_value = "png")]
    pub format: FormatArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_phase)]
    pub phase: Phase,
    /// Dataset directory or manifest written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// `key=value` file of model and training settings; its values win over flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to resume, or the constraint checkpoint a derain phase starts from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Architecture variant: full, s1..s5. Ignored when resuming.
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    #[arg(long, default_value_t = 16)]
    pub base_channels: usize,
    /// Schedule length of this phase.
    #[arg(long, default_value_t = 2000)]
    pub steps: u64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr_init: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub lr_final: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accepted for compatibility; every run is deterministic.
    #[arg(long)]
    pub deterministic: bool,
    /// Also write the checkpoint every this many steps (0: only at the end).
    #[arg(long, default_value_t = 0)]
    pub save_every: u64,
    /// Print progress every this many steps (0: silent).
    #[arg(long, default_value_t = 50)]
    pub log_every: u64,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Report path stem; `<stem>.tsv` and `<stem>.json` are written.
    #[arg(long, default_value = "report")]
    pub report: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModuleArg {
    All,
    Tensor,
    Deform,
    Arch,
}

impl ModuleArg {
    pub fn filter(self) -> Option<GradModule> {
        match self {
            Self::All => None,
            Self::Tensor => Some(GradModule::Tensor),
            Self::Deform => Some(GradModule::Deform),
            Self::Arch => Some(GradModule::Arch),
        }
    }
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub module: ModuleArg,
    #[arg(long, default_value_t = ldrcnet::gradcheck::DEFAULT_SEEDS)]
    pub seeds: usize,
    /// Corrupts the deformable backward pass to exercise the failure path.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Activation name, e.g. deg1, enc0, dec0, output.
    #[arg(long)]
    pub layer: String,
    #[arg(long, default_value = "inspect")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value = "conv")]
    pub op: String,
    /// Comma-separated square input sizes.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturbs the kernel output inside the correctness gate.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    s.parse().map_err(|e: ldrcnet::Error| e.to_string())
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: ldrcnet::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => train::run(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
