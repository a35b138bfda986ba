use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use qpmseg::data::Confluence;
use qpmseg::eval::MatrixMode;

mod commands;
mod failure;
mod runspec;

#[derive(Parser)]
#[command(name = "qpmseg", about = "Dual-encoder segmentation for multi-illumination phase microscopy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic train/test split.
    Synth(SynthArgs),
    /// Train one model on a data directory's training split.
    Train(TrainArgs),
    /// Score a checkpoint, or saved masks, on a split.
    Eval(EvalArgs),
    /// Train and evaluate a matrix of variants under one training config.
    Ablate(AblateArgs),
    /// Finite-difference gradient check of every primitive and composite block.
    Gradcheck(GradcheckArgs),
    /// Render prediction/ground-truth overlays.
    Overlay(OverlayArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training samples.
    #[arg(long, default_value_t = 24)]
    pub n: usize,
    /// Test samples, rendered after the training ones.
    #[arg(long, default_value_t = 6)]
    pub n_test: usize,
    /// Image side length.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value = "med")]
    pub confluence: Confluence,
    /// Phase-map SNR; `inf` disables phase noise.
    #[arg(long, default_value_t = f64::INFINITY)]
    pub phase_snr: f64,
    /// Std of additive noise on unit-scale interferograms.
    #[arg(long)]
    pub intensity_noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write into a nonempty output directory, replacing its splits.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// `key = value` model config; unset keys keep defaults.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// `key = value` training config; unset keys keep defaults.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Override one key, as `model.<key>=<value>` or `train.<key>=<value>`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a nonempty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `<id>.qts` u8 masks to score instead of a checkpoint.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mode: MatrixMode,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Rows trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Tolerance for primitives.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Tolerance for composite blocks.
    #[arg(long, default_value_t = 1e-4)]
    pub composite_tol: f64,
    /// Directory for `gradcheck.csv` and the effective config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn main() -> ExitCode {
    let version = format!(
        "{} (engine qpmseg-core {}; f32 training, f64 verification)",
        env!("CARGO_PKG_VERSION"),
        qpmseg::VERSION
    );
    let version: &'static str = Box::leak(version.into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Overlay(a) => commands::overlay(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("qpmseg: {f}");
            ExitCode::from(f.code())
        }
    }
}
