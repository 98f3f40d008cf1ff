//! `flowsr`: degrade, train, super-resolve, evaluate and export flows.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure. Set `FLOWSR_LOG` (e.g. `info`) for progress output.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowsr::degradation::DegradationModel;

use run_config::Preset;

#[derive(Debug, Parser)]
#[command(name = "flowsr", version, about = "Video super-resolution with super-resolved optical flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise LR frames from an HR sequence.
    Degrade(DegradeArgs),
    /// Train both networks jointly.
    Train(TrainArgs),
    /// Super-resolve an LR sequence with a trained checkpoint.
    Sr(SrArgs),
    /// Compare SR frames against ground truth.
    Eval(EvalArgs),
    /// Estimate the HR flow between two LR frames.
    Flow(FlowArgs),
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Directory of HR PNG frames.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for the LR frames (created if missing).
    #[arg(long)]
    pub output: PathBuf,
    /// Degradation model: BI (bicubic) or BD (Gaussian blur + decimation).
    #[arg(long, default_value = "BI", value_parser = parse_model)]
    pub model: DegradationModel,
    /// Integer downscaling factor.
    #[arg(long)]
    pub scale: usize,
    /// Gaussian standard deviation in HR pixels for BD (default 1.6).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// printf-style frame name pattern, e.g. %08d.png; default is lexical order.
    #[arg(long)]
    pub template: Option<String>,
}

fn parse_model(s: &str) -> Result<DegradationModel, String> {
    s.parse().map_err(|e: flowsr::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file (flat TOML keys, see README).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to resume from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Preset supplying defaults: paper or desk.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Upscaling factor.
    #[arg(long)]
    pub scale: Option<usize>,
    /// HR training frames (overrides `hr_dir`).
    #[arg(long)]
    pub hr_dir: Option<PathBuf>,
    /// LR training frames (overrides `lr_dir`).
    #[arg(long)]
    pub lr_dir: Option<PathBuf>,
    /// Directory for the loss log and checkpoints (overrides `output_dir`).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Total number of optimisation steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Steps between checkpoints.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Random seed for initialisation and batch sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Samples per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// LR patch edge length.
    #[arg(long)]
    pub patch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of LR PNG frames.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for the SR frames.
    #[arg(long)]
    pub output: PathBuf,
    /// Expected upscaling factor; must match the checkpoint.
    #[arg(long)]
    pub scale: Option<usize>,
    /// Expected temporal radius N; must match the checkpoint.
    #[arg(long)]
    pub radius: Option<usize>,
    /// printf-style frame name pattern.
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of SR frames.
    #[arg(long)]
    pub sr: PathBuf,
    /// Directory of ground-truth frames.
    #[arg(long)]
    pub gt: PathBuf,
    /// Upscaling factor; sets the 6+s border crop.
    #[arg(long)]
    pub scale: usize,
    /// Write the per-frame report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Directory of estimated `.flo` files, one per frame.
    #[arg(long)]
    pub flow: Option<PathBuf>,
    /// Directory of reference `.flo` files for EPE.
    #[arg(long, requires = "flow")]
    pub ref_flow: Option<PathBuf>,
    /// Frames warped by the estimated flows onto the ground truth, for warp RMSE.
    #[arg(long, requires = "flow")]
    pub flow_source: Option<PathBuf>,
    /// Write absolute SR error maps as PNGs into this directory.
    #[arg(long)]
    pub error_maps: Option<PathBuf>,
    /// printf-style frame name pattern.
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source LR frame (the flow maps it onto the target).
    #[arg(long)]
    pub source: PathBuf,
    /// Target LR frame.
    #[arg(long)]
    pub target: PathBuf,
    /// Output `.flo` path.
    #[arg(long)]
    pub output: PathBuf,
    /// Colour-coded PNG path; defaults to the output with a .png extension.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWSR_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Degrade(a) => commands::degrade(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sr(a) => commands::super_resolve(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Flow(a) => commands::flow(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
