//! `grin`: dataset generation, training, inference, evaluation, ablations
//! and benchmarks for pixel-level depth diffusion.

mod colormap;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "grin", version, about = "Pixel-level diffusion for metric depth")]
pub struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model, or resume a run.
    Train(TrainArgs),
    /// Predict depth and uncertainty for one image.
    Infer(InferArgs),
    /// Score a prediction against ground truth, or tabulate a directory of runs.
    Eval(EvalArgs),
    /// Run an ablation suite.
    Ablate(AblateArgs),
    /// Report FLOPs and wall time per token count.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scenes: usize,
    /// Additional held-out scenes with unseen focal lengths.
    #[arg(long, default_value_t = 0)]
    pub val_scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "desk")]
    pub camera_profile: String,
    /// Fraction of pixels kept as sparse depth.
    #[arg(long, default_value_t = 0.2)]
    pub sparsity: f64,
    #[arg(long, default_value = "uniform")]
    pub pattern: String,
    /// Objects per scene besides the ground.
    #[arg(long, default_value_t = 4)]
    pub complexity: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after this many steps in this invocation (default: run to `train.steps`).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Pixel box `u0 v0 u1 v1`, end-exclusive.
    #[arg(long, num_args = 4, value_names = ["U0", "V0", "U1", "V1"])]
    pub crop: Option<Vec<usize>>,
    /// Use fx = cx = W/2, fy = cy = H/2 instead of an intrinsics file.
    #[arg(long)]
    pub default_intrinsics: bool,
    #[arg(long)]
    pub raw_weights: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of global tokens kept.
    #[arg(long)]
    pub global_keep: Option<f64>,
    /// Local tokens per denoiser call (0: all pixels at once).
    #[arg(long)]
    pub chunk: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "runs")]
    pub pred: Option<PathBuf>,
    /// Dense (`DEPTHMAP`) or sparse (`SPARSE`) ground truth.
    #[arg(long, required_unless_present = "runs")]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub scale_align: bool,
    #[arg(long, default_value_t = 200.0)]
    pub cap: f64,
    /// Also report RMSE over the most confident pixels.
    #[arg(long)]
    pub confidence_curve: bool,
    /// Uncertainty map (default: the prediction path with extension `unc`).
    #[arg(long)]
    pub unc: Option<PathBuf>,
    /// Metrics sidecar path (default: the prediction path with extension `metrics`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tabulate every `*.metrics` sidecar below this directory instead.
    #[arg(long, conflicts_with_all = ["pred", "gt"])]
    pub runs: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
    pub tokens: Vec<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

/// Exit status for usage, data and numeric failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    use grin_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::InvalidArgument(_) => 1,
                E::NonFinite(_) | E::Tensor(grin_autodiff::Error::NonFinite { .. }) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
