//! `safe-l2o`: generate datasets, train unrolled schemes, run them with or
//! without the safeguard, and tabulate the resulting curves.
//!
//! Exit status is 0 on success, 1 for configuration, I/O or parse errors
//! and 2 when the numerics fail.

mod commands;
mod provenance;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use safe_l2o::operators::FallbackKind;
use safe_l2o::problems::{DistributionTag, ProblemKind};
use safe_l2o::safeguards::SafeguardScheme;
use safe_l2o::schemes::SchemeKind;
use safe_l2o::training::{GradientMode, LossKind};

#[derive(Parser)]
#[command(name = "safe-l2o", version, about = "Safeguarded learned optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Train an unrolled scheme layer by layer on the train split.
    Train(TrainArgs),
    /// Run the fallback, the learned scheme, or the safeguarded scheme on a split.
    Run(RunArgs),
    /// Merge several run CSVs into one comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub problem: ProblemKind,
    /// Rows of the dictionary (default depends on the problem).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub train: usize,
    #[arg(long, default_value_t = 200)]
    pub test: usize,
    #[arg(long, default_value = "seen")]
    pub dist: DistributionTag,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset whose train split is used.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scheme: SchemeKind,
    #[arg(long, default_value_t = 16)]
    pub layers: usize,
    #[arg(long, default_value = "objective")]
    pub loss: LossKind,
    #[arg(long, default_value = "analytic")]
    pub gradient: GradientMode,
    /// Epochs per layerwise stage.
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    /// Minibatch size; full batch up to 1000 samples, else 256, when absent.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Epochs of end-to-end fine-tuning after the stages (0 disables it).
    #[arg(long, default_value_t = 0)]
    pub joint_epochs: usize,
    /// Parameter file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training loss curve (stage, epoch, loss).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Iterate the fallback operator.
    Km,
    /// Apply the learned layers without a safeguard.
    L2o,
    /// Learned layers behind the residual safeguard.
    Safe,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Km => "km",
            Mode::L2o => "l2o",
            Mode::Safe => "safe",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained parameters; required for `l2o` and `safe`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value = "ema:0.25")]
    pub safeguard: SafeguardScheme,
    #[arg(long, default_value_t = 0.99)]
    pub alpha: f64,
    /// Iterations for `km` and `safe`; `l2o` always runs the learned depth.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    /// Stop an instance once its residual is at most this.
    #[arg(long, default_value_t = safe_l2o::executor::DEFAULT_TOL)]
    pub tol: f64,
    /// Fallback operator (default: the problem's conventional one).
    #[arg(long)]
    pub fallback: Option<FallbackKind>,
    /// Step of the fallback (penalty for linearized ADMM); default 1/L, or 1 for ADMM.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run CSVs to merge; columns are labelled by file stem.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Run(a) => run::run(a),
        Command::Report(a) => run::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
