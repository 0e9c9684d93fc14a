//! `gvio` command line: simulate, train, evaluate and analyze gated VIO models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gvio::config::ConfigError;
use gvio::model::{ModelError, PolicyMode};
use gvio::train::TrainError;

#[derive(Parser)]
#[command(name = "gvio", version, about = "Adaptive visual-inertial odometry on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Experiment configuration (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Warm-up stage under the random visual policy.
    Warmup {
        #[command(flatten)]
        common: Common,
    },
    /// Joint training from a warm-up checkpoint (or a fresh warm-up), then
    /// evaluation on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Efficiency penalty per interval (absolute).
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value = "learned")]
        mode: PolicyMode,
        /// Directory written by `warmup`.
        #[arg(long)]
        warm: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "learned")]
        mode: PolicyMode,
    },
    /// Train and evaluate one model per entry of the λ ladder.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        warm: Option<PathBuf>,
        /// Also train matched regular and Bernoulli baselines per entry.
        #[arg(long)]
        baselines: bool,
    },
    /// Usage-by-motion tables and decision traces of a learned model.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Trajectory metrics of a KITTI-format prediction against ground truth.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Writes `segments.csv` here when given.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// 2 for configuration problems, 3 for numerical divergence, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            match e {
                TrainError::Diverged { .. } => return 3,
                TrainError::Config(_) | TrainError::Model(ModelError::Config(_)) => return 2,
                _ => {}
            }
        }
        if cause.is::<ConfigError>() || cause.is::<commands::UsageError>() {
            return 2;
        }
        if let Some(ModelError::Config(_)) = cause.downcast_ref::<ModelError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common } => commands::simulate(&common),
        Command::Warmup { common } => commands::warmup(&common),
        Command::Train { common, lambda, mode, warm } => commands::train(&common, lambda, mode, warm.as_deref()),
        Command::Eval { common, model, mode } => commands::eval(&common, &model, mode),
        Command::Sweep { common, warm, baselines } => commands::sweep(&common, warm.as_deref(), baselines),
        Command::Analyze { common, model } => commands::analyze(&common, &model),
        Command::Metrics { pred, gt, out } => commands::metrics(&pred, &gt, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
