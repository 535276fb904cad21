mod commands;
mod manifest;
mod seeds;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use regplan::control::PlannerKind;

const TRAIN_HELP: &str = "\
Outputs (under --out):
  manifest.json           run manifest: command line, config echo, seeds,
                          output paths, start and finish timestamps, status
  seed-<S>/run.json       per-seed config and status (running|complete|failed)
  seed-<S>/metrics.jsonl  one JSON object per episode:
                            episode, return, imagined_return, gap,
                            mean_dae_penalty, model_val_nll, wall_time_s
                          (fields that do not apply are null)
  seed-<S>/buffer.jsonl   one JSON episode per line: observations, actions,
                          rewards, truncated, diverged, planner_fallbacks
  seed-<S>/dynamics.bin   final dynamics model weights
  seed-<S>/dae.bin        final denoiser weights (DAE runs only)
  learning_curve.csv      episode,return_mean,return_std across seeds
                          (population std; 0 for a single seed)

Set REGPLAN_WORKERS to split planner scoring across threads.";

const GAP_HELP: &str = "\
Outputs (under --out):
  manifest.json    run manifest
  gap_report.csv   cell,seed,alpha,imagined,realized,gap
                   one row per cell and seed; cells are cem, cem+dae, adam,
                   adam+dae (or +gaussian), restricted by --optimizer.
                   gap = imagined - realized return of the open-loop plan.";

const REPLAY_HELP: &str = "\
Output CSV columns:
  episode,step,obs_0..obs_{n-1},action_0..action_{m-1},reward,next_obs_0..next_obs_{n-1}";

#[derive(Parser)]
#[command(
    name = "regplan",
    version,
    about = "Denoising-regularized trajectory optimization for model-based RL"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the end-to-end training loop for one or more seeds.
    #[command(after_help = TRAIN_HELP)]
    Train {
        /// Key-value config file (`section.key = value` per line).
        config: PathBuf,
        /// Seeds: `3`, `0,2,5` or an inclusive range `0..4`.
        #[arg(long, default_value = "0")]
        seed: String,
        #[arg(long)]
        out: PathBuf,
        /// Seeds run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Open-loop imagination versus reality study.
    #[command(after_help = GAP_HELP)]
    Gap {
        config: PathBuf,
        /// Random episodes the model and regularizer are trained on.
        #[arg(long, default_value_t = 5)]
        episodes_of_data: usize,
        /// Limit the study to one optimizer's two cells.
        #[arg(long)]
        optimizer: Option<PlannerKind>,
        /// Weight of the regularized cells (default: planner.alpha from the config).
        #[arg(long)]
        alpha: Option<f64>,
        /// Plan with the true dynamics; every gap is then zero.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value = "0..4")]
        seed: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an invariant suite and print a pass/fail table.
    Verify {
        #[arg(value_enum)]
        suite: verify::Suite,
    },
    /// Convert a replay buffer (buffer.jsonl) to CSV.
    #[command(after_help = REPLAY_HELP)]
    ReplayDump {
        buffer: PathBuf,
        /// Destination file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes mapped onto exit codes.
pub enum Failure {
    /// Bad arguments or config: exit 2.
    Usage(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(String),
}

impl From<regplan::Error> for Failure {
    fn from(e: regplan::Error) -> Self {
        match e {
            regplan::Error::InvalidConfig { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            out,
            jobs,
        } => commands::train(&args, &config, &seed, &out, jobs),
        Command::Gap {
            config,
            episodes_of_data,
            optimizer,
            alpha,
            oracle,
            seed,
            out,
        } => commands::gap(&args, &config, episodes_of_data, optimizer, alpha, oracle, &seed, &out),
        Command::Verify { suite } => verify::run(suite),
        Command::ReplayDump { buffer, out } => commands::replay_dump(&buffer, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
