//! Command-line front end: corpus generation, scoring, training, evaluation,
//! ablations, data curation and the pipeline benchmark.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use drivelab::Error;

#[derive(Debug, Parser)]
#[command(name = "drivelab", version, about = "Multi-turn trajectory refinement laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario corpus.
    Gen(GenArgs),
    /// Score trajectories against a corpus.
    Score(ScoreArgs),
    /// Warm-start and train a policy.
    Train(TrainArgs),
    /// Evaluate a checkpoint per turn budget.
    Eval(EvalArgs),
    /// Train all three advantage modes from one warm start.
    Ablate(AblateArgs),
    /// Build multi-turn, QA and RL-selection data.
    #[command(subcommand)]
    Curate(CurateCommand),
    /// Benchmark the rollout data pipeline.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Comma-separated families; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSONL of `{"id", "trajectory": [[x, y, heading] x 8]}`; the corpus
    /// expert trajectories when omitted.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// `gt_oracle` or `kinematic`.
    #[arg(long)]
    pub perception: Option<String>,
    /// `ep,ttc,comfort` weights.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `SEQ_GRPO`, `PER_TURN` or `POOLED_GROUP`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Start RL from this checkpoint instead of a fresh warm start.
    #[arg(long, conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    /// Continue an interrupted run from a checkpoint it wrote.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Plot at most this many scenarios.
    #[arg(long)]
    pub plots: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Shared starting checkpoint; behavior cloning when omitted.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PolicySource {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Policy checkpoint; a freshly initialized network when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CurateCommand {
    /// Extend failing policy attempts into multi-turn samples.
    Bootstrap {
        #[command(flatten)]
        src: PolicySource,
        /// Policy turns before the expert target.
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Constant-velocity first attempts with feedback.
    Constvel {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Stack distinct sampled attempts into deep samples.
    Mock {
        #[command(flatten)]
        src: PolicySource,
        #[arg(long, default_value_t = 6)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        runs: usize,
        #[arg(long, default_value_t = 0.1)]
        keep: f64,
    },
    /// Yes/no questions about single metric checks.
    Qa {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4)]
        per_scenario: usize,
    },
    /// Select hard scenarios for RL.
    Filter {
        #[command(flatten)]
        src: PolicySource,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long, default_value_t = 0.2)]
        other_fraction: f64,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    pub workers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub blob_mib: Option<Vec<f64>>,
    /// `uniform`, `long_tail`.
    #[arg(long, value_delimiter = ',')]
    pub dists: Option<Vec<String>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// `in_process` or `socket`.
    #[arg(long)]
    pub transport: Option<String>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence(_) => 4,
        Error::Data(_) | Error::Line { .. } | Error::Codec(_) | Error::Io { .. } => 3,
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> drivelab::Result<()> {
    commands::dispatch(cli, argv)
}
