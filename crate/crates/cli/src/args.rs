//! Command-line surface. Every tunable is optional here so that a config
//! file can supply it; unset values fall back to library defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use scatter_core::reward::{Components, GateMode};

#[derive(Debug, Parser)]
#[command(
    name = "scatter",
    version,
    about = "Diversity-aware reward scoring, evaluation and toy GRPO training"
)]
pub struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-sample and per-seed parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// TOML file with defaults for any option (flags win over the file).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reward breakdown for every (sample, rollout) pair.
    Score(ScoreArgs),
    /// SoftPass / SoftRecall / ValidRatio report, optionally with Pass@K.
    Evaluate(EvaluateArgs),
    /// Train the toy policy on the synthetic world and evaluate it.
    TrainToy(TrainArgs),
    /// Metrics across a grid of thresholds.
    Sweep(SweepArgs),
    /// Combine the metric reports stored in a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Samples file (JSONL).
    #[arg(long, value_name = "FILE")]
    pub samples: PathBuf,
    /// Hypothesis batches file (JSONL); rounds are read as rollouts.
    #[arg(long, value_name = "FILE")]
    pub hypotheses: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Embedder id; cache entries are keyed by it.
    #[arg(long)]
    pub embedder: Option<String>,
    /// Embedding service URL.
    #[arg(long, env = "SCATTER_EMBED_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Persistent embedding cache directory.
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Serve embeddings from the cache only.
    #[arg(long)]
    pub offline: bool,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// Reward design: scatter, validity-only, no-intra, no-inter.
    #[arg(long, value_parser = parse_components)]
    pub reward: Option<Components>,
    /// Validity gate on the inter-group term: full, mean, min, none.
    #[arg(long, value_parser = parse_gate)]
    pub gate: Option<GateMode>,
    /// Stabilizer of the importance-weight denominator.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

fn parse_components(s: &str) -> Result<Components, String> {
    s.parse().map_err(|e: scatter_core::Error| e.to_string())
}

fn parse_gate(s: &str) -> Result<GateMode, String> {
    s.parse().map_err(|e: scatter_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub tau_sp: Option<f64>,
    #[arg(long)]
    pub tau_sr: Option<f64>,
    #[arg(long)]
    pub tau_valid: Option<f64>,
    /// Redundancy threshold of the ValidRatio filter.
    #[arg(long)]
    pub tau_dup: Option<f64>,
    /// Fixed M for the ValidRatio denominator (default: actual count).
    #[arg(long)]
    pub hypotheses_per_round: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Results store directory; each invocation writes one run into it.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Run id (default derived from the inputs' fingerprint).
    #[arg(long)]
    pub run_id: Option<String>,
    /// Replace an existing run with the same id.
    #[arg(long, conflicts_with = "resume")]
    pub overwrite: bool,
    /// Add to an existing run; its fingerprint must match.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub reward: RewardArgs,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Ks to report (default: 1 and the number of rounds).
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Judge verdicts file (JSONL) for the Pass@K column.
    #[arg(long, value_name = "FILE")]
    pub verdicts: Option<PathBuf>,
    /// Also emit the threshold sweep at the largest K.
    #[arg(long)]
    pub sweep: bool,
    /// Also export hypothesis coordinates with validity flags.
    #[arg(long)]
    pub export_embeddings: bool,
    /// Row label in the tables.
    #[arg(long)]
    pub label: Option<String>,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Rounds used (default: all).
    #[arg(long)]
    pub k: Option<usize>,
    /// tau_sp = tau_sr grid.
    #[arg(long, value_delimiter = ',')]
    pub match_grid: Option<Vec<f64>>,
    /// tau_valid grid.
    #[arg(long, value_delimiter = ',')]
    pub valid_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub label: Option<String>,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub reward: RewardArgs,
    /// Number of consecutive seeds to run, starting at --seed.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub clip_epsilon: Option<f64>,
    #[arg(long)]
    pub kl_coef: Option<f64>,
    /// Rollouts per group (G).
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Hypotheses per rollout and per evaluation round (M).
    #[arg(long)]
    pub hypotheses: Option<usize>,
    /// Evaluation rounds (K).
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub train_temperature: Option<f64>,
    #[arg(long)]
    pub eval_temperature: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Planted modes (P).
    #[arg(long)]
    pub modes: Option<usize>,
    /// Vocabulary size (V), distractors included.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub store: StoreArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results store to read.
    #[arg(long, value_name = "DIR")]
    pub store: PathBuf,
    /// Runs to include (default: every run holding a metric report).
    #[arg(long, value_delimiter = ',')]
    pub runs: Option<Vec<String>>,
    /// Directory for the combined metrics.csv and metrics.txt.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
