//! Config file schema and precedence: defaults < file < flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use scatter_core::metrics::EvaluationConfig;
use scatter_core::reward::RewardConfig;
use scatter_core::synth::ToyExperiment;
use scatter_core::{Error, Result};

use crate::args::{EmbedArgs, RewardArgs, ThresholdArgs, TrainArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub embedding: EmbeddingFile,
    pub reward: RewardFile,
    pub eval: EvalFile,
    pub grpo: GrpoFile,
    pub toy: ToyFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingFile {
    pub embedder: Option<String>,
    pub endpoint: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub offline: Option<bool>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardFile {
    /// Named design, as on the command line.
    pub design: Option<String>,
    pub gate: Option<String>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalFile {
    pub tau_sp: Option<f64>,
    pub tau_sr: Option<f64>,
    pub tau_valid: Option<f64>,
    pub tau_dup: Option<f64>,
    pub hypotheses_per_round: Option<usize>,
    pub ks: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoFile {
    pub clip_epsilon: Option<f64>,
    pub kl_coef: Option<f64>,
    pub learning_rate: Option<f64>,
    pub group_size: Option<usize>,
    pub update_epochs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyFile {
    pub seeds: Option<u64>,
    pub steps: Option<usize>,
    pub hypotheses: Option<usize>,
    pub rounds: Option<usize>,
    pub train_temperature: Option<f64>,
    pub eval_temperature: Option<f64>,
    pub dim: Option<usize>,
    pub modes: Option<usize>,
    pub vocab_size: Option<usize>,
    pub distractors: Option<usize>,
    pub noise: Option<f64>,
    pub separation: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}

pub fn reward_config(file: &RewardFile, args: &RewardArgs) -> Result<RewardConfig> {
    let d = RewardConfig::default();
    let components = match (&args.reward, &file.design) {
        (Some(c), _) => *c,
        (None, Some(s)) => s.parse()?,
        (None, None) => d.components,
    };
    let gate_mode = match (&args.gate, &file.gate) {
        (Some(g), _) => *g,
        (None, Some(s)) => s.parse()?,
        (None, None) => d.gate_mode,
    };
    let cfg = RewardConfig {
        epsilon: pick(&args.epsilon, &file.epsilon, d.epsilon),
        gate_mode,
        components,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn eval_config(
    file: &EvalFile,
    args: &ThresholdArgs,
    base: EvaluationConfig,
) -> Result<EvaluationConfig> {
    let cfg = EvaluationConfig {
        tau_sp: pick(&args.tau_sp, &file.tau_sp, base.tau_sp),
        tau_sr: pick(&args.tau_sr, &file.tau_sr, base.tau_sr),
        tau_valid: pick(&args.tau_valid, &file.tau_valid, base.tau_valid),
        tau_dup: pick(&args.tau_dup, &file.tau_dup, base.tau_dup),
        hypotheses_per_round: args
            .hypotheses_per_round
            .or(file.hypotheses_per_round)
            .or(base.hypotheses_per_round),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct EmbeddingSettings {
    pub embedder: String,
    pub endpoint: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
    pub timeout: Duration,
}

pub fn embedding_settings(file: &EmbeddingFile, args: &EmbedArgs) -> EmbeddingSettings {
    EmbeddingSettings {
        embedder: pick(&args.embedder, &file.embedder, "default".to_string()),
        endpoint: args.endpoint.clone().or_else(|| file.endpoint.clone()),
        cache_dir: args.cache_dir.clone().or_else(|| file.cache_dir.clone()),
        // a bare switch can only turn offline mode on
        offline: args.offline || file.offline.unwrap_or(false),
        timeout: Duration::from_secs(pick(&args.timeout_secs, &file.timeout_secs, 30)),
    }
}

pub fn toy_experiment(file: &FileConfig, args: &TrainArgs) -> Result<ToyExperiment> {
    let d = ToyExperiment::default();
    let (g, t) = (&file.grpo, &file.toy);
    let mut exp = d;
    exp.train.reward = reward_config(&file.reward, &args.reward)?;
    exp.train.grpo.clip_epsilon = pick(
        &args.clip_epsilon,
        &g.clip_epsilon,
        d.train.grpo.clip_epsilon,
    );
    exp.train.grpo.kl_coef = pick(&args.kl_coef, &g.kl_coef, d.train.grpo.kl_coef);
    exp.train.grpo.learning_rate = pick(
        &args.learning_rate,
        &g.learning_rate,
        d.train.grpo.learning_rate,
    );
    exp.train.grpo.group_size = pick(&args.group_size, &g.group_size, d.train.grpo.group_size);
    exp.train.grpo.update_epochs = g.update_epochs.unwrap_or(d.train.grpo.update_epochs);
    exp.train.steps = pick(&args.steps, &t.steps, d.train.steps);
    let m = pick(&args.hypotheses, &t.hypotheses, d.train.hypotheses);
    exp.train.hypotheses = m;
    exp.train.temperature = pick(
        &args.train_temperature,
        &t.train_temperature,
        d.train.temperature,
    );
    exp.eval.hypotheses = m;
    exp.eval.rounds = pick(&args.rounds, &t.rounds, d.eval.rounds);
    exp.eval.temperature = pick(
        &args.eval_temperature,
        &t.eval_temperature,
        d.eval.temperature,
    );
    exp.eval.metrics = eval_config(
        &file.eval,
        &args.thresholds,
        EvaluationConfig {
            hypotheses_per_round: Some(m),
            ..d.eval.metrics
        },
    )?;
    exp.universe.dim = pick(&args.dim, &t.dim, d.universe.dim);
    exp.universe.modes = pick(&args.modes, &t.modes, d.universe.modes);
    exp.universe.vocab_size = pick(&args.vocab_size, &t.vocab_size, d.universe.vocab_size);
    exp.universe.distractors = pick(&args.distractors, &t.distractors, d.universe.distractors);
    exp.universe.noise = pick(&args.noise, &t.noise, d.universe.noise);
    exp.universe.separation = t.separation.unwrap_or(d.universe.separation);
    exp.train.validate()?;
    exp.universe.validate()?;
    Ok(exp)
}
