//! GRPO training loop for the toy policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{
    clipped_surrogate, group_advantages_with, kl_penalty, PolicyUpdateConfig, Surrogate,
};
use crate::reward::{compute_rewards, RewardConfig};
use crate::seed::{rng_for, Stream};
use crate::synth::policy::{log_softmax, sample_rollouts, ToyPolicy};
use crate::synth::universe::ModeUniverse;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub reward: RewardConfig,
    pub grpo: PolicyUpdateConfig,
    /// Hypotheses per rollout.
    pub hypotheses: usize,
    pub steps: usize,
    /// Sampling temperature during training.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            reward: RewardConfig::default(),
            grpo: PolicyUpdateConfig::default(),
            hypotheses: 10,
            steps: 300,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.grpo.validate()?;
        if self.hypotheses == 0 {
            return Err(Error::Config("hypotheses per rollout must be >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "training temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One record of the append-only training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mean_composite: f64,
    pub mean_validity: f64,
    pub mean_intra: f64,
    pub mean_inter: f64,
    /// Distinct planted modes among this step's samples.
    pub mode_coverage: usize,
    /// Entropy of the policy after the update, at training temperature.
    pub entropy: f64,
    /// KL to the reference (initial) policy after the update.
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub config: TrainConfig,
    pub logs: Vec<StepLog>,
    pub initial: ToyPolicy,
    pub policy: ToyPolicy,
}

/// What a single policy update sees from one sampled group.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBatch {
    pub indices: Vec<Vec<usize>>,
    pub logp_old: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Surrogate objective (KL penalty included) at `logits`, and its gradient
/// with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub surrogate: Surrogate,
    pub kl: f64,
    pub gradient: Vec<f64>,
}

pub fn surrogate_with_gradient(
    logits: &[f64],
    temperature: f64,
    batch: &UpdateBatch,
    ref_probs: &[f64],
    clip_epsilon: f64,
    kl_coef: f64,
) -> Result<SurrogateEval> {
    let log_p = log_softmax(logits, temperature)
        .ok_or_else(|| Error::Config("surrogate needs a positive temperature".into()))?;
    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let logp_new: Vec<f64> = batch
        .indices
        .iter()
        .map(|draw| draw.iter().map(|&c| log_p[c]).sum())
        .collect();
    let kl = kl_penalty(&p, ref_probs)?;
    let surrogate = clipped_surrogate(
        &logp_new,
        &batch.logp_old,
        &batch.advantages,
        clip_epsilon,
        kl_coef,
        kl,
    )?;

    // d log pi(y) / d z = (counts - m p) / T ; d KL / d z = p (log p - log r - KL) / T
    let inv_t = 1.0 / temperature;
    let mut gradient = vec![0.0; logits.len()];
    for (draw, &coef) in batch.indices.iter().zip(&surrogate.coefficients) {
        if coef == 0.0 {
            continue;
        }
        for &c in draw {
            gradient[c] += coef * inv_t;
        }
        let m = draw.len() as f64;
        for (g, &pj) in gradient.iter_mut().zip(&p) {
            *g -= coef * m * pj * inv_t;
        }
    }
    if kl_coef != 0.0 {
        for (j, g) in gradient.iter_mut().enumerate() {
            if p[j] > 0.0 {
                *g -= kl_coef * p[j] * (log_p[j] - ref_probs[j].ln() - kl) * inv_t;
            }
        }
    }
    Ok(SurrogateEval {
        surrogate,
        kl,
        gradient,
    })
}

/// Runs `config.steps` rounds of sample, score, normalize, ascend.
pub fn train(
    universe: &ModeUniverse,
    initial: &ToyPolicy,
    config: &TrainConfig,
) -> Result<TrainingRun> {
    config.validate()?;
    initial.validate()?;
    if initial.logits.len() != universe.len() {
        return Err(Error::Structure(format!(
            "policy over {} candidates does not match a vocabulary of {}",
            initial.logits.len(),
            universe.len()
        )));
    }
    let mut rng = rng_for(config.seed, Stream::Sampling);
    let mut policy = initial.with_temperature(config.temperature);
    let ref_probs = policy.probs();
    let grpo = &config.grpo;
    let mut logs = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let sampled = sample_rollouts(
            &policy,
            universe,
            grpo.group_size,
            config.hypotheses,
            &mut rng,
        )?;
        let breakdown = compute_rewards(&sampled.group, &config.reward)?;
        let rewards: Vec<f64> = breakdown.iter().map(|b| b.composite).collect();
        let adv = group_advantages_with(&rewards, grpo.advantage_delta, grpo.std_kind)?;
        let batch = UpdateBatch {
            indices: sampled.indices,
            logp_old: sampled.log_probs,
            advantages: adv.advantages,
        };

        for _ in 0..grpo.update_epochs {
            let eval = surrogate_with_gradient(
                &policy.logits,
                policy.temperature,
                &batch,
                &ref_probs,
                grpo.clip_epsilon,
                grpo.kl_coef,
            )
            .map_err(|e| Error::Divergence {
                step,
                detail: e.to_string(),
            })?;
            for (z, g) in policy.logits.iter_mut().zip(&eval.gradient) {
                *z += grpo.learning_rate * g;
            }
            if let Some(i) = policy.logits.iter().position(|z| !z.is_finite()) {
                return Err(Error::Divergence {
                    step,
                    detail: format!("logit {i} became {}", policy.logits[i]),
                });
            }
        }

        let g = breakdown.len() as f64;
        let mean = |f: fn(&crate::reward::RewardBreakdown) -> f64| {
            breakdown.iter().map(f).sum::<f64>() / g
        };
        let probs = policy.probs();
        logs.push(StepLog {
            step,
            mean_composite: mean(|b| b.composite),
            mean_validity: mean(|b| b.r_validity),
            mean_intra: mean(|b| b.r_intra),
            mean_inter: mean(|b| b.r_inter),
            mode_coverage: universe.modes_hit(batch.indices.iter().flatten()),
            entropy: policy.entropy(),
            kl: kl_penalty(&probs, &ref_probs)?,
        });
    }

    Ok(TrainingRun {
        config: *config,
        logs,
        initial: initial.clone(),
        policy,
    })
}
