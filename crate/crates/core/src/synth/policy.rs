//! Flat categorical policy over the universe vocabulary.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{ResponseGroup, Rollout};
use crate::synth::universe::ModeUniverse;

/// One logit per vocabulary candidate. A temperature of zero samples the
/// argmax deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl ToyPolicy {
    pub fn uniform(vocab: usize, temperature: f64) -> Self {
        Self {
            logits: vec![0.0; vocab],
            temperature,
        }
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        Self {
            logits: self.logits.clone(),
            temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.logits.is_empty() {
            return Err(Error::Structure("policy has an empty vocabulary".into()));
        }
        if let Some(index) = self.logits.iter().position(|l| !l.is_finite()) {
            return Err(Error::Numeric {
                index,
                detail: format!("logit {}", self.logits[index]),
            });
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.logits.iter().enumerate() {
            if l > self.logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits, self.temperature).unwrap_or_else(|| {
            let mut p = vec![0.0; self.logits.len()];
            p[self.argmax()] = 1.0;
            p
        })
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits, self.temperature).unwrap_or_else(|| {
            let mut lp = vec![f64::NEG_INFINITY; self.logits.len()];
            lp[self.argmax()] = 0.0;
            lp
        })
    }

    pub fn entropy(&self) -> f64 {
        self.probs()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// `n` independent draws with replacement.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if self.temperature == 0.0 {
            return Ok(vec![self.argmax(); n]);
        }
        let dist = WeightedIndex::new(self.probs())
            .map_err(|e| Error::Degenerate(format!("sampling weights: {e}")))?;
        Ok((0..n).map(|_| dist.sample(rng)).collect())
    }
}

/// `None` for a zero temperature.
pub(crate) fn log_softmax(logits: &[f64], temperature: f64) -> Option<Vec<f64>> {
    if temperature == 0.0 {
        return None;
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Some(scaled.into_iter().map(|s| s - lse).collect())
}

pub(crate) fn softmax(logits: &[f64], temperature: f64) -> Option<Vec<f64>> {
    log_softmax(logits, temperature).map(|lp| lp.into_iter().map(f64::exp).collect())
}

/// A sampled group: candidate indices per rollout, each rollout's joint
/// log-probability under the sampling policy, and the embedded group.
#[derive(Debug, Clone)]
pub struct SampledGroup {
    pub indices: Vec<Vec<usize>>,
    pub log_probs: Vec<f64>,
    pub group: ResponseGroup,
}

/// Draws `g` rollouts of `m` hypotheses each.
pub fn sample_rollouts(
    policy: &ToyPolicy,
    universe: &ModeUniverse,
    g: usize,
    m: usize,
    rng: &mut impl Rng,
) -> Result<SampledGroup> {
    if universe.is_empty() || policy.logits.len() != universe.len() {
        return Err(Error::Structure(format!(
            "policy over {} candidates does not match a vocabulary of {}",
            policy.logits.len(),
            universe.len()
        )));
    }
    if g == 0 || m == 0 {
        return Err(Error::Config(format!(
            "need G >= 1 and M >= 1, got G={g}, M={m}"
        )));
    }
    let log_p = policy.log_probs();
    let mut indices = Vec::with_capacity(g);
    let mut log_probs = Vec::with_capacity(g);
    let mut rollouts = Vec::with_capacity(g);
    for _ in 0..g {
        let draw = policy.sample(rng, m)?;
        log_probs.push(draw.iter().map(|&c| log_p[c]).sum());
        rollouts.push(Rollout::from_embeddings(
            draw.iter()
                .map(|&c| universe.vocabulary[c].clone())
                .collect(),
        )?);
        indices.push(draw);
    }
    Ok(SampledGroup {
        indices,
        log_probs,
        group: ResponseGroup::new(
            format!("universe-{}", universe.seed),
            rollouts,
            universe.ground_truth(),
        )?,
    })
}
