//! Group-relative advantages, the clipped surrogate objective and the exact
//! categorical KL penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default stabilizer added to the group standard deviation.
pub const DEFAULT_ADVANTAGE_DELTA: f64 = 1e-8;

/// Which standard deviation normalizes the group rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    /// Divide by `G`.
    #[default]
    Population,
    /// Divide by `G - 1`.
    Sample,
}

/// Rewards of one group and their normalized advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub delta: f64,
    pub advantages: Vec<f64>,
}

/// `A_i = (r_i - mean) / (std + delta)` with the population standard
/// deviation.
pub fn group_advantages(rewards: &[f64], delta: f64) -> Result<AdvantageSet> {
    group_advantages_with(rewards, delta, StdKind::Population)
}

pub fn group_advantages_with(rewards: &[f64], delta: f64, kind: StdKind) -> Result<AdvantageSet> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Structure(format!(
            "advantage group needs G >= 2, got {g}"
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!(
            "delta must be finite and >= 0, got {delta}"
        )));
    }
    if let Some(index) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::Numeric {
            index,
            detail: format!("reward {}", rewards[index]),
        });
    }
    // A constant group must give exact zeros; the rounded mean divided by a
    // tiny delta would not.
    let mean = if rewards.iter().all(|&r| r == rewards[0]) {
        rewards[0]
    } else {
        rewards.iter().sum::<f64>() / g as f64
    };
    let ss: f64 = rewards.iter().map(|r| (r - mean) * (r - mean)).sum();
    let divisor = match kind {
        StdKind::Population => g as f64,
        StdKind::Sample => (g - 1) as f64,
    };
    let std = (ss / divisor).sqrt();
    let scale = std + delta;
    let advantages = rewards
        .iter()
        .map(|r| {
            if scale == 0.0 {
                0.0
            } else {
                (r - mean) / scale
            }
        })
        .collect();
    Ok(AdvantageSet {
        rewards: rewards.to_vec(),
        mean,
        std,
        delta,
        advantages,
    })
}

/// Hyperparameters of one policy update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyUpdateConfig {
    /// Clip range of the importance ratio.
    pub clip_epsilon: f64,
    /// Weight of the KL penalty against the reference policy.
    pub kl_coef: f64,
    pub learning_rate: f64,
    /// Rollouts per group.
    pub group_size: usize,
    /// Gradient steps taken on each sampled group.
    pub update_epochs: usize,
    pub advantage_delta: f64,
    pub std_kind: StdKind,
}

impl Default for PolicyUpdateConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            kl_coef: 0.001,
            learning_rate: 1.5,
            group_size: 5,
            update_epochs: 1,
            advantage_delta: DEFAULT_ADVANTAGE_DELTA,
            std_kind: StdKind::Population,
        }
    }
}

impl PolicyUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config(format!(
                "clip epsilon must lie in (0,1), got {}",
                self.clip_epsilon
            )));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(Error::Config(format!(
                "KL coefficient must be >= 0, got {}",
                self.kl_coef
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "group size must be >= 2, got {}",
                self.group_size
            )));
        }
        if self.update_epochs == 0 {
            return Err(Error::Config("update epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Value of the clipped surrogate and its derivative with respect to each
/// rollout's new log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub objective: f64,
    pub ratios: Vec<f64>,
    /// `d objective / d logp_new[i]`; zero where the clipped branch is the
    /// active minimum.
    pub coefficients: Vec<f64>,
    pub clipped: Vec<bool>,
}

/// `(1/G) sum_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta * kl`
/// with `rho_i = exp(logp_new_i - logp_old_i)`.
pub fn clipped_surrogate(
    logp_new: &[f64],
    logp_old: &[f64],
    advantages: &[f64],
    clip_epsilon: f64,
    kl_coef: f64,
    kl: f64,
) -> Result<Surrogate> {
    let g = logp_new.len();
    if logp_old.len() != g || advantages.len() != g {
        return Err(Error::Structure(format!(
            "surrogate inputs disagree in length: {g} new, {} old, {} advantages",
            logp_old.len(),
            advantages.len()
        )));
    }
    if g == 0 {
        return Err(Error::Structure("surrogate over an empty group".into()));
    }
    let inv_g = 1.0 / g as f64;
    let mut objective = 0.0;
    let mut ratios = Vec::with_capacity(g);
    let mut coefficients = Vec::with_capacity(g);
    let mut clipped = Vec::with_capacity(g);
    for i in 0..g {
        let ratio = (logp_new[i] - logp_old[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::Numeric {
                index: i,
                detail: format!(
                    "importance ratio {ratio} (logp_new {}, logp_old {})",
                    logp_new[i], logp_old[i]
                ),
            });
        }
        let a = advantages[i];
        let unclipped = ratio * a;
        let clipped_value = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * a;
        let (term, is_clipped) = if unclipped <= clipped_value {
            (unclipped, false)
        } else {
            (clipped_value, true)
        };
        objective += term * inv_g;
        // d(rho A)/d logp_new = rho A; the clipped branch is locally constant.
        coefficients.push(if is_clipped { 0.0 } else { unclipped * inv_g });
        ratios.push(ratio);
        clipped.push(is_clipped);
    }
    Ok(Surrogate {
        objective: objective - kl_coef * kl,
        ratios,
        coefficients,
        clipped,
    })
}

/// Exact KL divergence `sum p log(p / r)` between two categorical
/// distributions over the same support.
pub fn kl_penalty(p_new: &[f64], p_ref: &[f64]) -> Result<f64> {
    if p_new.len() != p_ref.len() {
        return Err(Error::Structure(format!(
            "KL support mismatch: {} vs {}",
            p_new.len(),
            p_ref.len()
        )));
    }
    let mut kl = 0.0;
    for (i, (&p, &r)) in p_new.iter().zip(p_ref).enumerate() {
        if p <= 0.0 {
            continue;
        }
        if r <= 0.0 {
            return Err(Error::Numeric {
                index: i,
                detail: "reference probability is zero where the new policy has mass".into(),
            });
        }
        kl += p * (p.ln() - r.ln());
    }
    // Rounding can leave a tiny negative value for identical inputs.
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[3.5, 3.5, 3.5], 1e-8).unwrap();
        assert_eq!(a.advantages, vec![0.0, 0.0, 0.0]);
        // 0.1 * 3 / 3 != 0.1 in floating point
        let a = group_advantages(&[0.1, 0.1, 0.1], 1e-8).unwrap();
        assert_eq!(a.advantages, vec![0.0, 0.0, 0.0]);

        let a = group_advantages(&[1.0, 2.0, 3.0], 0.0).unwrap();
        let sigma = (2.0f64 / 3.0).sqrt();
        assert!((a.std - sigma).abs() < 1e-15);
        for (got, want) in a.advantages.iter().zip([-1.0 / sigma, 0.0, 1.0 / sigma]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((a.advantages[2] - 1.22474).abs() < 1e-5);

        let a = group_advantages(&[0.0, 1.0], 0.0).unwrap();
        assert_eq!(a.advantages, vec![-1.0, 1.0]);

        let s = group_advantages_with(&[0.0, 1.0], 0.0, StdKind::Sample).unwrap();
        assert!((s.std - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn advantage_errors() {
        assert!(group_advantages(&[1.0], 1e-8).is_err());
        assert!(matches!(
            group_advantages(&[1.0, f64::NAN], 1e-8),
            Err(Error::Numeric { index: 1, .. })
        ));
    }

    #[test]
    fn surrogate_examples() {
        let s =
            clipped_surrogate(&[-1.0, -2.0], &[-1.0, -2.0], &[1.0, -1.0], 0.2, 0.0, 0.0).unwrap();
        assert!(s.objective.abs() < 1e-15);

        let s = clipped_surrogate(&[2.0f64.ln()], &[0.0], &[1.0], 0.2, 0.0, 0.0).unwrap();
        assert!((s.objective - 1.2).abs() < 1e-12);
        assert!(s.clipped[0]);
        assert_eq!(s.coefficients[0], 0.0);

        // min(0.5 * -1, 0.8 * -1) = -0.8: the clipped branch wins.
        let s = clipped_surrogate(&[0.5f64.ln()], &[0.0], &[-1.0], 0.2, 0.0, 0.0).unwrap();
        assert!((s.objective + 0.8).abs() < 1e-12);
        assert!(s.clipped[0]);

        let s = clipped_surrogate(&[0.0], &[0.0], &[1.0], 0.2, 0.5, 0.3).unwrap();
        assert!((s.objective - (1.0 - 0.15)).abs() < 1e-12);
    }

    #[test]
    fn surrogate_rejects_overflow() {
        let err =
            clipped_surrogate(&[0.0, 800.0], &[0.0, 0.0], &[1.0, 1.0], 0.2, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Numeric { index: 1, .. }));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_penalty(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_penalty(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let v = kl_penalty(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.510826).abs() < 1e-6);
        // The reverse direction, for contrast.
        let rev = kl_penalty(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((rev - 0.368064).abs() < 1e-6);
        assert!(kl_penalty(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PolicyUpdateConfig::default().validate().is_ok());
        for bad in [
            PolicyUpdateConfig {
                clip_epsilon: 1.0,
                ..Default::default()
            },
            PolicyUpdateConfig {
                kl_coef: -0.1,
                ..Default::default()
            },
            PolicyUpdateConfig {
                group_size: 1,
                ..Default::default()
            },
            PolicyUpdateConfig {
                update_epochs: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn advantages_zero_mean_and_shift_invariant(
            rewards in prop::collection::vec(-10.0f64..10.0, 2..12),
            shift in -50.0f64..50.0,
            scale in 0.1f64..10.0,
        ) {
            let g = rewards.len() as f64;
            let a = group_advantages(&rewards, 1e-8).unwrap();
            prop_assert!(a.advantages.iter().sum::<f64>().abs() <= 1e-9 * g);

            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let b = group_advantages(&shifted, 1e-8).unwrap();
            for (x, y) in a.advantages.iter().zip(&b.advantages) {
                prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()) || a.std < 1e-6);
            }

            let exact = group_advantages(&rewards, 0.0).unwrap();
            let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
            let c = group_advantages(&scaled, 0.0).unwrap();
            if exact.std > 1e-6 {
                for (x, y) in exact.advantages.iter().zip(&c.advantages) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn kl_nonnegative((p, r) in (2usize..10).prop_flat_map(|n| (distribution(n), distribution(n)))) {
            prop_assert!(kl_penalty(&p, &r).unwrap() >= 0.0);
            prop_assert!(kl_penalty(&p, &p).unwrap() < 1e-15);
        }
    }
}
