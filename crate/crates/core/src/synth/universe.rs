//! Planted multi-mode embedding universe.
//!
//! `P` unit anchors stand for distinct plausible outcomes and double as the
//! ground truth. The vocabulary holds noisy copies of the anchors (assigned
//! round-robin) followed by distractors: unit vectors with a small, fixed
//! cosine to one anchor and no component along any other anchor direction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};
use crate::vector::{Embedding, GroundTruthSet};

const ANCHOR_RESTARTS: usize = 200;
const ANCHOR_TRIES: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniverseConfig {
    pub dim: usize,
    pub modes: usize,
    /// Total vocabulary size, distractors included.
    pub vocab_size: usize,
    pub distractors: usize,
    /// Per-coordinate standard deviation of the Gaussian perturbation added
    /// to an anchor before renormalizing.
    pub noise: f64,
    /// Upper bound on the pairwise cosine between anchors.
    pub separation: f64,
    /// Cosine between a distractor and its nearest anchor.
    pub distractor_similarity: f64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            modes: 6,
            vocab_size: 60,
            distractors: 12,
            noise: 0.1,
            separation: 0.3,
            distractor_similarity: 0.25,
        }
    }
}

impl UniverseConfig {
    pub fn on_mode(&self) -> usize {
        self.vocab_size.saturating_sub(self.distractors)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be >= 1".into()));
        }
        if self.modes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 modes, got {}",
                self.modes
            )));
        }
        if self.on_mode() < self.modes {
            return Err(Error::Config(format!(
                "vocabulary of {} with {} distractors cannot hold one candidate per mode ({})",
                self.vocab_size, self.distractors, self.modes
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        if !(-1.0..1.0).contains(&self.separation) {
            return Err(Error::Config(format!(
                "separation must lie in [-1, 1), got {}",
                self.separation
            )));
        }
        if self.distractors > 0 {
            if self.modes >= self.dim {
                return Err(Error::Config(format!(
                    "distractors need a direction orthogonal to all {} anchors, impossible in {} dimensions",
                    self.modes, self.dim
                )));
            }
            if !(0.0..1.0).contains(&self.distractor_similarity) {
                return Err(Error::Config(format!(
                    "distractor similarity must lie in [0, 1), got {}",
                    self.distractor_similarity
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateLabel {
    Mode(usize),
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeUniverse {
    pub config: UniverseConfig,
    pub seed: u64,
    pub anchors: Vec<Embedding>,
    pub vocabulary: Vec<Embedding>,
    pub labels: Vec<CandidateLabel>,
}

impl ModeUniverse {
    /// The anchors, as ground truth.
    pub fn ground_truth(&self) -> GroundTruthSet {
        GroundTruthSet::from_embeddings(self.anchors.clone())
            .expect("anchors are non-empty unit vectors")
    }

    pub fn modes(&self) -> usize {
        self.anchors.len()
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    /// Number of distinct planted modes among the given candidates.
    pub fn modes_hit<'a>(&self, candidates: impl IntoIterator<Item = &'a usize>) -> usize {
        let mut seen = vec![false; self.modes()];
        for &c in candidates {
            if let CandidateLabel::Mode(m) = self.labels[c] {
                seen[m] = true;
            }
        }
        seen.into_iter().filter(|&s| s).count()
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sample_anchors(rng: &mut impl Rng, config: &UniverseConfig) -> Result<Vec<Vec<f64>>> {
    for _ in 0..ANCHOR_RESTARTS {
        let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(config.modes);
        'anchor: while anchors.len() < config.modes {
            for _ in 0..ANCHOR_TRIES {
                let Some(c) = normalize(gaussian(rng, config.dim)) else {
                    continue;
                };
                if anchors.iter().all(|a| dot(a, &c) <= config.separation) {
                    anchors.push(c);
                    continue 'anchor;
                }
            }
            break;
        }
        if anchors.len() == config.modes {
            return Ok(anchors);
        }
    }
    Err(Error::Config(format!(
        "could not place {} anchors with pairwise cosine <= {} in {} dimensions",
        config.modes, config.separation, config.dim
    )))
}

/// Orthonormal basis of the anchors' span (modified Gram-Schmidt).
fn span_basis(anchors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(anchors.len());
    for a in anchors {
        let mut v = a.clone();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if let Some(u) = normalize(v) {
            basis.push(u);
        }
    }
    basis
}

pub fn generate_universe(seed: u64, config: &UniverseConfig) -> Result<ModeUniverse> {
    config.validate()?;
    let mut rng = rng_for(seed, Stream::Universe);
    let anchors = sample_anchors(&mut rng, config)?;

    let mut vocabulary = Vec::with_capacity(config.vocab_size);
    let mut labels = Vec::with_capacity(config.vocab_size);
    for i in 0..config.on_mode() {
        let mode = i % config.modes;
        let anchor = &anchors[mode];
        let values = if config.noise == 0.0 {
            anchor.clone()
        } else {
            loop {
                let perturbed: Vec<f64> = anchor
                    .iter()
                    .map(|a| a + config.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if let Some(v) = normalize(perturbed) {
                    break v;
                }
            }
        };
        vocabulary.push(Embedding::new(values)?);
        labels.push(CandidateLabel::Mode(mode));
    }

    let basis = span_basis(&anchors);
    let s = config.distractor_similarity;
    for _ in 0..config.distractors {
        let orth = loop {
            let mut v = gaussian(&mut rng, config.dim);
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            if let Some(u) = normalize(v) {
                break u;
            }
        };
        let near = &anchors[rng.random_range(0..config.modes)];
        let values: Vec<f64> = near
            .iter()
            .zip(&orth)
            .map(|(a, u)| s * a + (1.0 - s * s).sqrt() * u)
            .collect();
        vocabulary.push(Embedding::new(values)?);
        labels.push(CandidateLabel::Distractor);
    }

    Ok(ModeUniverse {
        config: *config,
        seed,
        anchors: anchors
            .into_iter()
            .map(Embedding::new)
            .collect::<Result<_>>()?,
        vocabulary,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::{cosine_similarity, validity_score};

    #[test]
    fn deterministic_under_seed() {
        let cfg = UniverseConfig::default();
        let a = generate_universe(11, &cfg).unwrap();
        let b = generate_universe(11, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_universe(12, &cfg).unwrap();
        assert_ne!(a.anchors, c.anchors);
    }

    #[test]
    fn anchors_respect_separation() {
        let cfg = UniverseConfig {
            dim: 8,
            modes: 4,
            vocab_size: 8,
            distractors: 0,
            ..Default::default()
        };
        for seed in 0..20 {
            let u = generate_universe(seed, &cfg).unwrap();
            for i in 0..u.anchors.len() {
                for j in 0..i {
                    assert!(
                        cosine_similarity(&u.anchors[i], &u.anchors[j]).unwrap() <= 0.3 + 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn zero_noise_copies_anchors() {
        let cfg = UniverseConfig {
            vocab_size: 6,
            distractors: 0,
            noise: 0.0,
            ..Default::default()
        };
        let u = generate_universe(3, &cfg).unwrap();
        assert_eq!(u.vocabulary, u.anchors);
    }

    #[test]
    fn labels_and_distractor_geometry() {
        let u = generate_universe(5, &UniverseConfig::default()).unwrap();
        assert_eq!(u.labels.len(), 60);
        let gt = u.ground_truth();
        let distractors: Vec<usize> = (0..60)
            .filter(|&i| u.labels[i] == CandidateLabel::Distractor)
            .collect();
        assert_eq!(distractors.len(), 12);
        for &i in &distractors {
            let q = validity_score(&u.vocabulary[i], &gt).unwrap();
            assert!((q - 0.25).abs() < 1e-9, "distractor validity {q}");
        }
        for i in 0..48 {
            let CandidateLabel::Mode(m) = u.labels[i] else {
                panic!()
            };
            assert_eq!(m, i % 6);
            assert!(cosine_similarity(&u.vocabulary[i], &u.anchors[m]).unwrap() > 0.8);
        }
    }

    #[test]
    fn impossible_separation_is_a_config_error() {
        let cfg = UniverseConfig {
            dim: 2,
            modes: 6,
            vocab_size: 6,
            distractors: 0,
            ..Default::default()
        };
        assert!(matches!(generate_universe(0, &cfg), Err(Error::Config(_))));
        let cfg = UniverseConfig {
            dim: 4,
            modes: 4,
            vocab_size: 8,
            distractors: 2,
            ..Default::default()
        };
        assert!(matches!(generate_universe(0, &cfg), Err(Error::Config(_))));
    }
}
