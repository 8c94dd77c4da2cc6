//! Hybrid validity/diversity reward for one group of rollouts.
//!
//! Every rollout `k` in a group receives
//!
//! ```text
//! R(k) = R_validity(k) + R_intra(k) + R_inter(k)
//! ```
//!
//! where `R_validity` is the mean clamped validity `q` of its hypotheses,
//! `R_intra` is the validity-weighted mean pairwise cosine dissimilarity
//! inside the rollout, and `R_inter` is the leave-one-out mean of a
//! validity-weighted directed Chamfer distance to every other rollout,
//! scaled by a validity gate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{
    cosine_similarity, validity_score, EmbeddedHypothesis, Embedding, GroundTruthSet,
};

/// Default stabilizer added to the validity mass in the importance weights.
pub const DEFAULT_WEIGHT_EPSILON: f64 = 1e-8;

/// One sampled response: a non-empty list of hypotheses sharing a dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    hypotheses: Vec<EmbeddedHypothesis>,
}

impl Rollout {
    pub fn new(hypotheses: Vec<EmbeddedHypothesis>) -> Result<Self> {
        let Some(first) = hypotheses.first() else {
            return Err(Error::Structure("rollout has no hypotheses".into()));
        };
        let dim = first.embedding.dim();
        if let Some(h) = hypotheses.iter().find(|h| h.embedding.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: h.embedding.dim(),
            });
        }
        Ok(Self { hypotheses })
    }

    pub fn from_embeddings(embeddings: Vec<Embedding>) -> Result<Self> {
        Self::new(
            embeddings
                .into_iter()
                .map(EmbeddedHypothesis::from_embedding)
                .collect(),
        )
    }

    pub fn hypotheses(&self) -> &[EmbeddedHypothesis] {
        &self.hypotheses
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.hypotheses[0].embedding.dim()
    }

    fn embedding(&self, i: usize) -> &Embedding {
        &self.hypotheses[i].embedding
    }
}

/// The `G` rollouts sampled for one context, with that context's ground truth.
///
/// Rollouts may be ragged (different hypothesis counts); each formula then
/// uses the rollout's own count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGroup {
    pub context_id: String,
    rollouts: Vec<Rollout>,
    ground_truth: GroundTruthSet,
}

impl ResponseGroup {
    pub fn new(
        context_id: impl Into<String>,
        rollouts: Vec<Rollout>,
        ground_truth: GroundTruthSet,
    ) -> Result<Self> {
        if rollouts.is_empty() {
            return Err(Error::Structure("response group has no rollouts".into()));
        }
        let dim = ground_truth.dim();
        for r in &rollouts {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.dim(),
                });
            }
        }
        Ok(Self {
            context_id: context_id.into(),
            rollouts,
            ground_truth,
        })
    }

    pub fn rollouts(&self) -> &[Rollout] {
        &self.rollouts
    }

    pub fn ground_truth(&self) -> &GroundTruthSet {
        &self.ground_truth
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }
}

/// How a rollout's validity scores scale its raw inter-group diversity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Square root of the mean validity.
    #[default]
    Full,
    /// Mean validity.
    Mean,
    /// Minimum validity.
    Min,
    /// No gating: the gate is always 1.
    None,
}

impl GateMode {
    pub const ALL: [GateMode; 4] = [
        GateMode::Full,
        GateMode::Mean,
        GateMode::Min,
        GateMode::None,
    ];

    /// Gate value for a rollout with validity scores `q` (non-empty).
    pub fn gate(self, q: &[f64]) -> f64 {
        match self {
            GateMode::Full => mean(q).sqrt(),
            GateMode::Mean => mean(q),
            GateMode::Min => q.iter().copied().fold(f64::INFINITY, f64::min),
            GateMode::None => 1.0,
        }
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateMode::Full => "full",
            GateMode::Mean => "mean",
            GateMode::Min => "min",
            GateMode::None => "none",
        })
    }
}

impl FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "sqrt" => Ok(GateMode::Full),
            "mean" => Ok(GateMode::Mean),
            "min" => Ok(GateMode::Min),
            "none" | "vanilla" => Ok(GateMode::None),
            other => Err(Error::Config(format!("unknown gate mode '{other}'"))),
        }
    }
}

/// Which reward terms enter the composite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub validity: bool,
    pub intra: bool,
    pub inter: bool,
}

impl Components {
    pub const ALL: Components = Components {
        validity: true,
        intra: true,
        inter: true,
    };
    pub const VALIDITY_ONLY: Components = Components {
        validity: true,
        intra: false,
        inter: false,
    };
    pub const NO_INTRA: Components = Components {
        validity: true,
        intra: false,
        inter: true,
    };
    pub const NO_INTER: Components = Components {
        validity: true,
        intra: true,
        inter: false,
    };
}

impl Default for Components {
    fn default() -> Self {
        Components::ALL
    }
}

/// Named reward designs accepted on the command line.
impl FromStr for Components {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scatter" | "full" | "all" => Ok(Components::ALL),
            "validity-only" | "validity" | "grpo" => Ok(Components::VALIDITY_ONLY),
            "no-intra" | "-intra" => Ok(Components::NO_INTRA),
            "no-inter" | "-inter" => Ok(Components::NO_INTER),
            other => Err(Error::Config(format!("unknown reward design '{other}'"))),
        }
    }
}

impl fmt::Display for Components {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Components::ALL => f.write_str("scatter"),
            Components::VALIDITY_ONLY => f.write_str("validity-only"),
            Components::NO_INTRA => f.write_str("no-intra"),
            Components::NO_INTER => f.write_str("no-inter"),
            c => write!(
                f,
                "custom(v={},intra={},inter={})",
                c.validity, c.intra, c.inter
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Stabilizer in the importance-weight denominator.
    pub epsilon: f64,
    pub gate_mode: GateMode,
    pub components: Components,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_WEIGHT_EPSILON,
            gate_mode: GateMode::Full,
            components: Components::ALL,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-rollout reward decomposition, with the intermediate quantities kept
/// for auditing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub rollout_index: usize,
    pub r_validity: f64,
    pub r_intra: f64,
    pub s_raw: f64,
    pub gate: f64,
    pub r_inter: f64,
    pub composite: f64,
    /// Clamped validity score of each hypothesis.
    pub validity_scores: Vec<f64>,
    /// Importance weight of each hypothesis.
    pub weights: Vec<f64>,
    /// Directed distance from this rollout to every rollout of the group
    /// (zero on the diagonal). Empty when the inter term is disabled.
    pub directed_distances: Vec<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Clamped validity score of every hypothesis in the rollout.
pub fn validity_scores(rollout: &Rollout, gt: &GroundTruthSet) -> Result<Vec<f64>> {
    rollout
        .hypotheses
        .iter()
        .map(|h| validity_score(&h.embedding, gt))
        .collect()
}

/// Mean validity of a rollout's hypotheses.
pub fn validity_reward(rollout: &Rollout, gt: &GroundTruthSet) -> Result<f64> {
    Ok(mean(&validity_scores(rollout, gt)?))
}

fn check_len(rollout: &Rollout, q: &[f64]) -> Result<()> {
    if q.len() != rollout.len() {
        return Err(Error::Structure(format!(
            "{} validity scores for {} hypotheses",
            q.len(),
            rollout.len()
        )));
    }
    Ok(())
}

/// Validity-weighted mean pairwise dissimilarity inside one rollout:
/// `2 / (m(m-1)) * sum_{i<j} (1 - cos(h_i, h_j)) * sqrt(q_i q_j)`.
///
/// A single-hypothesis rollout has no pairs and scores 0.
pub fn intra_diversity_reward(rollout: &Rollout, q: &[f64]) -> Result<f64> {
    check_len(rollout, q)?;
    let m = rollout.len();
    if m < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let weight = (q[i] * q[j]).sqrt();
            if weight == 0.0 {
                continue;
            }
            let cos = cosine_similarity(rollout.embedding(i), rollout.embedding(j))?;
            total += (1.0 - cos) * weight;
        }
    }
    Ok(2.0 * total / (m * (m - 1)) as f64)
}

/// `omega_i = q_i / (sum_j q_j + epsilon)`.
pub fn importance_weights(q: &[f64], epsilon: f64) -> Vec<f64> {
    let denom = q.iter().sum::<f64>() + epsilon;
    q.iter().map(|&qi| qi / denom).collect()
}

/// Weighted asymmetric Chamfer distance from `src` to `dst`:
/// `sum_i omega_i * (1 - max_j cos(src_i, dst_j))`.
pub fn chamfer_directed(src: &Rollout, dst: &Rollout, weights: &[f64]) -> Result<f64> {
    check_len(src, weights)?;
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..dst.len() {
            best = best.max(cosine_similarity(src.embedding(i), dst.embedding(j))?);
        }
        total += w * (1.0 - best);
    }
    Ok(total)
}

/// Inter-group diversity of one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterDiversity {
    pub s_raw: f64,
    pub gate: f64,
    pub r_inter: f64,
}

struct GroupScores {
    q: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl GroupScores {
    fn compute(group: &ResponseGroup, epsilon: f64) -> Result<Self> {
        let q = group
            .rollouts
            .iter()
            .map(|r| validity_scores(r, &group.ground_truth))
            .collect::<Result<Vec<_>>>()?;
        let weights = q.iter().map(|qk| importance_weights(qk, epsilon)).collect();
        Ok(Self { q, weights })
    }

    /// Row `k` of the directed-distance matrix, summed in index order.
    fn distances_from(&self, group: &ResponseGroup, k: usize) -> Result<Vec<f64>> {
        let src = &group.rollouts[k];
        (0..group.len())
            .map(|l| {
                if l == k {
                    Ok(0.0)
                } else {
                    chamfer_directed(src, &group.rollouts[l], &self.weights[k])
                }
            })
            .collect()
    }

    fn inter(&self, distances: &[f64], k: usize, gate_mode: GateMode) -> InterDiversity {
        let g = distances.len();
        let gate = gate_mode.gate(&self.q[k]);
        if g < 2 {
            return InterDiversity {
                s_raw: 0.0,
                gate,
                r_inter: 0.0,
            };
        }
        let sum: f64 = distances
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != k)
            .map(|(_, d)| d)
            .sum();
        let s_raw = sum / (g - 1) as f64;
        InterDiversity {
            s_raw,
            gate,
            r_inter: s_raw * gate,
        }
    }
}

/// Leave-one-out Chamfer diversity of rollout `k` against the rest of its
/// group, scaled by the chosen gate. A group of one rollout scores 0.
pub fn inter_diversity_reward(
    group: &ResponseGroup,
    k: usize,
    gate_mode: GateMode,
    epsilon: f64,
) -> Result<InterDiversity> {
    if k >= group.len() {
        return Err(Error::Structure(format!(
            "rollout index {k} out of range for group of {}",
            group.len()
        )));
    }
    let scores = GroupScores::compute(group, epsilon)?;
    let distances = scores.distances_from(group, k)?;
    Ok(scores.inter(&distances, k, gate_mode))
}

/// Full reward decomposition for every rollout of `group`. Disabled
/// components are reported as zero and left out of the composite.
pub fn compute_rewards(
    group: &ResponseGroup,
    config: &RewardConfig,
) -> Result<Vec<RewardBreakdown>> {
    config.validate()?;
    let scores = GroupScores::compute(group, config.epsilon)?;
    let c = config.components;
    let mut out = Vec::with_capacity(group.len());
    for (k, rollout) in group.rollouts.iter().enumerate() {
        let q = &scores.q[k];
        let r_validity = if c.validity { mean(q) } else { 0.0 };
        let r_intra = if c.intra {
            intra_diversity_reward(rollout, q)?
        } else {
            0.0
        };
        let (directed_distances, inter) = if c.inter {
            let distances = scores.distances_from(group, k)?;
            let inter = scores.inter(&distances, k, config.gate_mode);
            (distances, inter)
        } else {
            (
                Vec::new(),
                InterDiversity {
                    s_raw: 0.0,
                    gate: 0.0,
                    r_inter: 0.0,
                },
            )
        };
        out.push(RewardBreakdown {
            rollout_index: k,
            r_validity,
            r_intra,
            s_raw: inter.s_raw,
            gate: inter.gate,
            r_inter: inter.r_inter,
            composite: r_validity + r_intra + inter.r_inter,
            validity_scores: q.clone(),
            weights: scores.weights[k].clone(),
            directed_distances,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2 as H;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn rollout(vs: &[&[f64]]) -> Rollout {
        Rollout::from_embeddings(vs.iter().map(|v| e(v)).collect()).unwrap()
    }

    fn gt(vs: &[&[f64]]) -> GroundTruthSet {
        GroundTruthSet::from_embeddings(vs.iter().map(|v| e(v)).collect()).unwrap()
    }

    #[test]
    fn validity_reward_examples() {
        let g = gt(&[&[1.0, 0.0]]);
        assert_eq!(
            validity_reward(&rollout(&[&[1.0, 0.0], &[0.0, 1.0]]), &g).unwrap(),
            0.5
        );
        assert_eq!(validity_reward(&rollout(&[&[1.0, 0.0]]), &g).unwrap(), 1.0);
        let g2 = gt(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = validity_reward(&rollout(&[&[1.0, 0.0], &[H, H]]), &g2).unwrap();
        assert!((r - (1.0 + H) / 2.0).abs() < 1e-12);
        assert!((r - 0.85355339).abs() < 1e-8);
    }

    #[test]
    fn intra_examples() {
        let same = rollout(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(intra_diversity_reward(&same, &[0.3, 0.9]).unwrap(), 0.0);
        let ortho = rollout(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(intra_diversity_reward(&ortho, &[1.0, 0.0]).unwrap(), 0.0);
        let pair = rollout(&[&[1.0, 0.0], &[H, H]]);
        let v = intra_diversity_reward(&pair, &[1.0, H]).unwrap();
        // (1 - cos 45deg) * sqrt(1 * cos 45deg)
        let oracle = (1.0 - H) * H.sqrt();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.24629).abs() < 1e-5);
        assert_eq!(
            intra_diversity_reward(&rollout(&[&[1.0, 0.0]]), &[1.0]).unwrap(),
            0.0
        );
        assert!(intra_diversity_reward(&pair, &[1.0]).is_err());
    }

    #[test]
    fn importance_weight_examples() {
        let w = importance_weights(&[1.0, 1.0], 1e-8);
        assert!((w[0] - 0.5).abs() < 1e-8 && (w[1] - 0.5).abs() < 1e-8);
        assert_eq!(importance_weights(&[0.0, 0.0], 1e-8), vec![0.0, 0.0]);
        let w = importance_weights(&[1.0, H], 1e-8);
        assert!((w[0] - 1.0 / (1.0 + H)).abs() < 1e-8);
        assert!((w[0] - 0.58578).abs() < 1e-5 && (w[1] - 0.41421).abs() < 1e-5);
        assert!(w.iter().sum::<f64>() < 1.0);
    }

    #[test]
    fn chamfer_examples() {
        let a = rollout(&[&[1.0, 0.0], &[H, H]]);
        assert_eq!(chamfer_directed(&a, &a, &[0.6, 0.4]).unwrap(), 0.0);

        let w = importance_weights(&[1.0], 1e-8);
        let d = chamfer_directed(&rollout(&[&[1.0, 0.0]]), &rollout(&[&[0.0, 1.0]]), &w).unwrap();
        assert!((d - 1.0).abs() < 1e-7);

        let src = rollout(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let dst = rollout(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let w = importance_weights(&[1.0, 0.0], 1e-8);
        assert_eq!(chamfer_directed(&src, &dst, &w).unwrap(), 0.0);
    }

    fn cross_group() -> ResponseGroup {
        ResponseGroup::new(
            "fixture",
            vec![rollout(&[&[1.0, 0.0]]), rollout(&[&[0.0, 1.0]])],
            gt(&[&[1.0, 0.0], &[0.0, 1.0]]),
        )
        .unwrap()
    }

    #[test]
    fn inter_examples() {
        let g = cross_group();
        let a = inter_diversity_reward(&g, 0, GateMode::Full, 1e-8).unwrap();
        assert!((a.s_raw - 1.0).abs() < 1e-7);
        assert_eq!(a.gate, 1.0);
        assert!((a.r_inter - 1.0).abs() < 1e-7);

        let dup = ResponseGroup::new(
            "dup",
            vec![rollout(&[&[1.0, 0.0]]), rollout(&[&[1.0, 0.0]])],
            gt(&[&[1.0, 0.0]]),
        )
        .unwrap();
        let d = inter_diversity_reward(&dup, 1, GateMode::Full, 1e-8).unwrap();
        assert_eq!((d.s_raw, d.r_inter), (0.0, 0.0));

        let invalid = ResponseGroup::new(
            "invalid",
            vec![
                rollout(&[&[0.0, 1.0], &[0.0, 1.0]]),
                rollout(&[&[1.0, 0.0]]),
            ],
            gt(&[&[1.0, 0.0]]),
        )
        .unwrap();
        let z = inter_diversity_reward(&invalid, 0, GateMode::Full, 1e-8).unwrap();
        assert_eq!(z.gate, 0.0);
        assert_eq!(z.r_inter, 0.0);
        assert!(inter_diversity_reward(&invalid, 2, GateMode::Full, 1e-8).is_err());
    }

    #[test]
    fn single_rollout_group_has_no_inter() {
        let g =
            ResponseGroup::new("one", vec![rollout(&[&[1.0, 0.0]])], gt(&[&[1.0, 0.0]])).unwrap();
        let r = inter_diversity_reward(&g, 0, GateMode::Full, 1e-8).unwrap();
        assert_eq!(r.s_raw, 0.0);
        assert_eq!(r.r_inter, 0.0);
        assert_eq!(r.gate, 1.0);
    }

    #[test]
    fn composite_examples() {
        let b = compute_rewards(&cross_group(), &RewardConfig::default()).unwrap();
        for rb in &b {
            assert!((rb.composite - 2.0).abs() < 1e-7);
            assert_eq!(rb.r_intra, 0.0);
        }

        let baseline = RewardConfig {
            components: Components::VALIDITY_ONLY,
            ..RewardConfig::default()
        };
        let b = compute_rewards(&cross_group(), &baseline).unwrap();
        assert!(b
            .iter()
            .all(|rb| rb.composite == rb.r_validity && rb.r_inter == 0.0 && rb.r_intra == 0.0));

        let off = ResponseGroup::new(
            "off",
            vec![
                rollout(&[&[0.0, 1.0], &[0.0, -1.0]]),
                rollout(&[&[-1.0, 0.0], &[0.0, 1.0]]),
            ],
            gt(&[&[1.0, 0.0]]),
        )
        .unwrap();
        for gm in GateMode::ALL {
            let cfg = RewardConfig {
                gate_mode: gm,
                ..RewardConfig::default()
            };
            for rb in compute_rewards(&off, &cfg).unwrap() {
                assert_eq!(rb.composite, 0.0);
            }
        }
    }

    #[test]
    fn gate_modes() {
        let q = [0.25, 1.0];
        assert!((GateMode::Full.gate(&q) - 0.625f64.sqrt()).abs() < 1e-15);
        assert_eq!(GateMode::Mean.gate(&q), 0.625);
        assert_eq!(GateMode::Min.gate(&q), 0.25);
        assert_eq!(GateMode::None.gate(&q), 1.0);
        for gm in GateMode::ALL {
            assert_eq!(gm.to_string().parse::<GateMode>().unwrap(), gm);
        }
        assert!("median".parse::<GateMode>().is_err());
    }

    #[test]
    fn reward_design_names() {
        for c in [
            Components::ALL,
            Components::VALIDITY_ONLY,
            Components::NO_INTRA,
            Components::NO_INTER,
        ] {
            assert_eq!(c.to_string().parse::<Components>().unwrap(), c);
        }
    }

    #[test]
    fn structural_errors() {
        assert!(Rollout::new(vec![]).is_err());
        assert!(Rollout::from_embeddings(vec![e(&[1.0]), e(&[1.0, 0.0])]).is_err());
        assert!(
            ResponseGroup::new("x", vec![rollout(&[&[1.0, 0.0, 0.0]])], gt(&[&[1.0, 0.0]]))
                .is_err()
        );
        let bad = RewardConfig {
            epsilon: 0.0,
            ..RewardConfig::default()
        };
        assert!(compute_rewards(&cross_group(), &bad).is_err());
    }

    fn group_strategy() -> impl Strategy<Value = (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
        (1usize..5, 1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(g, m, d, n_gt)| {
            let v = prop::collection::vec(-1.0f64..1.0, d)
                .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4);
            (
                prop::collection::vec(prop::collection::vec(v.clone(), m), g),
                prop::collection::vec(v, n_gt),
            )
        })
    }

    fn build(rs: &[Vec<Vec<f64>>], g: &[Vec<f64>]) -> ResponseGroup {
        ResponseGroup::new(
            "p",
            rs.iter()
                .map(|r| Rollout::from_embeddings(r.iter().map(|v| e(v)).collect()).unwrap())
                .collect(),
            GroundTruthSet::from_embeddings(g.iter().map(|v| e(v)).collect()).unwrap(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn bounds_and_self_coverage((rs, g) in group_strategy()) {
            let group = build(&rs, &g);
            let out = compute_rewards(&group, &RewardConfig::default()).unwrap();
            for b in &out {
                prop_assert!((0.0..=1.0).contains(&b.r_validity));
                prop_assert!(b.r_intra >= 0.0 && b.r_intra <= 2.0);
                prop_assert!(b.s_raw >= 0.0 && b.s_raw <= 2.0);
                prop_assert!(b.r_inter <= b.s_raw + 1e-15);
                prop_assert!((b.r_inter - b.s_raw * b.gate).abs() <= 1e-12);
                prop_assert_eq!(b.composite, b.r_validity + b.r_intra + b.r_inter);
                prop_assert!(b.weights.iter().sum::<f64>() < 1.0);
                prop_assert_eq!(b.directed_distances[b.rollout_index], 0.0);
            }
            for (r, b) in group.rollouts().iter().zip(&out) {
                prop_assert_eq!(chamfer_directed(r, r, &b.weights).unwrap(), 0.0);
            }
        }

        #[test]
        fn permutation_equivariance((rs, g) in group_strategy(), rot in 0usize..8) {
            let group = build(&rs, &g);
            let base = compute_rewards(&group, &RewardConfig::default()).unwrap();

            // Reverse hypotheses inside every rollout.
            let flipped: Vec<Vec<Vec<f64>>> = rs.iter().map(|r| r.iter().rev().cloned().collect()).collect();
            let fb = compute_rewards(&build(&flipped, &g), &RewardConfig::default()).unwrap();
            for (a, b) in base.iter().zip(&fb) {
                prop_assert!((a.r_validity - b.r_validity).abs() < 1e-12);
                prop_assert!((a.r_intra - b.r_intra).abs() < 1e-12);
                for (x, y) in a.directed_distances.iter().zip(&b.directed_distances) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            // Rotate rollouts.
            let n = rs.len();
            let shift = rot % n;
            let mut rotated = rs.clone();
            rotated.rotate_left(shift);
            let rb = compute_rewards(&build(&rotated, &g), &RewardConfig::default()).unwrap();
            for (k, b) in rb.iter().enumerate() {
                let orig = &base[(k + shift) % n];
                prop_assert!((b.composite - orig.composite).abs() < 1e-12);
            }
        }
    }
}
