//! Embedding vectors, cosine geometry and clamped validity scoring.
//!
//! Vectors are kept exactly as supplied; normalization only ever happens
//! inside [`cosine_similarity`]. All arithmetic is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when a caller supplies a precomputed norm.
const NORM_TOLERANCE: f64 = 1e-9;

/// A dense embedding with its L2 norm cached at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
    norm: f64,
}

impl Embedding {
    /// Builds an embedding, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Structure(
                "embedding must have dimension >= 1".into(),
            ));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                index,
                detail: format!("embedding entry {}", values[index]),
            });
        }
        let norm = l2_norm(&values);
        Ok(Self { values, norm })
    }

    /// Builds an embedding with a caller-supplied norm, which must agree with
    /// the recomputed one.
    pub fn with_norm(values: Vec<f64>, norm: f64) -> Result<Self> {
        let embedding = Self::new(values)?;
        let scale = embedding.norm.max(f64::MIN_POSITIVE);
        if !norm.is_finite() || (norm - embedding.norm).abs() > NORM_TOLERANCE * scale {
            return Err(Error::Integrity(format!(
                "stored norm {norm} disagrees with recomputed norm {}",
                embedding.norm
            )));
        }
        Ok(embedding)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity `<a,b> / (|a| |b|)`, clipped into `[-1, 1]` to absorb
/// rounding.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.is_zero() || b.is_zero() {
        return Err(Error::Degenerate("cosine of an all-zero vector".into()));
    }
    if a.values == b.values {
        return Ok(1.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// One hypothesis with its embedding and, once scored, its validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedHypothesis {
    #[serde(default)]
    pub text: String,
    pub embedding: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<f64>,
}

impl EmbeddedHypothesis {
    pub fn new(text: impl Into<String>, embedding: Embedding) -> Self {
        Self {
            text: text.into(),
            embedding,
            validity: None,
        }
    }

    /// Synthetic hypotheses carry no text.
    pub fn from_embedding(embedding: Embedding) -> Self {
        Self::new(String::new(), embedding)
    }
}

/// A ground-truth event: its text and its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub text: String,
    pub embedding: Embedding,
}

/// The non-empty set of ground-truth events for one sample. All embeddings
/// share one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GroundTruthEvent>", into = "Vec<GroundTruthEvent>")]
pub struct GroundTruthSet {
    events: Vec<GroundTruthEvent>,
}

impl GroundTruthSet {
    pub fn new(events: Vec<GroundTruthEvent>) -> Result<Self> {
        let Some(first) = events.first() else {
            return Err(Error::Structure("ground-truth set is empty".into()));
        };
        let dim = first.embedding.dim();
        for event in &events {
            if event.embedding.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: event.embedding.dim(),
                });
            }
            if event.embedding.is_zero() {
                return Err(Error::Degenerate(format!(
                    "ground-truth event '{}' has an all-zero embedding",
                    event.text
                )));
            }
        }
        Ok(Self { events })
    }

    /// Ground truth without texts, as used by the synthetic world.
    pub fn from_embeddings(embeddings: Vec<Embedding>) -> Result<Self> {
        Self::new(
            embeddings
                .into_iter()
                .map(|embedding| GroundTruthEvent {
                    text: String::new(),
                    embedding,
                })
                .collect(),
        )
    }

    pub fn events(&self) -> &[GroundTruthEvent] {
        &self.events
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &Embedding> {
        self.events.iter().map(|e| &e.embedding)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.events[0].embedding.dim()
    }
}

impl TryFrom<Vec<GroundTruthEvent>> for GroundTruthSet {
    type Error = Error;

    fn try_from(events: Vec<GroundTruthEvent>) -> Result<Self> {
        GroundTruthSet::new(events)
    }
}

impl From<GroundTruthSet> for Vec<GroundTruthEvent> {
    fn from(g: GroundTruthSet) -> Self {
        g.events
    }
}

/// Highest raw cosine between `h` and any ground-truth event.
pub fn max_similarity(h: &Embedding, gt: &GroundTruthSet) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for g in gt.embeddings() {
        best = best.max(cosine_similarity(h, g)?);
    }
    Ok(best)
}

/// Validity score: the best cosine against the ground truth, clamped to
/// `[0, 1]` so that it can serve as a probability weight downstream.
pub fn validity_score(h: &Embedding, gt: &GroundTruthSet) -> Result<f64> {
    Ok(max_similarity(h, gt)?.clamp(0.0, 1.0))
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn gt(vs: &[&[f64]]) -> GroundTruthSet {
        GroundTruthSet::from_embeddings(vs.iter().map(|v| e(v)).collect()).unwrap()
    }

    fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        dot / (na.sqrt() * nb.sqrt())
    }

    #[test]
    fn cosine_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])).unwrap(),
            1.0
        );
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(),
            0.0
        );
        let c = cosine_similarity(&e(&[1.0, 0.0]), &e(&[h, h])).unwrap();
        assert!((c - naive_cos(&[1.0, 0.0], &[h, h])).abs() < 1e-12);
        assert!((c - 0.707_106_78).abs() < 1e-8);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
        assert!(matches!(
            cosine_similarity(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn embedding_rejects_bad_input() {
        assert!(Embedding::new(vec![]).is_err());
        assert!(matches!(
            Embedding::new(vec![1.0, f64::NAN]),
            Err(Error::Numeric { index: 1, .. })
        ));
        assert!(Embedding::with_norm(vec![3.0, 4.0], 5.0).is_ok());
        assert!(Embedding::with_norm(vec![3.0, 4.0], 5.001).is_err());
    }

    #[test]
    fn validity_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(
            validity_score(&e(&[1.0, 0.0]), &gt(&[&[1.0, 0.0]])).unwrap(),
            1.0
        );
        assert_eq!(
            validity_score(&e(&[0.0, 1.0]), &gt(&[&[1.0, 0.0]])).unwrap(),
            0.0
        );
        let q = validity_score(&e(&[h, h]), &gt(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let oracle = [[1.0, 0.0], [0.0, 1.0]]
            .iter()
            .map(|g| naive_cos(&[h, h], g))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((q - oracle).abs() < 1e-12);
        assert!((q - 0.707_106_78).abs() < 1e-8);
    }

    #[test]
    fn negative_cosine_clamps_to_zero() {
        assert_eq!(
            validity_score(&e(&[-1.0, 0.0]), &gt(&[&[1.0, 0.0]])).unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_ground_truth_rejected() {
        assert!(matches!(
            GroundTruthSet::new(vec![]),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn serde_roundtrip_validates() {
        let json = serde_json::to_string(&e(&[0.25, -1.5])).unwrap();
        let back: Embedding = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e(&[0.25, -1.5]));
        assert!(serde_json::from_str::<Embedding>("[]").is_err());
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(
            (a, b) in (1usize..8).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            let base = cosine_similarity(&e(&a), &e(&b)).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * beta).collect();
            let scaled = cosine_similarity(&e(&sa), &e(&sb)).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
            let sym = cosine_similarity(&e(&b), &e(&a)).unwrap();
            prop_assert!((base - sym).abs() < 1e-15);
            prop_assert!((-1.0..=1.0).contains(&base));
        }

        #[test]
        fn validity_monotone_in_ground_truth(
            (h, g1, g2) in (1usize..6).prop_flat_map(|d| (
                vec_strategy(d),
                prop::collection::vec(vec_strategy(d), 1..4),
                prop::collection::vec(vec_strategy(d), 0..4),
            )),
        ) {
            let small = GroundTruthSet::from_embeddings(g1.iter().map(|v| e(v)).collect()).unwrap();
            let mut all = g1.clone();
            all.extend(g2);
            let large = GroundTruthSet::from_embeddings(all.iter().map(|v| e(v)).collect()).unwrap();
            let qs = validity_score(&e(&h), &small).unwrap();
            let ql = validity_score(&e(&h), &large).unwrap();
            prop_assert!(qs <= ql);
            prop_assert!((0.0..=1.0).contains(&qs));

            let mut with_h = g1.clone();
            with_h.push(h.clone());
            let own = GroundTruthSet::from_embeddings(with_h.iter().map(|v| e(v)).collect()).unwrap();
            prop_assert!((validity_score(&e(&h), &own).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
