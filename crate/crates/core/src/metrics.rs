//! Embedding-based soft-matching metrics over `K` sampling rounds.
//!
//! * SoftPass: some hypothesis scores strictly above `tau_sp`.
//! * SoftRecall: fraction of ground-truth events matched strictly above `tau_sr`.
//! * ValidRatio: fraction of hypothesis slots that are both relevant
//!   (`score >= tau_valid`) and not redundant (cosine `<= tau_dup` to every
//!   previously accepted hypothesis, processed in generation order).
//!
//! Geometry is computed once per sample in [`SampleScores`]; thresholds and
//! round counts are applied afterwards, so sweeps never re-embed.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{cosine_similarity, validity_score, Embedding, GroundTruthSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub tau_sp: f64,
    pub tau_sr: f64,
    pub tau_valid: f64,
    pub tau_dup: f64,
    /// Nominal hypotheses per round. When set, ValidRatio divides by `K * M`
    /// and longer rounds are rejected; when unset it divides by the actual
    /// number of hypotheses.
    pub hypotheses_per_round: Option<usize>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            tau_sp: 0.8,
            tau_sr: 0.8,
            tau_valid: 0.4,
            tau_dup: 0.8,
            hypotheses_per_round: None,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_sp", self.tau_sp),
            ("tau_sr", self.tau_sr),
            ("tau_valid", self.tau_valid),
            ("tau_dup", self.tau_dup),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.hypotheses_per_round == Some(0) {
            return Err(Error::Config("hypotheses per round must be >= 1".into()));
        }
        Ok(())
    }
}

/// Indicator that any score strictly exceeds `tau_sp`.
pub fn soft_pass(scores: &[Vec<f64>], tau_sp: f64) -> bool {
    scores.iter().flatten().any(|&s| s > tau_sp)
}

/// Fraction of ground-truth events whose best hypothesis cosine strictly
/// exceeds `tau_sr`.
pub fn soft_recall<'a>(
    gt: &GroundTruthSet,
    hypotheses: impl IntoIterator<Item = &'a Embedding>,
    tau_sr: f64,
) -> Result<f64> {
    let hypotheses: Vec<&Embedding> = hypotheses.into_iter().collect();
    let mut hit = 0usize;
    for g in gt.embeddings() {
        let mut best = f64::NEG_INFINITY;
        for h in &hypotheses {
            best = best.max(cosine_similarity(h, g)?);
        }
        if best > tau_sr {
            hit += 1;
        }
    }
    Ok(hit as f64 / gt.len() as f64)
}

/// Accepted-hypothesis grid and the resulting ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidRatio {
    pub ratio: f64,
    pub flags: Vec<Vec<bool>>,
}

/// Greedy relevance-and-novelty filter over hypotheses in generation order.
/// `cos(a, b)` receives flat indices with `b < a`.
fn greedy_filter(
    scores: &[Vec<f64>],
    tau_valid: f64,
    tau_dup: f64,
    mut cos: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<Vec<Vec<bool>>> {
    let mut accepted: Vec<usize> = Vec::new();
    let mut flags = Vec::with_capacity(scores.len());
    let mut flat = 0usize;
    for round in scores {
        let mut row = Vec::with_capacity(round.len());
        for &s in round {
            let mut keep = s >= tau_valid;
            if keep {
                for &prev in &accepted {
                    if cos(flat, prev)? > tau_dup {
                        keep = false;
                        break;
                    }
                }
            }
            if keep {
                accepted.push(flat);
            }
            row.push(keep);
            flat += 1;
        }
        flags.push(row);
    }
    Ok(flags)
}

fn ratio_denominator(
    round_sizes: impl Iterator<Item = usize>,
    config: &EvaluationConfig,
) -> Result<usize> {
    let mut rounds = 0usize;
    let mut total = 0usize;
    for n in round_sizes {
        if let Some(m) = config.hypotheses_per_round {
            if n > m {
                return Err(Error::Structure(format!(
                    "round has {n} hypotheses but at most {m} are expected"
                )));
            }
        }
        rounds += 1;
        total += n;
    }
    Ok(match config.hypotheses_per_round {
        Some(m) => rounds * m,
        None => total,
    })
}

fn ratio_of(flags: &[Vec<bool>], denominator: usize) -> f64 {
    if denominator == 0 {
        return 0.0;
    }
    flags.iter().flatten().filter(|&&v| v).count() as f64 / denominator as f64
}

/// ValidRatio computed directly from embeddings. `rounds` must be in
/// sampling order.
pub fn valid_ratio(
    rounds: &[Vec<Embedding>],
    gt: &GroundTruthSet,
    config: &EvaluationConfig,
) -> Result<ValidRatio> {
    config.validate()?;
    let scores = rounds
        .iter()
        .map(|r| {
            r.iter()
                .map(|h| validity_score(h, gt))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<&Embedding> = rounds.iter().flatten().collect();
    let flags = greedy_filter(&scores, config.tau_valid, config.tau_dup, |a, b| {
        cosine_similarity(flat[a], flat[b])
    })?;
    let denom = ratio_denominator(rounds.iter().map(Vec::len), config)?;
    Ok(ValidRatio {
        ratio: ratio_of(&flags, denom),
        flags,
    })
}

/// Precomputed similarity structure of one sample's `K` rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    round_sizes: Vec<usize>,
    /// Clamped best ground-truth match of every hypothesis, by round.
    best_match: Vec<Vec<f64>>,
    /// For each round and ground-truth event, the best cosine from any
    /// hypothesis of that round.
    gt_best: Vec<Vec<f64>>,
    /// Strict lower triangle of the hypothesis cosine matrix, row-major.
    pair_cos: Vec<f64>,
}

fn tri_index(a: usize, b: usize) -> usize {
    debug_assert!(b < a);
    a * (a - 1) / 2 + b
}

impl SampleScores {
    pub fn compute(
        sample_id: impl Into<String>,
        rounds: &[Vec<Embedding>],
        gt: &GroundTruthSet,
    ) -> Result<Self> {
        if rounds.is_empty() {
            return Err(Error::Structure("sample has no rounds".into()));
        }
        let mut best_match = Vec::with_capacity(rounds.len());
        let mut gt_best = Vec::with_capacity(rounds.len());
        for round in rounds {
            let mut row = Vec::with_capacity(round.len());
            let mut per_gt = vec![f64::NEG_INFINITY; gt.len()];
            for h in round {
                let mut best = f64::NEG_INFINITY;
                for (gi, g) in gt.embeddings().enumerate() {
                    let c = cosine_similarity(h, g)?;
                    best = best.max(c);
                    per_gt[gi] = per_gt[gi].max(c);
                }
                row.push(best.clamp(0.0, 1.0));
            }
            best_match.push(row);
            gt_best.push(per_gt);
        }
        let flat: Vec<&Embedding> = rounds.iter().flatten().collect();
        let mut pair_cos = Vec::with_capacity(flat.len() * flat.len().saturating_sub(1) / 2);
        for a in 0..flat.len() {
            for b in 0..a {
                pair_cos.push(cosine_similarity(flat[a], flat[b])?);
            }
        }
        Ok(Self {
            sample_id: sample_id.into(),
            round_sizes: rounds.iter().map(Vec::len).collect(),
            best_match,
            gt_best,
            pair_cos,
        })
    }

    pub fn rounds(&self) -> usize {
        self.round_sizes.len()
    }

    pub fn best_match(&self) -> &[Vec<f64>] {
        &self.best_match
    }

    fn round_offset(&self, round: usize) -> usize {
        self.round_sizes[..round].iter().sum()
    }

    fn evaluate_range(
        &self,
        config: &EvaluationConfig,
        start: usize,
        end: usize,
    ) -> Result<SampleEvaluation> {
        config.validate()?;
        let scores = &self.best_match[start..end];
        let soft_pass = soft_pass(scores, config.tau_sp);
        let gt_count = self.gt_best[0].len();
        let hit = (0..gt_count)
            .filter(|&g| {
                self.gt_best[start..end]
                    .iter()
                    .map(|row| row[g])
                    .fold(f64::NEG_INFINITY, f64::max)
                    > config.tau_sr
            })
            .count();
        let offset = self.round_offset(start);
        let flags = greedy_filter(scores, config.tau_valid, config.tau_dup, |a, b| {
            Ok(self.pair_cos[tri_index(a + offset, b + offset)])
        })?;
        let denom = ratio_denominator(self.round_sizes[start..end].iter().copied(), config)?;
        Ok(SampleEvaluation {
            sample_id: self.sample_id.clone(),
            k: end - start,
            config: *config,
            best_match: scores.to_vec(),
            soft_pass,
            soft_recall: hit as f64 / gt_count as f64,
            valid_ratio: ratio_of(&flags, denom),
            valid_flags: flags,
        })
    }

    /// Metrics over the first `k` rounds.
    pub fn evaluate(&self, config: &EvaluationConfig, k: usize) -> Result<SampleEvaluation> {
        if k == 0 || k > self.rounds() {
            return Err(Error::Structure(format!(
                "sample '{}' has {} rounds, cannot evaluate K={k}",
                self.sample_id,
                self.rounds()
            )));
        }
        self.evaluate_range(config, 0, k)
    }

    /// Metrics of a single round treated as an independent `K = 1` trial.
    pub fn evaluate_round(
        &self,
        config: &EvaluationConfig,
        round: usize,
    ) -> Result<SampleEvaluation> {
        if round >= self.rounds() {
            return Err(Error::Structure(format!(
                "sample '{}' has no round {}",
                self.sample_id,
                round + 1
            )));
        }
        self.evaluate_range(config, round, round + 1)
    }
}

/// Metrics of one sample at one `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEvaluation {
    pub sample_id: String,
    pub k: usize,
    pub config: EvaluationConfig,
    pub best_match: Vec<Vec<f64>>,
    pub soft_pass: bool,
    pub soft_recall: f64,
    pub valid_flags: Vec<Vec<bool>>,
    pub valid_ratio: f64,
}

/// Dataset means at one `K`, as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub soft_pass: f64,
    pub soft_recall: f64,
    pub valid_ratio: f64,
    pub pass_at_k: Option<f64>,
}

/// Mean of per-sample scores. All evaluations must share one config and `K`.
pub fn aggregate(evaluations: &[SampleEvaluation]) -> Result<MetricRow> {
    let Some(first) = evaluations.first() else {
        return Err(Error::Structure("cannot aggregate an empty dataset".into()));
    };
    for e in evaluations {
        if e.config != first.config {
            return Err(Error::Structure(format!(
                "sample '{}' was evaluated under a different config than '{}'",
                e.sample_id, first.sample_id
            )));
        }
        if e.k != first.k {
            return Err(Error::Structure(format!(
                "sample '{}' evaluated at K={} but '{}' at K={}",
                e.sample_id, e.k, first.sample_id, first.k
            )));
        }
    }
    let n = evaluations.len() as f64;
    Ok(MetricRow {
        k: first.k,
        soft_pass: evaluations.iter().filter(|e| e.soft_pass).count() as f64 / n,
        soft_recall: evaluations.iter().map(|e| e.soft_recall).sum::<f64>() / n,
        valid_ratio: evaluations.iter().map(|e| e.valid_ratio).sum::<f64>() / n,
        pass_at_k: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// `K = 1` statistics: every round scored as an independent trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleRoundStats {
    pub rounds: usize,
    pub soft_pass: Stat,
    pub soft_recall: Stat,
    pub valid_ratio: Stat,
    pub pass_at_1: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub samples: usize,
    pub config: EvaluationConfig,
    pub rows: Vec<MetricRow>,
    pub single_round: Option<SingleRoundStats>,
}

/// Dataset report at every requested `K`. When `K = 1` is requested, it is
/// additionally reported as per-round mean and standard deviation.
pub fn metric_report(
    label: impl Into<String>,
    dataset: &[SampleScores],
    ks: &[usize],
    config: &EvaluationConfig,
) -> Result<MetricReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Structure("cannot report on an empty dataset".into()));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let evals = dataset
            .iter()
            .map(|s| s.evaluate(config, k))
            .collect::<Result<Vec<_>>>()?;
        rows.push(aggregate(&evals)?);
    }
    let single_round = if ks.contains(&1) {
        let rounds = dataset.iter().map(SampleScores::rounds).min().unwrap_or(0);
        let mut sp = Vec::with_capacity(rounds);
        let mut sr = Vec::with_capacity(rounds);
        let mut vr = Vec::with_capacity(rounds);
        for r in 0..rounds {
            let evals = dataset
                .iter()
                .map(|s| s.evaluate_round(config, r))
                .collect::<Result<Vec<_>>>()?;
            let row = aggregate(&evals)?;
            sp.push(row.soft_pass);
            sr.push(row.soft_recall);
            vr.push(row.valid_ratio);
        }
        Some(SingleRoundStats {
            rounds,
            soft_pass: Stat::of(&sp),
            soft_recall: Stat::of(&sr),
            valid_ratio: Stat::of(&vr),
            pass_at_1: None,
        })
    } else {
        None
    };
    Ok(MetricReport {
        label: label.into(),
        samples: dataset.len(),
        config: *config,
        rows,
        single_round,
    })
}

/// Per-sample judge verdicts, one per round, keyed by sample id.
pub type Verdicts = HashMap<String, Vec<bool>>;

/// Fraction of `sample_ids` with any true verdict among the first `k`
/// rounds.
pub fn pass_at_k(verdicts: &Verdicts, sample_ids: &[String], k: usize) -> Result<f64> {
    check_coverage(verdicts, sample_ids)?;
    if sample_ids.is_empty() {
        return Ok(0.0);
    }
    let passed = sample_ids
        .iter()
        .filter(|id| verdicts[*id].iter().take(k).any(|&v| v))
        .count();
    Ok(passed as f64 / sample_ids.len() as f64)
}

fn check_coverage(verdicts: &Verdicts, sample_ids: &[String]) -> Result<()> {
    let mut missing: Vec<String> = sample_ids
        .iter()
        .filter(|id| !verdicts.contains_key(*id))
        .cloned()
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingIds(missing));
    }
    Ok(())
}

impl MetricReport {
    /// Adds the judged Pass@K column for every row.
    pub fn attach_verdicts(&mut self, verdicts: &Verdicts, sample_ids: &[String]) -> Result<()> {
        check_coverage(verdicts, sample_ids)?;
        for row in &mut self.rows {
            row.pass_at_k = Some(pass_at_k(verdicts, sample_ids, row.k)?);
        }
        if let Some(single) = &mut self.single_round {
            let rounds = sample_ids
                .iter()
                .map(|id| verdicts[id].len())
                .min()
                .unwrap_or(0)
                .min(single.rounds);
            let per_round: Vec<f64> = (0..rounds)
                .map(|r| {
                    sample_ids.iter().filter(|id| verdicts[*id][r]).count() as f64
                        / sample_ids.len().max(1) as f64
                })
                .collect();
            if !per_round.is_empty() {
                single.pass_at_1 = Some(Stat::of(&per_round));
            }
        }
        Ok(())
    }

    pub fn row(&self, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.k == k)
    }
}

/// Metrics across a threshold grid, at one `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub k: usize,
    /// `(tau, SoftPass, SoftRecall)` with `tau_sp = tau_sr = tau`.
    pub match_rows: Vec<(f64, f64, f64)>,
    /// `(tau_valid, ValidRatio)`.
    pub valid_rows: Vec<(f64, f64)>,
}

/// Grids used by default: matching thresholds and relevance thresholds.
pub const MATCH_GRID: [f64; 3] = [0.7, 0.8, 0.9];
pub const VALID_GRID: [f64; 3] = [0.4, 0.5, 0.6];

pub fn threshold_sweep(
    dataset: &[SampleScores],
    k: usize,
    match_grid: &[f64],
    valid_grid: &[f64],
    base: &EvaluationConfig,
) -> Result<SweepTable> {
    let mut match_rows = Vec::with_capacity(match_grid.len());
    for &tau in match_grid {
        let cfg = EvaluationConfig {
            tau_sp: tau,
            tau_sr: tau,
            ..*base
        };
        let evals = dataset
            .iter()
            .map(|s| s.evaluate(&cfg, k))
            .collect::<Result<Vec<_>>>()?;
        let row = aggregate(&evals)?;
        match_rows.push((tau, row.soft_pass, row.soft_recall));
    }
    let mut valid_rows = Vec::with_capacity(valid_grid.len());
    for &tau in valid_grid {
        let cfg = EvaluationConfig {
            tau_valid: tau,
            ..*base
        };
        let evals = dataset
            .iter()
            .map(|s| s.evaluate(&cfg, k))
            .collect::<Result<Vec<_>>>()?;
        valid_rows.push((tau, aggregate(&evals)?.valid_ratio));
    }
    Ok(SweepTable {
        k,
        match_rows,
        valid_rows,
    })
}
