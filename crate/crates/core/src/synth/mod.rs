//! Synthetic multi-mode world: a planted universe, a categorical toy policy,
//! GRPO training and metric-based evaluation of the trained policy.

mod policy;
mod train;
mod universe;

pub use policy::{sample_rollouts, SampledGroup, ToyPolicy};
pub use train::{
    surrogate_with_gradient, train, StepLog, SurrogateEval, TrainConfig, TrainingRun, UpdateBatch,
};
pub use universe::{generate_universe, CandidateLabel, ModeUniverse, UniverseConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    metric_report, EvaluationConfig, MetricReport, SampleEvaluation, SampleScores,
};
use crate::seed::{rng_for, Stream};

/// How a policy is probed after training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvalConfig {
    /// Sampling rounds.
    pub rounds: usize,
    /// Hypotheses per round.
    pub hypotheses: usize,
    pub temperature: f64,
    pub metrics: EvaluationConfig,
}

impl Default for PolicyEvalConfig {
    fn default() -> Self {
        Self {
            rounds: 16,
            hypotheses: 10,
            temperature: 0.7,
            metrics: EvaluationConfig {
                hypotheses_per_round: Some(10),
                ..EvaluationConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub report: MetricReport,
    /// Metrics over all rounds.
    pub full: SampleEvaluation,
    /// Candidate drawn at every (round, position).
    pub draws: Vec<Vec<usize>>,
    /// Distinct planted modes among all draws.
    pub mode_coverage: usize,
    pub modes: usize,
}

impl PolicyEvaluation {
    pub fn coverage_fraction(&self) -> f64 {
        self.mode_coverage as f64 / self.modes as f64
    }

    pub fn valid_ratio(&self) -> f64 {
        self.full.valid_ratio
    }
}

/// Draws `rounds` independent rounds from `policy` at the evaluation
/// temperature and scores them against the planted anchors.
pub fn evaluate_policy(
    policy: &ToyPolicy,
    universe: &ModeUniverse,
    config: &PolicyEvalConfig,
    seed: u64,
) -> Result<PolicyEvaluation> {
    if config.rounds == 0 || config.hypotheses == 0 {
        return Err(Error::Config(
            "evaluation needs at least one round and one hypothesis".into(),
        ));
    }
    if policy.logits.len() != universe.len() {
        return Err(Error::Structure(format!(
            "policy over {} candidates does not match a vocabulary of {}",
            policy.logits.len(),
            universe.len()
        )));
    }
    let probe = policy.with_temperature(config.temperature);
    let mut rng = rng_for(seed, Stream::Evaluation);
    let draws = (0..config.rounds)
        .map(|_| probe.sample(&mut rng, config.hypotheses))
        .collect::<Result<Vec<_>>>()?;
    let rounds: Vec<Vec<_>> = draws
        .iter()
        .map(|r| r.iter().map(|&c| universe.vocabulary[c].clone()).collect())
        .collect();
    let scores = SampleScores::compute(
        format!("universe-{}", universe.seed),
        &rounds,
        &universe.ground_truth(),
    )?;
    let mut ks = vec![1];
    if config.rounds > 1 {
        ks.push(config.rounds);
    }
    let report = metric_report("toy", std::slice::from_ref(&scores), &ks, &config.metrics)?;
    let full = scores.evaluate(&config.metrics, config.rounds)?;
    Ok(PolicyEvaluation {
        report,
        full,
        mode_coverage: universe.modes_hit(draws.iter().flatten()),
        modes: universe.modes(),
        draws,
    })
}

/// A complete seeded toy experiment: universe, training and evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ToyExperiment {
    pub universe: UniverseConfig,
    pub train: TrainConfig,
    pub eval: PolicyEvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub run: TrainingRun,
    pub evaluation: PolicyEvaluation,
}

impl ToyExperiment {
    /// Runs the experiment with every random stream derived from `seed`.
    pub fn run(&self, seed: u64) -> Result<ExperimentOutcome> {
        let universe = generate_universe(seed, &self.universe)?;
        let initial = ToyPolicy::uniform(universe.len(), self.train.temperature);
        let config = TrainConfig { seed, ..self.train };
        let run = train(&universe, &initial, &config)?;
        let evaluation = evaluate_policy(&run.policy, &universe, &self.eval, seed)?;
        Ok(ExperimentOutcome {
            seed,
            run,
            evaluation,
        })
    }
}
