//! Distance-distribution evaluators and the distributional backup.

mod checkpoint;
mod histogram;
mod mlp;
mod oracle_eval;
mod tabular;

use std::path::Path;

pub use checkpoint::{Backend, CheckpointError};
pub use histogram::{backup_target, DistanceHistogram, HistogramError, NORM_TOL};
pub use mlp::{FeedforwardConfig, FeedforwardEvaluator, N_FEATURES};
pub use oracle_eval::OracleEvaluator;
pub use tabular::{TabularConfig, TabularEvaluator};

use crate::envs::{Action, Embedding, Target};
use crate::relabel::RelabeledSample;
use crate::scalar::Scalar;

/// Default number of histogram bins.
pub const DEFAULT_T: usize = 16;

/// How the continuation action `a'` of a backup, and the action marginal of
/// an action-free query, are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Continuation<F> {
    /// Greedy: the action with the least expected distance.
    Control,
    /// Expectation under fixed action weights.
    Evaluation([F; 4]),
}

impl<F: Scalar> Continuation<F> {
    pub fn uniform() -> Self {
        Continuation::Evaluation([F::of(0.25); 4])
    }

    pub fn combine(&self, per_action: &[DistanceHistogram<F>; 4]) -> DistanceHistogram<F> {
        match self {
            Continuation::Control => per_action[greedy_index(per_action)].clone(),
            Continuation::Evaluation(w) => DistanceHistogram::mixture(
                w.iter().copied().zip(per_action.iter()),
                per_action[0].t_bins(),
            ),
        }
    }
}

/// Index of the least expected distance, lowest index on ties.
pub fn greedy_index<F: Scalar>(per_action: &[DistanceHistogram<F>; 4]) -> usize {
    let mut best = 0;
    let mut best_d = per_action[0].expected_distance();
    for (i, h) in per_action.iter().enumerate().skip(1) {
        let d = h.expected_distance();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("non-finite loss at training step {step} (batch of {batch}, first sample task {task_id})")]
    NonFiniteLoss { step: u64, batch: usize, task_id: u64 },
    #[error("empty training batch")]
    EmptyBatch,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Anything that predicts distance histograms toward targets.
pub trait FeasibilityEvaluator<F: Scalar> {
    fn t_bins(&self) -> usize;

    /// With `action = None`, the action marginal under the evaluator's
    /// continuation form.
    fn predict(
        &self,
        task_id: u64,
        source: &Embedding,
        action: Option<Action>,
        target: &Target,
    ) -> DistanceHistogram<F>;

    fn predict_actions(
        &self,
        task_id: u64,
        source: &Embedding,
        target: &Target,
    ) -> [DistanceHistogram<F>; 4] {
        Action::ALL.map(|a| self.predict(task_id, source, Some(a), target))
    }
}

pub trait TrainableEvaluator<F: Scalar>: FeasibilityEvaluator<F> {
    /// One update on a batch; returns the mean cross-entropy before the step.
    fn train_batch(&mut self, samples: &[RelabeledSample]) -> Result<F, EvalError>;

    fn steps(&self) -> u64;
}

/// Any evaluator backend behind one type, as selected in a run config.
#[derive(Debug, Clone)]
pub enum Evaluator<F: Scalar> {
    Tabular(TabularEvaluator<F>),
    Feedforward(FeedforwardEvaluator<F>),
}

impl<F: Scalar> Evaluator<F> {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = match self {
            Evaluator::Tabular(e) => e.to_bytes(),
            Evaluator::Feedforward(e) => e.to_bytes(),
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        match checkpoint::peek_backend(&bytes)? {
            checkpoint::Backend::Tabular => Ok(Evaluator::Tabular(TabularEvaluator::from_bytes(&bytes)?)),
            checkpoint::Backend::Feedforward => {
                Ok(Evaluator::Feedforward(FeedforwardEvaluator::from_bytes(&bytes)?))
            }
        }
    }
}

impl<F: Scalar> FeasibilityEvaluator<F> for Evaluator<F> {
    fn t_bins(&self) -> usize {
        match self {
            Evaluator::Tabular(e) => e.t_bins(),
            Evaluator::Feedforward(e) => e.t_bins(),
        }
    }

    fn predict(
        &self,
        task_id: u64,
        source: &Embedding,
        action: Option<Action>,
        target: &Target,
    ) -> DistanceHistogram<F> {
        match self {
            Evaluator::Tabular(e) => e.predict(task_id, source, action, target),
            Evaluator::Feedforward(e) => e.predict(task_id, source, action, target),
        }
    }

    fn predict_actions(
        &self,
        task_id: u64,
        source: &Embedding,
        target: &Target,
    ) -> [DistanceHistogram<F>; 4] {
        match self {
            Evaluator::Tabular(e) => e.predict_actions(task_id, source, target),
            Evaluator::Feedforward(e) => e.predict_actions(task_id, source, target),
        }
    }
}

impl<F: Scalar> TrainableEvaluator<F> for Evaluator<F> {
    fn train_batch(&mut self, samples: &[RelabeledSample]) -> Result<F, EvalError> {
        match self {
            Evaluator::Tabular(e) => e.train_batch(samples),
            Evaluator::Feedforward(e) => e.train_batch(samples),
        }
    }

    fn steps(&self) -> u64 {
        match self {
            Evaluator::Tabular(e) => e.steps(),
            Evaluator::Feedforward(e) => e.steps(),
        }
    }
}

impl<F: Scalar, E: FeasibilityEvaluator<F> + ?Sized> FeasibilityEvaluator<F> for &E {
    fn t_bins(&self) -> usize {
        (**self).t_bins()
    }

    fn predict(
        &self,
        task_id: u64,
        source: &Embedding,
        action: Option<Action>,
        target: &Target,
    ) -> DistanceHistogram<F> {
        (**self).predict(task_id, source, action, target)
    }

    fn predict_actions(
        &self,
        task_id: u64,
        source: &Embedding,
        target: &Target,
    ) -> [DistanceHistogram<F>; 4] {
        (**self).predict_actions(task_id, source, target)
    }
}

/// Cross-entropy `-sum_t b_t ln max(p_t, eps)`.
pub fn cross_entropy<F: Scalar>(target: &[F], pred: &[F], eps: F) -> F {
    target
        .iter()
        .zip(pred)
        .filter(|(b, _)| **b > F::zero())
        // `max` would swallow a NaN prediction
        .map(|(&b, &p)| if p.is_nan() { p } else { -b * p.max(eps).ln() })
        .sum()
}
