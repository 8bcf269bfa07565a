//! Scaled-down experiment drivers shared by the command line and the
//! acceptance suite.

mod ablation;
mod convergence;
mod dyna;
mod nonsingleton;
mod planner;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;

pub use ablation::{relabel_ablation, relabel_ablation_seed, AblationConfig, AblationRun};
pub use convergence::{oracle_convergence, ConvergenceConfig, ConvergenceReport};
pub use nonsingleton::{non_singleton, ErrorSnapshot, NonSingletonConfig, NonSingletonReport};
pub use planner::{planner_delusion, planner_delusion_seed, planner_tasks, PlannerConfig, PlannerRun};
pub use dyna::{dyna_comparison, dyna_rejection, dyna_tasks, run_dyna, CurvePoint, DynaConfig, DynaRun, RejectionConfig, RejectionReport};

use crate::agents::{run_episode, RandomAgent};
use crate::envs::{EnvError, GridTask, InitMode, StateSpace};
use crate::evaluator::{EvalError, TrainableEvaluator};
use crate::generator::{GenError, SpaceMap};
use crate::relabel::{sample_batch, Mix, RelabelError, ReplayStore, TargetGenerator, Transition};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Relabel(#[from] RelabelError),
    #[error(transparent)]
    Gen(#[from] GenError),
}

/// Independent RNG stream `k` of a run seed.
pub fn stream(seed: u64, k: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// State graphs of a task set.
pub fn space_map(tasks: &[GridTask]) -> SpaceMap {
    tasks
        .iter()
        .map(|t| (t.task_id, Arc::new(StateSpace::new(t))))
        .collect::<BTreeMap<_, _>>()
}

/// Uniform-random episodes from uniformly drawn non-terminal starts, cycling
/// through `tasks`.
pub fn random_walk_episodes(
    tasks: &[GridTask],
    spaces: &SpaceMap,
    n_episodes: usize,
    max_len: usize,
    rng: &mut dyn RngCore,
) -> Vec<Vec<Transition>> {
    (0..n_episodes)
        .map(|k| {
            let task = &tasks[k % tasks.len()];
            let start = spaces[&task.task_id].reset(InitMode::AllNonterminal, rng);
            run_episode(task, &mut RandomAgent, start, k as u64, max_len, rng).transitions
        })
        .collect()
}

pub fn fill_store(episodes: &[Vec<Transition>]) -> Result<ReplayStore, RelabelError> {
    let n: usize = episodes.iter().map(Vec::len).sum();
    let mut store = ReplayStore::new(n.max(1));
    for tr in episodes.iter().flatten() {
        store.push(*tr)?;
    }
    Ok(store)
}

/// `n_batches` relabeled training steps.
#[allow(clippy::too_many_arguments)]
pub fn train_evaluator<F: Scalar, E: TrainableEvaluator<F> + ?Sized>(
    evaluator: &mut E,
    store: &ReplayStore,
    mix: &Mix,
    generator: Option<&dyn TargetGenerator>,
    radius: u8,
    n_batches: usize,
    batch_size: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(), ExperimentError> {
    for _ in 0..n_batches {
        let batch = sample_batch(store, mix, batch_size, generator, radius, rng)?;
        evaluator.train_batch(&batch)?;
    }
    Ok(())
}
