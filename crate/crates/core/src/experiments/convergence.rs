use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::{space_map, stream, ExperimentError};
use crate::agents::{run_episode, RandomAgent};
use crate::envs::{generate_task, Action, Embedding, Family, InitMode, Target};
use crate::evaluator::{Continuation, FeasibilityEvaluator, TabularConfig, TabularEvaluator, TrainableEvaluator};
use crate::oracle::{target_table, PolicySpec};
use crate::relabel::EpisodeSupport;

/// Tabular evaluator against the uniform-random oracle on one RDS task.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub width: usize,
    pub height: usize,
    pub difficulty: f64,
    pub task_seed: u64,
    pub seed: u64,
    pub t_bins: usize,
    /// Uniform-random episodes from uniform non-terminal starts.
    pub episodes: usize,
    pub max_len: usize,
    /// Shuffled passes over the episode-relabeled dataset.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// In batches.
    pub sync_period: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            difficulty: 0.2,
            task_seed: 1,
            seed: 0,
            t_bins: 16,
            episodes: 2_000_000,
            max_len: 64,
            epochs: 40,
            batch_size: 64,
            lr: 1.0,
            sync_period: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Mean L1 over the distinct (source, action, target) cells in the data.
    pub mean_l1: f64,
    pub max_l1: f64,
    pub cells: usize,
    pub transitions: usize,
    pub seconds: f64,
}

/// Trains an evaluation-form tabular evaluator on the full support of
/// episode relabeling over uniform-random data and compares every trained
/// cell with the oracle's per-action histogram.
pub fn oracle_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceReport, ExperimentError> {
    let clock = Instant::now();
    let task = generate_task(Family::Rds, cfg.width, cfg.height, cfg.difficulty, cfg.task_seed)?;
    let space = space_map(std::slice::from_ref(&task))[&task.task_id].clone();

    let mut rng = stream(cfg.seed, 0);
    let mut support = EpisodeSupport::new(0);
    let mut transitions = 0;
    for k in 0..cfg.episodes {
        let start = space.reset(InitMode::AllNonterminal, &mut rng);
        let ep = run_episode(&task, &mut RandomAgent, start, k as u64, cfg.max_len, &mut rng).transitions;
        transitions += ep.len();
        support.add_episode(&ep);
    }

    let mut ev = TabularEvaluator::new(TabularConfig {
        t_bins: cfg.t_bins,
        lr: cfg.lr,
        sync_period: cfg.sync_period,
        continuation: Continuation::uniform(),
        eps: 1e-12,
    });
    let mut data = support.samples().to_vec();
    let mut rng = stream(cfg.seed, 1);
    for _ in 0..cfg.epochs {
        data.shuffle(&mut rng);
        for batch in data.chunks(cfg.batch_size) {
            ev.train_batch(batch)?;
        }
    }

    let mut by_target: BTreeMap<Target, Vec<(Embedding, Action)>> = BTreeMap::new();
    for s in support.samples() {
        by_target
            .entry(s.target)
            .or_default()
            .push((s.transition.s.embedding(), s.transition.action));
    }
    let policy = PolicySpec::<f64>::UniformRandom;
    let (mut total, mut max, mut n) = (0.0, 0.0f64, 0usize);
    for (target, cells) in by_target {
        let table = target_table(&space, &policy, &target, cfg.t_bins);
        for (e, a) in cells {
            let i = space.index_of_embedding(&e).expect("sources are valid states");
            let l1 = ev.predict(task.task_id, &e, Some(a), &target).l1(table.action_row(i, a));
            total += l1;
            max = max.max(l1);
            n += 1;
        }
    }
    Ok(ConvergenceReport {
        mean_l1: total / n.max(1) as f64,
        max_l1: max,
        cells: n,
        transitions,
        seconds: clock.elapsed().as_secs_f64(),
    })
}
