use rayon::prelude::*;

use super::{fill_store, random_walk_episodes, space_map, stream, train_evaluator, ExperimentError};
use crate::envs::{generate_task, Family, Target};
use crate::evaluator::{TabularConfig, TabularEvaluator};
use crate::metrics::{e_error_pooled, oracle_pairs};
use crate::oracle::{Category, PolicySpec};
use crate::relabel::Mix;

/// Final E2 error of episode-only against episode+pertask relabeling.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub width: usize,
    pub height: usize,
    pub difficulty: f64,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub max_len: usize,
    pub batches: usize,
    pub batch_size: usize,
    /// Every `stride`-th state of the task serves as an evaluation target.
    pub target_stride: usize,
    /// Training batches between evaluator target syncs.
    pub sync_period: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            difficulty: 0.25,
            seeds: (0..10).collect(),
            episodes: 3_000,
            max_len: 64,
            batches: 10_000,
            batch_size: 64,
            target_stride: 3,
            sync_period: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRun {
    pub seed: u64,
    pub e2_episode: f64,
    pub e2_mixed: f64,
    pub e0_episode: f64,
    pub e0_mixed: f64,
}

/// One SSM task per seed; both evaluators see the same stored data.
pub fn relabel_ablation_seed(cfg: &AblationConfig, seed: u64) -> Result<AblationRun, ExperimentError> {
    let task = generate_task(Family::Ssm, cfg.width, cfg.height, cfg.difficulty, 1_000 + seed)?;
    let tasks = [task];
    let spaces = space_map(&tasks);
    let space = &spaces[&tasks[0].task_id];
    let mut rng = stream(seed, 0);
    let episodes = random_walk_episodes(&tasks, &spaces, cfg.episodes, cfg.max_len, &mut rng);
    let store = fill_store(&episodes)?;

    let targets: Vec<Target> = space
        .states()
        .iter()
        .step_by(cfg.target_stride.max(1))
        .map(|s| Target::singleton(s.embedding()))
        .collect();
    let pairs = oracle_pairs(space, tasks[0].task_id, &PolicySpec::<f64>::GreedyToTarget, &targets, 16);

    let mut errors = Vec::new();
    for (k, mix) in [Mix::only(crate::relabel::Strategy::Episode), Mix::episode_pertask()]
        .iter()
        .enumerate()
    {
        let mut ev = TabularEvaluator::<f64>::new(TabularConfig {
            sync_period: cfg.sync_period,
            ..TabularConfig::default()
        });
        let mut rng = stream(seed, 1 + k as u64);
        train_evaluator(&mut ev, &store, mix, None, 0, cfg.batches, cfg.batch_size, &mut rng)?;
        errors.push((
            e_error_pooled(&ev, &pairs, Category::G2).unwrap_or(f64::NAN),
            e_error_pooled(&ev, &pairs, Category::G0).unwrap_or(f64::NAN),
        ));
    }
    Ok(AblationRun {
        seed,
        e2_episode: errors[0].0,
        e2_mixed: errors[1].0,
        e0_episode: errors[0].1,
        e0_mixed: errors[1].1,
    })
}

/// All seeds in parallel, ordered by seed.
pub fn relabel_ablation(cfg: &AblationConfig) -> Result<Vec<AblationRun>, ExperimentError> {
    cfg.seeds.par_iter().map(|&s| relabel_ablation_seed(cfg, s)).collect()
}
