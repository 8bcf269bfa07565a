use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{fill_store, random_walk_episodes, space_map, stream, train_evaluator, ExperimentError};
use crate::agents::{goal_target, run_episode, PlanConfig, SkipperAgent};
use crate::envs::{generate_task, Family, GridTask, InitMode};
use crate::evaluator::{
    Backend, Evaluator, FeasibilityEvaluator, FeedforwardConfig, FeedforwardEvaluator, OracleEvaluator,
    TabularConfig, TabularEvaluator,
};
use crate::generator::{CandidateGenerator, ConditionalTargetSampler, HallucinationInjector, SpaceMap};
use crate::metrics::delusion_frequency;
use crate::oracle::PolicySpec;
use crate::relabel::{Mix, Strategy};

/// Delusion of the graph planner with and without evaluator rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub n_tasks: usize,
    pub width: usize,
    pub height: usize,
    pub difficulty: f64,
    pub task_seed: u64,
    pub seeds: Vec<u64>,
    /// Backend shared by the baseline and "+" evaluators.
    pub backend: Backend,
    /// Hidden widths of the feedforward backend.
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub sync_period: u64,
    pub episodes: usize,
    pub max_len: usize,
    pub train_batches: usize,
    pub batch_size: usize,
    pub p_g1: f64,
    pub p_g2: f64,
    pub k: Option<usize>,
    pub n_candidates: usize,
    pub gamma: f64,
    pub tau: usize,
    pub theta: f64,
    pub plan_episodes: usize,
    pub plan_max_len: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n_tasks: 1,
            width: 6,
            height: 6,
            difficulty: 0.2,
            task_seed: 200,
            seeds: (0..10).collect(),
            backend: Backend::Feedforward,
            hidden: vec![64, 64],
            lr: 1e-3,
            sync_period: 200,
            episodes: 3_000,
            max_len: 64,
            train_batches: 12_000,
            batch_size: 128,
            p_g1: 0.2,
            p_g2: 0.2,
            k: Some(4),
            n_candidates: 5,
            gamma: 0.95,
            tau: 8,
            theta: 0.05,
            plan_episodes: 30,
            plan_max_len: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerRun {
    pub seed: u64,
    /// Episode-only evaluator, no rejection.
    pub baseline: f64,
    /// FEPG evaluator with rejection.
    pub plus: f64,
    /// Exact evaluator with rejection.
    pub oracle: f64,
    pub decisions: [usize; 3],
    pub success: [f64; 3],
}

fn fresh_evaluator(cfg: &PlannerConfig, seed: u64) -> Evaluator<f64> {
    match cfg.backend {
        Backend::Tabular => Evaluator::Tabular(TabularEvaluator::new(TabularConfig {
            sync_period: cfg.sync_period,
            ..TabularConfig::default()
        })),
        Backend::Feedforward => Evaluator::Feedforward(FeedforwardEvaluator::new(FeedforwardConfig {
            hidden: cfg.hidden.clone(),
            lr: cfg.lr,
            sync_period: cfg.sync_period,
            ..FeedforwardConfig::new(cfg.width, cfg.height, seed)
        })),
    }
}

pub fn planner_tasks(cfg: &PlannerConfig) -> Result<Vec<GridTask>, ExperimentError> {
    (0..cfg.n_tasks as u64)
        .map(|k| Ok(generate_task(Family::Ssm, cfg.width, cfg.height, cfg.difficulty, cfg.task_seed + k)?))
        .collect()
}

fn plan_with<E: FeasibilityEvaluator<f64>>(
    cfg: &PlannerConfig,
    tasks: &[GridTask],
    spaces: &SpaceMap,
    generator: &CandidateGenerator,
    evaluator: E,
    reject: bool,
    seed: u64,
) -> (f64, usize, f64) {
    let goals = spaces.iter().map(|(id, sp)| (*id, goal_target(sp))).collect::<BTreeMap<_, _>>();
    let plan = PlanConfig {
        gamma: cfg.gamma,
        tau: cfg.tau,
        reject,
        theta: cfg.theta,
    };
    let mut agent = SkipperAgent::new(evaluator, generator.clone(), goals, plan, cfg.n_candidates);
    let mut rng = stream(seed, 3);
    let mut wins = 0;
    for k in 0..cfg.plan_episodes {
        let task = &tasks[k % tasks.len()];
        let start = spaces[&task.task_id].reset(InitMode::AllNonterminal, &mut rng);
        wins += run_episode(task, &mut agent, start, k as u64, cfg.plan_max_len, &mut rng).success as usize;
    }
    (
        delusion_frequency(&agent.log, spaces),
        agent.log.len(),
        wins as f64 / cfg.plan_episodes.max(1) as f64,
    )
}

/// One seed: shared random-walk data, an episode-only evaluator for the
/// baseline, a FEPG evaluator (generate = the candidate generator) for the
/// "+" planner, and the exact evaluator as a reference.
pub fn planner_delusion_seed(cfg: &PlannerConfig, tasks: &[GridTask], seed: u64) -> Result<PlannerRun, ExperimentError> {
    let spaces = space_map(tasks);
    let mut rng = stream(seed, 0);
    let episodes = random_walk_episodes(tasks, &spaces, cfg.episodes, cfg.max_len, &mut rng);
    let store = fill_store(&episodes)?;
    let mut sampler = ConditionalTargetSampler::new(1.0);
    for ep in 0..store.n_episodes() {
        let tr = &store.episode_transitions(ep)[0];
        sampler.fit_episode(tr.task_id, store.episode_states(ep));
    }
    let injector = HallucinationInjector::new(cfg.p_g1, cfg.p_g2)?.with_k(cfg.k);
    let generator = CandidateGenerator::new(sampler, injector, spaces.clone(), 0);

    let mut naive = fresh_evaluator(cfg, seed);
    let mut rng = stream(seed, 1);
    train_evaluator(&mut naive, &store, &Mix::only(Strategy::Episode), None, 0, cfg.train_batches, cfg.batch_size, &mut rng)?;
    let mut fepg = fresh_evaluator(cfg, seed);
    let mut rng = stream(seed, 2);
    train_evaluator(&mut fepg, &store, &Mix::fepg(), Some(&generator), 0, cfg.train_batches, cfg.batch_size, &mut rng)?;
    let mut exact = OracleEvaluator::new(PolicySpec::GreedyToTarget, 16);
    for (id, sp) in &spaces {
        exact.add_task(*id, sp.clone());
    }

    let b = plan_with(cfg, tasks, &spaces, &generator, naive, false, seed);
    let p = plan_with(cfg, tasks, &spaces, &generator, fepg, true, seed);
    let o = plan_with(cfg, tasks, &spaces, &generator, exact, true, seed);
    Ok(PlannerRun {
        seed,
        baseline: b.0,
        plus: p.0,
        oracle: o.0,
        decisions: [b.1, p.1, o.1],
        success: [b.2, p.2, o.2],
    })
}

pub fn planner_delusion(cfg: &PlannerConfig) -> Result<Vec<PlannerRun>, ExperimentError> {
    let tasks = planner_tasks(cfg)?;
    cfg.seeds
        .par_iter()
        .map(|&s| planner_delusion_seed(cfg, &tasks, s))
        .collect()
}
