use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::{fill_store, random_walk_episodes, space_map, stream, train_evaluator, ExperimentError};
use crate::agents::{dyna_step, epsilon_greedy, DynaStats, EpsilonSchedule, Gate, QTable, SimRecord};
use crate::envs::{generate_task, step, Family, GridTask, InitMode};
use crate::evaluator::{TabularConfig, TabularEvaluator, TrainableEvaluator};
use crate::generator::{HallucinationInjector, OneStepModel, SpaceMap};
use crate::metrics::{q_error, RejectionTally};
use crate::oracle::optimal_q;
use crate::relabel::{sample_batch, Mix, ReplayStore, Transition};

/// The preserved SSM training tasks of the Dyna experiments.
pub fn dyna_tasks(n: usize, width: usize, height: usize, difficulty: f64, first_seed: u64) -> Result<Vec<GridTask>, ExperimentError> {
    (0..n as u64)
        .map(|k| Ok(generate_task(Family::Ssm, width, height, difficulty, first_seed + k)?))
        .collect()
}

/// Gate accuracy of a pre-trained evaluator on model-simulated successors.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionConfig {
    pub n_tasks: usize,
    pub width: usize,
    pub height: usize,
    pub difficulty: f64,
    pub p_g1: f64,
    pub p_g2: f64,
    /// Injector draws among this many candidates nearest the true successor.
    pub k: Option<usize>,
    pub threshold: f64,
    pub episodes: usize,
    pub max_len: usize,
    pub train_batches: usize,
    pub batch_size: usize,
    pub simulated: usize,
    pub seed: u64,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        Self {
            n_tasks: 4,
            width: 8,
            height: 8,
            difficulty: 0.25,
            p_g1: 0.03,
            p_g2: 0.05,
            k: Some(4),
            threshold: 0.05,
            episodes: 4_000,
            max_len: 64,
            train_batches: 40_000,
            batch_size: 128,
            simulated: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionReport {
    pub tally: RejectionTally,
    pub terminal: usize,
    pub abstained: usize,
}

/// Trains an evaluator on FEPG-relabeled random-walk data with the
/// corrupted one-step model as generator, then gates `simulated` model
/// draws and tallies decisions by certified category.
pub fn dyna_rejection(cfg: &RejectionConfig) -> Result<RejectionReport, ExperimentError> {
    let tasks = dyna_tasks(cfg.n_tasks, cfg.width, cfg.height, cfg.difficulty, 100)?;
    let spaces = space_map(&tasks);
    let mut rng = stream(cfg.seed, 0);
    let episodes = random_walk_episodes(&tasks, &spaces, cfg.episodes, cfg.max_len, &mut rng);
    let store = fill_store(&episodes)?;
    let injector = HallucinationInjector::new(cfg.p_g1, cfg.p_g2)?.with_k(cfg.k);
    let mut model = OneStepModel::new(spaces.clone(), injector);
    model.fit(store.iter());

    let mut ev = TabularEvaluator::new(TabularConfig::default());
    let mut rng = stream(cfg.seed, 1);
    train_evaluator(&mut ev, &store, &Mix::fepg(), Some(&model), 0, cfg.train_batches, cfg.batch_size, &mut rng)?;

    let gate = Gate {
        evaluator: &ev,
        threshold: cfg.threshold,
    };
    let mut q = QTable::new(cfg.width, cfg.height, 0.0, 0.99, 0.0);
    let mut trace: Vec<SimRecord> = Vec::with_capacity(cfg.simulated);
    let real = *store.transition(store.sample_ref(&mut rng));
    let stats = dyna_step(&mut q, &real, Some(gate), &store, &model, cfg.simulated, &mut rng, Some(&mut trace));
    Ok(RejectionReport {
        tally: RejectionTally::from_trace(&trace),
        terminal: trace.iter().filter(|r| r.terminal).count(),
        abstained: stats.abstained,
    })
}

/// Online Dyna and Dyna+ on a fixed task set.
#[derive(Debug, Clone, PartialEq)]
pub struct DynaConfig {
    pub n_tasks: usize,
    pub width: usize,
    pub height: usize,
    pub difficulty: f64,
    pub task_seed: u64,
    pub interactions: u64,
    pub max_len: usize,
    pub n_sim: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub eps_steps: u64,
    pub p_g1: f64,
    pub p_g2: f64,
    pub k: Option<usize>,
    pub threshold: f64,
    /// Evaluator batches per interaction (Dyna+ only).
    pub eval_batches: usize,
    pub batch_size: usize,
    /// Fraction of the last episodes averaged into the final return.
    pub tail: f64,
    /// Interactions between logged curve points.
    pub log_every: u64,
}

impl Default for DynaConfig {
    fn default() -> Self {
        Self {
            n_tasks: 10,
            width: 8,
            height: 8,
            difficulty: 0.25,
            task_seed: 100,
            interactions: 60_000,
            max_len: 100,
            n_sim: 10,
            alpha: 0.5,
            gamma: 0.95,
            eps_steps: 30_000,
            p_g1: 0.03,
            p_g2: 0.05,
            k: Some(4),
            threshold: 0.05,
            eval_batches: 1,
            batch_size: 32,
            tail: 0.2,
            log_every: 5_000,
        }
    }
}

/// One point of a Dyna learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub q_error: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynaRun {
    pub seed: u64,
    pub plus: bool,
    pub final_q_error: f64,
    pub final_return: f64,
    pub stats: DynaStats,
    pub tally: RejectionTally,
    pub curve: Vec<CurvePoint>,
}

struct TaskState {
    task: GridTask,
    q: QTable<f64>,
    store: ReplayStore,
    q_star: Vec<[f64; 4]>,
}

fn mean_q_error(states: &[TaskState], spaces: &SpaceMap) -> f64 {
    states
        .iter()
        .map(|t| q_error(&t.q, &spaces[&t.task.task_id], &t.q_star))
        .sum::<f64>()
        / states.len() as f64
}

/// One seed of Dyna (`plus = false`) or evaluator-gated Dyna+.
///
/// Acting, simulated updates and evaluator training draw from separate RNG
/// streams, so the two variants see the same task and start sequence until
/// their Q-tables diverge.
pub fn run_dyna(cfg: &DynaConfig, tasks: &[GridTask], seed: u64, plus: bool) -> Result<DynaRun, ExperimentError> {
    let spaces = space_map(tasks);
    let mut states: Vec<TaskState> = tasks
        .iter()
        .map(|t| TaskState {
            task: t.clone(),
            q: QTable::new(t.width, t.height, cfg.alpha, cfg.gamma, 0.0),
            store: ReplayStore::new(cfg.interactions as usize),
            q_star: optimal_q(&spaces[&t.task_id], cfg.gamma),
        })
        .collect();
    let mut all = ReplayStore::new(cfg.interactions as usize);
    let injector = HallucinationInjector::new(cfg.p_g1, cfg.p_g2)?.with_k(cfg.k);
    let mut model = OneStepModel::new(spaces.clone(), injector);
    let mut ev = TabularEvaluator::<f64>::new(TabularConfig::default());
    let schedule = EpsilonSchedule::new(cfg.eps_steps);
    let mix = Mix::fepg();

    let mut act_rng = stream(seed, 0);
    let mut sim_rng = stream(seed, 1);
    let mut eval_rng = stream(seed, 2);
    let mut returns: Vec<f64> = Vec::new();
    let mut curve = Vec::new();
    let mut stats = DynaStats::default();
    let mut trace = Vec::new();
    let mut steps = 0u64;
    let mut episode = 0u64;
    while steps < cfg.interactions {
        let k = act_rng.random_range(0..states.len());
        let space = Arc::clone(&spaces[&states[k].task.task_id]);
        let mut s = space.reset(InitMode::AllNonterminal, &mut act_rng);
        let mut ret = 0.0;
        for t in 0..cfg.max_len {
            if s.terminal || steps >= cfg.interactions {
                break;
            }
            let ts = &mut states[k];
            let action = epsilon_greedy(&ts.q, &s, schedule.value(steps), &mut act_rng);
            let (next, reward, _) = step(&ts.task, &s, action)?;
            let tr = Transition {
                task_id: ts.task.task_id,
                episode_id: episode,
                t: t as u32,
                s,
                action,
                reward,
                next,
            };
            ts.store.push(tr)?;
            all.push(tr)?;
            model.observe(&tr);
            let gate = plus.then_some(Gate {
                evaluator: &ev as &dyn crate::evaluator::FeasibilityEvaluator<f64>,
                threshold: cfg.threshold,
            });
            stats += dyna_step(&mut ts.q, &tr, gate, &ts.store, &model, cfg.n_sim, &mut sim_rng, Some(&mut trace));
            if plus {
                for _ in 0..cfg.eval_batches {
                    let batch = sample_batch(&all, &mix, cfg.batch_size, Some(&model), 0, &mut eval_rng)?;
                    ev.train_batch(&batch)?;
                }
            }
            ret += reward;
            s = next;
            steps += 1;
            if steps.is_multiple_of(cfg.log_every) {
                let recent = &returns[returns.len().saturating_sub(100)..];
                curve.push(CurvePoint {
                    step: steps,
                    q_error: mean_q_error(&states, &spaces),
                    mean_return: recent.iter().sum::<f64>() / recent.len().max(1) as f64,
                });
            }
        }
        returns.push(ret);
        episode += 1;
    }
    let n_tail = ((returns.len() as f64 * cfg.tail).ceil() as usize).clamp(1, returns.len().max(1));
    let tail = &returns[returns.len().saturating_sub(n_tail)..];
    Ok(DynaRun {
        seed,
        plus,
        final_q_error: mean_q_error(&states, &spaces),
        final_return: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        stats,
        tally: RejectionTally::from_trace(&trace),
        curve,
    })
}

/// Paired (Dyna, Dyna+) runs for every seed, in parallel, ordered by seed.
pub fn dyna_comparison(cfg: &DynaConfig, seeds: &[u64]) -> Result<Vec<(DynaRun, DynaRun)>, ExperimentError> {
    let tasks = dyna_tasks(cfg.n_tasks, cfg.width, cfg.height, cfg.difficulty, cfg.task_seed)?;
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|&s| [(s, false), (s, true)]).collect();
    let runs: Vec<DynaRun> = jobs
        .par_iter()
        .map(|&(s, plus)| run_dyna(cfg, &tasks, s, plus))
        .collect::<Result<_, _>>()?;
    Ok(runs.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_threshold_plus_matches_plain_dyna() {
        let cfg = DynaConfig {
            n_tasks: 2,
            width: 5,
            height: 5,
            interactions: 1_500,
            threshold: 0.0,
            log_every: 500,
            ..DynaConfig::default()
        };
        let tasks = dyna_tasks(cfg.n_tasks, cfg.width, cfg.height, cfg.difficulty, cfg.task_seed).unwrap();
        let a = run_dyna(&cfg, &tasks, 3, false).unwrap();
        let b = run_dyna(&cfg, &tasks, 3, true).unwrap();
        assert_eq!(a.final_q_error.to_bits(), b.final_q_error.to_bits());
        assert_eq!(b.stats.rejected, 0);
        assert_eq!(a.curve, b.curve);
    }
}
