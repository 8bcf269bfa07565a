//! The configured training loop: acting, relabeled evaluator training, Dyna
//! updates and periodic metric snapshots, plus out-of-distribution evaluation
//! of a trained evaluator.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::agents::{dyna_step, epsilon_greedy, goal_target, DynaStats, EpsilonSchedule, Gate, PlanConfig, QTable, SkipperAgent};
use crate::config::{AgentKind, BackendName, ConfigError, RunConfig};
use crate::envs::{generate_task, step, GridTask, InitMode, StateSpace, Target};
use crate::evaluator::{
    EvalError, Evaluator, FeasibilityEvaluator, FeedforwardConfig, FeedforwardEvaluator, TabularConfig,
    TabularEvaluator, TrainableEvaluator,
};
use crate::experiments::{fill_store, random_walk_episodes, space_map, stream};
use crate::generator::{CandidateGenerator, ConditionalTargetSampler, GenError, HallucinationInjector, OneStepModel, SpaceMap};
use crate::metrics::{delusion_frequency, e_error, ood_protocol, ood_tasks, oracle_pairs, q_error, ErrorPair, MetricsRow, RejectionTally};
use crate::oracle::{optimal_q, Category, PolicySpec};
use crate::relabel::{sample_batch, RelabelError, ReplayStore, Transition};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Relabel(#[from] RelabelError),
    #[error(transparent)]
    Gen(#[from] GenError),
}

/// The `n_train_tasks` preserved training tasks, seeded consecutively from
/// `task_seed`.
pub fn training_tasks(cfg: &RunConfig) -> Result<Vec<GridTask>, TrainError> {
    let family = cfg.family()?;
    (0..cfg.n_train_tasks as u64)
        .map(|k| Ok(generate_task(family, cfg.width, cfg.height, cfg.difficulty, cfg.task_seed + k)?))
        .collect()
}

/// A fresh evaluator of the configured backend.
pub fn build_evaluator(cfg: &RunConfig, seed: u64) -> Evaluator<f64> {
    let e = &cfg.evaluator;
    match e.backend {
        BackendName::Tabular => {
            let base = TabularConfig::default();
            Evaluator::Tabular(TabularEvaluator::new(TabularConfig {
                t_bins: e.t_bins,
                lr: e.lr.unwrap_or(base.lr),
                sync_period: e.sync_period,
                ..base
            }))
        }
        BackendName::Feedforward => {
            let base = FeedforwardConfig::new(cfg.width, cfg.height, seed);
            Evaluator::Feedforward(FeedforwardEvaluator::new(FeedforwardConfig {
                t_bins: e.t_bins,
                hidden: e.hidden.clone(),
                lr: e.lr.unwrap_or(base.lr),
                sync_period: e.sync_period,
                ..base
            }))
        }
    }
}

/// Result of one seed. When `error` is set, `rows` holds the snapshots taken
/// before the failure.
#[derive(Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub evaluator: Evaluator<f64>,
    pub error: Option<TrainError>,
}

struct TaskState {
    task: GridTask,
    q: QTable<f64>,
    store: ReplayStore,
    q_star: Vec<[f64; 4]>,
}

/// Singleton targets spread over the first task's states plus a handful of
/// certified-G1 embeddings, with oracle ground truth.
fn probe_pairs(task: &GridTask, space: &StateSpace, t_bins: usize) -> Vec<ErrorPair<f64>> {
    let stride = (space.len() / 24).max(1);
    let mut targets: Vec<Target> = space
        .states()
        .iter()
        .step_by(stride)
        .map(|s| Target::singleton(s.embedding()))
        .collect();
    let base = Target::singleton(space.state(0).embedding());
    let g1 = HallucinationInjector::g1_candidates_all(space, &base);
    targets.extend(g1.iter().step_by((g1.len() / 8).max(1)).copied());
    oracle_pairs(space, task.task_id, &PolicySpec::GreedyToTarget, &targets, t_bins)
}

struct Snapshot<'a> {
    run_id: &'a str,
    seed: u64,
    step: u64,
    rows: &'a mut Vec<MetricsRow>,
}

impl Snapshot<'_> {
    fn push(&mut self, metric: &str, key: &str, value: f64) {
        self.rows.push(MetricsRow::new(self.run_id, self.seed, self.step, metric, key, value));
    }
}

/// Trains one seed end to end.
///
/// Setup failures are returned as `Err`; a failure inside the loop (such as a
/// non-finite loss) ends the run early and is reported in the outcome along
/// with the rows gathered so far.
pub fn train_seed(cfg: &RunConfig, tasks: &[GridTask], seed: u64) -> Result<SeedOutcome, TrainError> {
    cfg.validate()?;
    let spaces = space_map(tasks);
    let mut states: Vec<TaskState> = tasks
        .iter()
        .map(|t| TaskState {
            task: t.clone(),
            q: QTable::new(t.width, t.height, cfg.dyna.alpha, cfg.gamma, 0.0),
            store: ReplayStore::new(cfg.interactions.max(1) as usize),
            q_star: optimal_q(&spaces[&t.task_id], cfg.gamma),
        })
        .collect();
    let mut all = ReplayStore::new(cfg.interactions.max(1) as usize);
    let injector = HallucinationInjector::new(cfg.dyna.p_g1, cfg.dyna.p_g2)?.with_k(cfg.injector_k());
    let mut model = OneStepModel::new(spaces.clone(), injector);
    let mix = cfg.mix()?;
    let mut ev = build_evaluator(cfg, seed);
    let pairs = probe_pairs(&tasks[0], &spaces[&tasks[0].task_id], cfg.evaluator.t_bins);
    let schedule = EpsilonSchedule::new(cfg.dyna.eps_steps);
    let plus = cfg.agent == AgentKind::DynaPlus;

    let mut act_rng = stream(seed, 0);
    let mut sim_rng = stream(seed, 1);
    let mut eval_rng = stream(seed, 2);
    let mut rows = Vec::new();
    let mut returns: Vec<f64> = Vec::new();
    let mut stats = DynaStats::default();
    let mut tally = RejectionTally::default();
    let mut trace = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut steps = 0u64;
    let mut episode = 0u64;

    let error = 'run: {
        while steps < cfg.interactions {
            let k = act_rng.random_range(0..states.len());
            let space = Arc::clone(&spaces[&states[k].task.task_id]);
            let mut s = space.reset(InitMode::AllNonterminal, &mut act_rng);
            let mut ret = 0.0;
            for t in 0..cfg.max_episode_len {
                if s.terminal || steps >= cfg.interactions {
                    break;
                }
                let ts = &mut states[k];
                let action = epsilon_greedy(&ts.q, &s, schedule.value(steps), &mut act_rng);
                let (next, reward, _) = match step(&ts.task, &s, action) {
                    Ok(v) => v,
                    Err(e) => break 'run Some(e.into()),
                };
                let tr = Transition {
                    task_id: ts.task.task_id,
                    episode_id: episode,
                    t: t as u32,
                    s,
                    action,
                    reward,
                    next,
                };
                if let Err(e) = ts.store.push(tr).and_then(|_| all.push(tr)) {
                    break 'run Some(e.into());
                }
                model.observe(&tr);
                let gate = plus.then_some(Gate {
                    evaluator: &ev as &dyn FeasibilityEvaluator<f64>,
                    threshold: cfg.dyna.threshold,
                });
                stats += dyna_step(&mut ts.q, &tr, gate, &ts.store, &model, cfg.dyna.n_sim, &mut sim_rng, Some(&mut trace));
                let t_now = RejectionTally::from_trace(&trace);
                tally.infeasible += t_now.infeasible;
                tally.infeasible_rejected += t_now.infeasible_rejected;
                tally.feasible += t_now.feasible;
                tally.feasible_rejected += t_now.feasible_rejected;
                trace.clear();
                for _ in 0..cfg.evaluator.batches_per_step {
                    let loss = sample_batch(&all, &mix, cfg.evaluator.batch_size, Some(&model), 0, &mut eval_rng)
                        .map_err(TrainError::from)
                        .and_then(|b| Ok(ev.train_batch(&b)?));
                    match loss {
                        Ok(l) => {
                            loss_sum += l;
                            loss_n += 1;
                        }
                        Err(e) => break 'run Some(e),
                    }
                }
                ret += reward;
                s = next;
                steps += 1;
                if steps.is_multiple_of(cfg.snapshot_every) || steps == cfg.interactions {
                    let mut snap = Snapshot {
                        run_id: &cfg.run_id,
                        seed,
                        step: steps,
                        rows: &mut rows,
                    };
                    let qe = states
                        .iter()
                        .map(|t| q_error(&t.q, &spaces[&t.task.task_id], &t.q_star))
                        .sum::<f64>()
                        / states.len() as f64;
                    snap.push("q_error", "all", qe);
                    let recent = &returns[returns.len().saturating_sub(100)..];
                    if !recent.is_empty() {
                        snap.push("return", "recent100", recent.iter().sum::<f64>() / recent.len() as f64);
                    }
                    if loss_n > 0 {
                        snap.push("evaluator_loss", "mean", loss_sum / loss_n as f64);
                    }
                    (loss_sum, loss_n) = (0.0, 0);
                    for (cat, name) in [(Category::G0, "e0"), (Category::G1, "e1"), (Category::G2, "e2")] {
                        for (key, v) in e_error(&ev, &pairs, cat) {
                            if let Some(v) = v {
                                snap.push(name, &key, v);
                            }
                        }
                    }
                    snap.push("dyna_applied", "all", stats.applied as f64);
                    snap.push("dyna_rejected", "all", stats.rejected as f64);
                    snap.push("dyna_abstained", "all", stats.abstained as f64);
                    if let Some(r) = tally.true_reject_rate() {
                        snap.push("reject_rate", "infeasible", r);
                    }
                    if let Some(r) = tally.false_reject_rate() {
                        snap.push("reject_rate", "feasible", r);
                    }
                }
            }
            returns.push(ret);
            episode += 1;
        }
        None
    };
    if let Some(e) = &error {
        log::error!("seed {seed} stopped at interaction {steps}: {e}");
    }
    Ok(SeedOutcome {
        seed,
        rows,
        evaluator: ev,
        error,
    })
}

/// Every configured seed, in parallel, ordered by seed.
pub fn train_all(cfg: &RunConfig, tasks: &[GridTask]) -> Vec<Result<SeedOutcome, TrainError>> {
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    seeds.par_iter().map(|&s| train_seed(cfg, tasks, s)).collect()
}

/// Success of a planner driven by `evaluator` on fresh tasks of the configured
/// family, per difficulty and pooled, plus its delusion frequency.
///
/// The candidate sampler of each evaluation task is fitted on
/// `eval.warmup_episodes` random walks in that task.
pub fn ood_eval<E: FeasibilityEvaluator<f64>>(cfg: &RunConfig, evaluator: E, seed: u64) -> Result<Vec<MetricsRow>, TrainError> {
    cfg.validate()?;
    let family = cfg.family()?;
    let tasks = ood_tasks(family, cfg.width, cfg.height, &cfg.eval.difficulties, cfg.eval.tasks_per_difficulty, seed)?;
    if tasks.is_empty() {
        return Ok(Vec::new());
    }
    let spaces: SpaceMap = space_map(&tasks);
    let mut rng = stream(seed, 4);
    let episodes = random_walk_episodes(
        &tasks,
        &spaces,
        cfg.eval.warmup_episodes * tasks.len(),
        cfg.max_episode_len,
        &mut rng,
    );
    let store = fill_store(&episodes)?;
    let mut sampler = ConditionalTargetSampler::new(1.0);
    for ep in 0..store.n_episodes() {
        let tr = &store.episode_transitions(ep)[0];
        sampler.fit_episode(tr.task_id, store.episode_states(ep));
    }
    let injector = HallucinationInjector::new(cfg.planner.p_g1, cfg.planner.p_g2)?.with_k(cfg.injector_k());
    let generator = CandidateGenerator::new(sampler, injector, spaces.clone(), 0);
    let goals: BTreeMap<u64, Target> = spaces.iter().map(|(id, sp)| (*id, goal_target(sp))).collect();
    let plan = PlanConfig {
        gamma: cfg.gamma,
        tau: cfg.planner.tau,
        reject: cfg.planner.reject,
        theta: cfg.planner.theta,
    };
    let mut agent = SkipperAgent::new(evaluator, generator, goals, plan, cfg.planner.n_candidates);
    let result = ood_protocol(&mut agent, &tasks, cfg.eval.max_steps, seed);
    let mut rows = Vec::new();
    let step = result.episodes as u64;
    for (d, s) in &result.per_difficulty {
        rows.push(MetricsRow::new(&cfg.run_id, seed, step, "ood_success", &format!("{d:.2}"), *s));
    }
    rows.push(MetricsRow::new(&cfg.run_id, seed, step, "ood_success", "pooled", result.pooled));
    rows.push(MetricsRow::new(&cfg.run_id, seed, step, "delusion", "pooled", delusion_frequency(&agent.log, &spaces)));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::to_csv;

    fn small() -> RunConfig {
        RunConfig {
            width: 5,
            height: 5,
            n_train_tasks: 2,
            interactions: 600,
            snapshot_every: 200,
            seeds: vec![1],
            ..RunConfig::default()
        }
    }

    #[test]
    fn snapshots_at_cadence() {
        let cfg = small();
        let tasks = training_tasks(&cfg).unwrap();
        let out = train_seed(&cfg, &tasks, 1).unwrap();
        assert!(out.error.is_none());
        let steps: std::collections::BTreeSet<u64> = out.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps.into_iter().collect::<Vec<_>>(), vec![200, 400, 600]);
        for metric in ["q_error", "e1", "dyna_applied"] {
            assert!(out.rows.iter().any(|r| r.metric == metric), "{metric}");
        }
        to_csv(&out.rows).unwrap();
    }

    #[test]
    fn same_seed_same_rows() {
        let cfg = small();
        let tasks = training_tasks(&cfg).unwrap();
        let a = train_seed(&cfg, &tasks, 1).unwrap();
        let b = train_seed(&cfg, &tasks, 1).unwrap();
        assert_eq!(to_csv(&a.rows).unwrap(), to_csv(&b.rows).unwrap());
    }

    #[test]
    fn ood_rows_cover_difficulties() {
        let mut cfg = small();
        cfg.eval.tasks_per_difficulty = 1;
        cfg.eval.warmup_episodes = 5;
        cfg.eval.max_steps = 20;
        let ev = build_evaluator(&cfg, 0);
        let rows = ood_eval(&cfg, ev, 0).unwrap();
        let keys: Vec<&str> = rows.iter().filter(|r| r.metric == "ood_success").map(|r| r.key.as_str()).collect();
        assert_eq!(keys, vec!["0.25", "0.35", "0.45", "0.55", "pooled"]);
    }
}
