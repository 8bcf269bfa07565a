//! Evaluation quantities measured against the oracle, and their CSV form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{run_episode, Agent, PlanRecord, QTable, SimRecord};
use crate::envs::{generate_task, EnvError, Family, GridTask, InitMode, StateSpace, Target};
use crate::evaluator::{DistanceHistogram, FeasibilityEvaluator};
use crate::generator::SpaceMap;
use crate::oracle::{categorize_with, target_table, Category, PolicySpec};
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "run_id,seed,step,metric,key,value";

/// One metric value.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub step: u64,
    pub metric: String,
    pub key: String,
    pub value: f64,
}

impl MetricsRow {
    pub fn new(run_id: &str, seed: u64, step: u64, metric: &str, key: &str, value: f64) -> Self {
        Self {
            run_id: run_id.to_string(),
            seed,
            step,
            metric: metric.to_string(),
            key: key.to_string(),
            value,
        }
    }

    fn sort_key(&self) -> (&str, u64, u64, &str, &str) {
        (&self.run_id, self.seed, self.step, &self.metric, &self.key)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("duplicate metric row {0}")]
    Duplicate(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Sorted CSV with nine significant digits per value.
pub fn to_csv(rows: &[MetricsRow]) -> Result<String, MetricsError> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    for w in sorted.windows(2) {
        if w[0].sort_key() == w[1].sort_key() {
            return Err(MetricsError::Duplicate(format!("{:?}", w[0].sort_key())));
        }
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted {
        writeln!(out, "{},{},{},{},{},{:.8e}", r.run_id, r.seed, r.step, r.metric, r.key, r.value)
            .expect("writing to a String");
    }
    Ok(out)
}

pub fn from_csv(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(MetricsError::Parse {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let err = |msg: String| MetricsError::Parse { line: i + 1, msg };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            Ok(MetricsRow {
                run_id: f[0].to_string(),
                seed: f[1].parse().map_err(|e| err(format!("seed: {e}")))?,
                step: f[2].parse().map_err(|e| err(format!("step: {e}")))?,
                metric: f[3].to_string(),
                key: f[4].to_string(),
                value: f[5].parse().map_err(|e| err(format!("value: {e}")))?,
            })
        })
        .collect()
}

/// Distance buckets of the E0 error, inclusive, for `T = 16`.
pub const E0_BUCKETS: [(u32, u32); 4] = [(1, 2), (3, 4), (5, 8), (9, 15)];

pub fn bucket_key(lo: u32, hi: u32) -> String {
    format!("{lo}-{hi}")
}

/// A (source, target) pair with its oracle ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPair<F> {
    pub task_id: u64,
    pub source: crate::envs::Embedding,
    pub target: Target,
    pub truth: DistanceHistogram<F>,
    pub category: Category,
    /// Shortest first-hit distance; `None` when unreachable.
    pub shortest: Option<u32>,
}

/// Ground truth for every non-terminal source of `space` toward each target.
pub fn oracle_pairs<F: Scalar>(
    space: &StateSpace,
    task_id: u64,
    policy: &PolicySpec<F>,
    targets: &[Target],
    t_bins: usize,
) -> Vec<ErrorPair<F>> {
    let mut out = Vec::new();
    for target in targets {
        let table = target_table(space, policy, target, t_bins);
        let mask = space.hit_mask(target);
        let first = space.first_hit(&mask);
        for src in space.nonterminal() {
            let reach = space.reachable_from(src);
            out.push(ErrorPair {
                task_id,
                source: space.state(src).embedding(),
                target: *target,
                truth: table.row(src).clone(),
                category: categorize_with(&mask, &reach),
                shortest: first[src],
            });
        }
    }
    out
}

/// Mean `|E^[D] - E[D]|` with both sides clipped at `T`.
///
/// G0 pairs are split into [`E0_BUCKETS`] by shortest first-hit distance
/// (pairs beyond the last bucket are skipped); G1 and G2 pairs form one
/// bucket keyed `all`. Empty buckets come back as `None`.
pub fn e_error<F: Scalar, E: FeasibilityEvaluator<F> + ?Sized>(
    evaluator: &E,
    pairs: &[ErrorPair<F>],
    category: Category,
) -> Vec<(String, Option<F>)> {
    let keys: Vec<(String, u32, u32)> = match category {
        Category::G0 => E0_BUCKETS.iter().map(|&(lo, hi)| (bucket_key(lo, hi), lo, hi)).collect(),
        _ => vec![("all".to_string(), 0, u32::MAX)],
    };
    let mut acc = vec![(F::zero(), 0usize); keys.len()];
    for p in pairs.iter().filter(|p| p.category == category) {
        let slot = match category {
            Category::G0 => {
                let Some(d) = p.shortest else { continue };
                match keys.iter().position(|(_, lo, hi)| (*lo..=*hi).contains(&d)) {
                    Some(k) => k,
                    None => continue,
                }
            }
            _ => 0,
        };
        let est = evaluator.predict(p.task_id, &p.source, None, &p.target).expected_distance();
        acc[slot].0 += (est - p.truth.expected_distance()).abs();
        acc[slot].1 += 1;
    }
    keys.into_iter()
        .zip(acc)
        .map(|((k, _, _), (s, n))| (k, (n > 0).then(|| s / F::of_usize(n))))
        .collect()
}

/// Mean over all non-empty buckets of [`e_error`], weighted by pair count.
pub fn e_error_pooled<F: Scalar, E: FeasibilityEvaluator<F> + ?Sized>(
    evaluator: &E,
    pairs: &[ErrorPair<F>],
    category: Category,
) -> Option<F> {
    let sel: Vec<&ErrorPair<F>> = pairs
        .iter()
        .filter(|p| p.category == category && (category != Category::G0 || p.shortest.is_some()))
        .collect();
    if sel.is_empty() {
        return None;
    }
    let total: F = sel
        .iter()
        .map(|p| {
            let est = evaluator.predict(p.task_id, &p.source, None, &p.target).expected_distance();
            (est - p.truth.expected_distance()).abs()
        })
        .sum();
    Some(total / F::of_usize(sel.len()))
}

/// Fraction of plan records whose selected target is G1 or G2 from its source.
pub fn delusion_frequency(log: &[PlanRecord], spaces: &SpaceMap) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let deluded = log
        .iter()
        .filter(|r| {
            let space = &spaces[&r.task_id];
            match space.index_of(&r.source) {
                Some(src) => {
                    let mask = space.hit_mask(&r.target);
                    categorize_with(&mask, &space.reachable_from(src)).infeasible()
                }
                None => false,
            }
        })
        .count();
    deluded as f64 / log.len() as f64
}

/// Mean `|Q - Q*|` over non-terminal states and all actions.
pub fn q_error<F: Scalar>(q: &QTable<F>, space: &StateSpace, q_star: &[[F; 4]]) -> F {
    let mut total = F::zero();
    let mut n = 0;
    for i in space.nonterminal() {
        let e = space.state(i).embedding();
        let row = q.row(&e);
        for a in 0..4 {
            total += (row[a] - q_star[i][a]).abs();
            n += 1;
        }
    }
    total / F::of_usize(n.max(1))
}

/// Rejection tallies of a Dyna trace, split by certified category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectionTally {
    pub infeasible: usize,
    pub infeasible_rejected: usize,
    pub feasible: usize,
    pub feasible_rejected: usize,
}

impl RejectionTally {
    /// Terminal successors are not gated and are left out.
    pub fn from_trace(trace: &[SimRecord]) -> Self {
        let mut t = Self::default();
        for r in trace.iter().filter(|r| !r.terminal) {
            if r.intended.infeasible() {
                t.infeasible += 1;
                t.infeasible_rejected += r.rejected as usize;
            } else {
                t.feasible += 1;
                t.feasible_rejected += r.rejected as usize;
            }
        }
        t
    }

    pub fn true_reject_rate(&self) -> Option<f64> {
        (self.infeasible > 0).then(|| self.infeasible_rejected as f64 / self.infeasible as f64)
    }

    pub fn false_reject_rate(&self) -> Option<f64> {
        (self.feasible > 0).then(|| self.feasible_rejected as f64 / self.feasible as f64)
    }
}

/// Default out-of-distribution difficulties.
pub const OOD_DIFFICULTIES: [f64; 4] = [0.25, 0.35, 0.45, 0.55];

/// Fresh evaluation tasks, `n_per` per difficulty, with distinct task ids.
pub fn ood_tasks(
    family: Family,
    width: usize,
    height: usize,
    difficulties: &[f64],
    n_per: usize,
    seed: u64,
) -> Result<Vec<GridTask>, EnvError> {
    let mut tasks = Vec::with_capacity(difficulties.len() * n_per);
    for (d, &delta) in difficulties.iter().enumerate() {
        for i in 0..n_per {
            let task_seed = (1u64 << 40) | seed << 20 | (d * n_per + i) as u64;
            tasks.push(generate_task(family, width, height, delta, task_seed)?);
        }
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodResult {
    /// `(difficulty, mean success)` in input order.
    pub per_difficulty: Vec<(f64, f64)>,
    pub pooled: f64,
    pub episodes: usize,
}

/// One episode per task from its farthest start; success rates per difficulty
/// and pooled.
pub fn ood_protocol(agent: &mut dyn Agent, tasks: &[GridTask], max_steps: usize, seed: u64) -> OodResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    let mut total = 0.0;
    for (k, task) in tasks.iter().enumerate() {
        let space = StateSpace::new(task);
        let start = space.reset(InitMode::FixedFarthest, &mut rng);
        let out = run_episode(task, agent, start, k as u64, max_steps, &mut rng);
        let s = out.success as u8 as f64;
        total += s;
        let key = task.difficulty.to_bits();
        let e = by.entry(key).or_insert_with(|| {
            order.push(key);
            (task.difficulty, 0.0, 0)
        });
        e.1 += s;
        e.2 += 1;
    }
    OodResult {
        per_difficulty: order
            .iter()
            .map(|k| {
                let (d, s, n) = by[k];
                (d, s / n as f64)
            })
            .collect(),
        pooled: if tasks.is_empty() { 0.0 } else { total / tasks.len() as f64 },
        episodes: tasks.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{OracleAgent, RandomAgent};
    use crate::envs::{Embedding, EnvState};
    use crate::evaluator::OracleEvaluator;
    use crate::oracle::optimal_q;
    use std::sync::Arc;

    struct Uniform;

    impl FeasibilityEvaluator<f64> for Uniform {
        fn t_bins(&self) -> usize {
            16
        }

        fn predict(&self, _: u64, _: &Embedding, _: Option<crate::envs::Action>, _: &Target) -> DistanceHistogram<f64> {
            DistanceHistogram::uniform(16)
        }
    }

    fn ssm() -> (GridTask, Arc<StateSpace>) {
        let task = generate_task(Family::Ssm, 6, 6, 0.2, 11).unwrap();
        let space = Arc::new(StateSpace::new(&task));
        (task, space)
    }

    fn some_targets(space: &StateSpace) -> Vec<Target> {
        let mut t: Vec<Target> = space.nonterminal().step_by(7).map(|i| Target::singleton(space.state(i).embedding())).collect();
        t.push(Target::singleton(Embedding::new(40, 40, false, false)));
        t
    }

    #[test]
    fn oracle_has_zero_error_everywhere() {
        let (task, space) = ssm();
        let policy = PolicySpec::<f64>::UniformRandom;
        let pairs = oracle_pairs(&space, task.task_id, &policy, &some_targets(&space), 16);
        let ev = OracleEvaluator::new(policy, 16).with_task(task.task_id, space.clone());
        for cat in [Category::G0, Category::G1, Category::G2] {
            for (_, v) in e_error(&ev, &pairs, cat) {
                assert!(v.is_none_or(|v| v == 0.0));
            }
        }
    }

    #[test]
    fn uniform_evaluator_e1_is_seven_and_a_half() {
        let (task, space) = ssm();
        let pairs = oracle_pairs::<f64>(&space, task.task_id, &PolicySpec::UniformRandom, &some_targets(&space), 16);
        let e1 = e_error(&Uniform, &pairs, Category::G1);
        assert_eq!(e1.len(), 1);
        assert!((e1[0].1.unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn empty_bucket_is_missing() {
        let e = e_error::<f64, _>(&Uniform, &[], Category::G2);
        assert_eq!(e, vec![("all".to_string(), None)]);
    }

    fn record(space: &StateSpace, src: usize, target: Target) -> PlanRecord {
        PlanRecord {
            task_id: 11,
            source: *space.state(src),
            target,
            goal: false,
        }
    }

    #[test]
    fn delusion_counts() {
        let (task, space) = ssm();
        let mut spaces = SpaceMap::new();
        spaces.insert(task.task_id, space.clone());
        let src = space.nonterminal().next().unwrap();
        let g0 = Target::singleton(space.state(src).embedding());
        let g1 = Target::singleton(Embedding::new(50, 50, false, false));
        let all_g0: Vec<_> = (0..10).map(|_| record(&space, src, g0)).collect();
        assert_eq!(delusion_frequency(&all_g0, &spaces), 0.0);
        let mut mixed = all_g0.clone();
        for r in mixed.iter_mut().take(3) {
            r.target = g1;
        }
        assert_eq!(delusion_frequency(&mixed, &spaces), 0.3);
    }

    #[test]
    fn q_error_cases() {
        let (task, space) = ssm();
        let q_star = optimal_q(&space, 0.9f64);
        let mut q = QTable::new(task.width, task.height, 1.0, 0.9, 0.0);
        let mut n = 0;
        let mut sum = 0.0;
        for i in space.nonterminal() {
            for a in 0..4 {
                sum += q_star[i][a];
                n += 1;
            }
        }
        assert!((q_error(&q, &space, &q_star) - sum / n as f64).abs() < 1e-12);
        // writing Q* into the table gives zero error
        for i in space.nonterminal() {
            let e = space.state(i).embedding();
            for a in crate::envs::Action::ALL {
                let target = q_star[i][a.index()];
                q.update(&e, a, target, &e, true);
            }
        }
        assert_eq!(q_error(&q, &space, &q_star), 0.0);
    }

    #[test]
    fn ood_protocol_pools_eighty_episodes() {
        let tasks = ood_tasks(Family::Ssm, 8, 8, &OOD_DIFFICULTIES, 20, 0).unwrap();
        let mut oracle = OracleAgent::new(0.95);
        for t in &tasks {
            oracle.add_task(t.task_id, Arc::new(StateSpace::new(t)));
        }
        let r = ood_protocol(&mut oracle, &tasks, 200, 0);
        assert_eq!(r.episodes, 80);
        assert!(r.per_difficulty.iter().all(|&(_, s)| s == 1.0));
        let weighted: f64 = r.per_difficulty.iter().map(|&(_, s)| s * 20.0).sum::<f64>() / 80.0;
        assert_eq!(r.pooled, weighted);

        let hard = ood_tasks(Family::Ssm, 8, 8, &[0.55], 20, 1).unwrap();
        let rand = ood_protocol(&mut RandomAgent, &hard, 200, 0);
        assert!(rand.pooled < 1.0);
    }

    #[test]
    fn csv_round_trip_and_order() {
        let rows = vec![
            MetricsRow::new("r", 2, 0, "q_error", "", 0.5),
            MetricsRow::new("r", 1, 5, "e0", "1-2", 1.0 / 3.0),
            MetricsRow::new("r", 1, 0, "e0", "3-4", 2.0),
        ];
        let csv = to_csv(&rows).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "r,1,0,e0,3-4,2.00000000e0");
        assert_eq!(lines[2], "r,1,5,e0,1-2,3.33333333e-1");
        let back = from_csv(&csv).unwrap();
        assert_eq!(back.len(), 3);
        assert!(to_csv(&[rows[0].clone(), rows[0].clone()]).is_err());
        let _ = EnvState::alive(Embedding::default());
    }
}
