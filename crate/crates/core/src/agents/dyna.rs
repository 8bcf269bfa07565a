use rand::Rng;

use super::QTable;
use crate::envs::Target;
use crate::evaluator::FeasibilityEvaluator;
use crate::generator::OneStepModel;
use crate::oracle::Category;
use crate::relabel::ReplayStore;
use crate::relabel::Transition;
use crate::scalar::Scalar;

/// Counts from one call to [`dyna_step`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DynaStats {
    pub applied: usize,
    pub rejected: usize,
    pub abstained: usize,
}

impl std::ops::AddAssign for DynaStats {
    fn add_assign(&mut self, o: Self) {
        self.applied += o.applied;
        self.rejected += o.rejected;
        self.abstained += o.abstained;
    }
}

/// One simulated update as seen by the gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRecord {
    pub intended: Category,
    pub terminal: bool,
    pub rejected: bool,
}

/// Evaluator gate for simulated successors.
#[derive(Clone, Copy)]
pub struct Gate<'a, F> {
    pub evaluator: &'a dyn FeasibilityEvaluator<F>,
    /// Reject when `p(D <= 1) < threshold`.
    pub threshold: F,
}

/// One real Q-learning update followed by `n_sim` model-simulated ones.
///
/// With a gate, each non-terminal simulated successor `s^` is checked with
/// `p(D(s, a, g(s^)) <= 1)`, and rejected updates are skipped. Terminal
/// successors are applied unchecked, since a failed terminal has no
/// embedding that any state matches.
#[allow(clippy::too_many_arguments)]
pub fn dyna_step<F: Scalar, R: Rng>(
    q: &mut QTable<F>,
    real: &Transition,
    gate: Option<Gate<'_, F>>,
    store: &ReplayStore,
    model: &OneStepModel,
    n_sim: usize,
    rng: &mut R,
    mut trace: Option<&mut Vec<SimRecord>>,
) -> DynaStats {
    q.q_update(real);
    let mut stats = DynaStats::default();
    if store.is_empty() {
        return stats;
    }
    for _ in 0..n_sim {
        let tr = *store.transition(store.sample_ref(rng));
        let Ok(sim) = model.sample_next(tr.task_id, &tr.s, tr.action, rng) else {
            stats.abstained += 1;
            continue;
        };
        let rejected = match gate {
            Some(g) if !sim.next.terminal => {
                let target = Target::singleton(sim.next.embedding());
                g.evaluator
                    .predict(tr.task_id, &tr.s.embedding(), Some(tr.action), &target)
                    .reject(1, g.threshold)
            }
            _ => false,
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(SimRecord {
                intended: sim.intended,
                terminal: sim.next.terminal,
                rejected,
            });
        }
        if rejected {
            stats.rejected += 1;
            continue;
        }
        q.update(
            &tr.s.embedding(),
            tr.action,
            F::of(sim.reward),
            &sim.next.embedding(),
            sim.next.terminal,
        );
        stats.applied += 1;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_task, step, Action, Family, StateSpace};
    use crate::evaluator::{TabularConfig, TabularEvaluator};
    use crate::generator::{HallucinationInjector, SpaceMap};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup() -> (ReplayStore, OneStepModel, Vec<Transition>) {
        let task = generate_task(Family::Ssm, 6, 6, 0.2, 5).unwrap();
        let space = Arc::new(StateSpace::new(&task));
        let mut spaces = SpaceMap::new();
        spaces.insert(task.task_id, space.clone());
        let mut model = OneStepModel::new(spaces, HallucinationInjector::new(0.1, 0.1).unwrap());
        let mut store = ReplayStore::new(10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut data = Vec::new();
        for ep in 0..30u64 {
            let mut s = space.reset(crate::envs::InitMode::AllNonterminal, &mut rng);
            for t in 0..40 {
                let a = Action::ALL[rng.random_range(0..4)];
                let (n, r, term) = step(&task, &s, a).unwrap();
                let tr = Transition { task_id: task.task_id, episode_id: ep, t, s, action: a, reward: r, next: n };
                store.push(tr).unwrap();
                model.observe(&tr);
                data.push(tr);
                if term {
                    break;
                }
                s = n;
            }
        }
        (store, model, data)
    }

    #[test]
    fn zero_threshold_matches_plain_dyna() {
        let (store, model, data) = setup();
        let ev = TabularEvaluator::<f64>::new(TabularConfig::default());
        let mut q1 = QTable::new(6, 6, 0.1, 0.95, 0.0);
        let mut q2 = q1.clone();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        for tr in data.iter().take(200) {
            dyna_step(&mut q1, tr, None, &store, &model, 5, &mut r1, None);
            let gate = Gate { evaluator: &ev, threshold: 0.0 };
            let st = dyna_step(&mut q2, tr, Some(gate), &store, &model, 5, &mut r2, None);
            assert_eq!(st.rejected, 0);
        }
        assert_eq!(q1, q2);
    }

    #[test]
    fn uniform_evaluator_rejects_nothing_at_default_threshold() {
        let (store, model, data) = setup();
        let ev = TabularEvaluator::<f64>::new(TabularConfig::default());
        let mut q = QTable::new(6, 6, 0.1, 0.95, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gate = Gate { evaluator: &ev, threshold: 0.05 };
        let st = dyna_step(&mut q, &data[0], Some(gate), &store, &model, 50, &mut rng, None);
        // 1/16 > 0.05
        assert_eq!(st.rejected, 0);
        assert_eq!(st.applied + st.abstained, 50);
    }
}
