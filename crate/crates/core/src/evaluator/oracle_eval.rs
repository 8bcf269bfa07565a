use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{DistanceHistogram, FeasibilityEvaluator};
use crate::envs::{Action, Embedding, StateSpace, Target};
use crate::oracle::{target_table, DistanceTable, PolicySpec};
use crate::scalar::Scalar;

type Cache<F> = Mutex<HashMap<(u64, u32), Arc<DistanceTable<F>>>>;

/// Exact evaluator backed by the dynamic-programming oracle; tables are
/// computed lazily per target and cached.
#[derive(Debug)]
pub struct OracleEvaluator<F> {
    spaces: HashMap<u64, Arc<StateSpace>>,
    policy: PolicySpec<F>,
    t_bins: usize,
    cache: Cache<F>,
}

impl<F: Scalar> OracleEvaluator<F> {
    pub fn new(policy: PolicySpec<F>, t_bins: usize) -> Self {
        Self {
            spaces: HashMap::new(),
            policy,
            t_bins,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_task(mut self, task_id: u64, space: Arc<StateSpace>) -> Self {
        self.add_task(task_id, space);
        self
    }

    pub fn add_task(&mut self, task_id: u64, space: Arc<StateSpace>) {
        self.spaces.insert(task_id, space);
    }

    fn table(&self, task_id: u64, target: &Target) -> Option<(Arc<StateSpace>, Arc<DistanceTable<F>>)> {
        let space = self.spaces.get(&task_id)?.clone();
        let key = (task_id, target.pack());
        let mut cache = self.cache.lock().expect("oracle cache poisoned");
        let table = cache
            .entry(key)
            .or_insert_with(|| Arc::new(target_table(&space, &self.policy, target, self.t_bins)))
            .clone();
        Some((space, table))
    }
}

impl<F: Scalar> FeasibilityEvaluator<F> for OracleEvaluator<F> {
    fn t_bins(&self) -> usize {
        self.t_bins
    }

    fn predict(
        &self,
        task_id: u64,
        source: &Embedding,
        action: Option<Action>,
        target: &Target,
    ) -> DistanceHistogram<F> {
        let Some((space, table)) = self.table(task_id, target) else {
            return DistanceHistogram::overflow_only(self.t_bins);
        };
        match space.index_of_embedding(source) {
            Some(i) if !space.is_terminal(i) => match action {
                Some(a) => table.action_row(i, a).clone(),
                None => table.row(i).clone(),
            },
            _ => DistanceHistogram::overflow_only(self.t_bins),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Family, GridTask};

    #[test]
    fn matches_oracle_rows() {
        let task = GridTask::from_layout(Family::Rds, &["...G"]).unwrap();
        let space = Arc::new(StateSpace::new(&task));
        let ev = OracleEvaluator::<f64>::new(PolicySpec::GreedyToTarget, 16).with_task(0, space.clone());
        let target = Target::singleton(space.state(2).embedding());
        let src = space.state(0).embedding();
        assert_eq!(ev.predict(0, &src, None, &target), DistanceHistogram::point(16, 2));
        assert_eq!(
            ev.predict(0, &src, Some(Action::Left), &target),
            DistanceHistogram::point(16, 3)
        );
        let hallucinated = Embedding::new(9, 9, true, true);
        assert_eq!(ev.predict(0, &hallucinated, None, &target), DistanceHistogram::overflow_only(16));
        assert_eq!(ev.predict(7, &src, None, &target), DistanceHistogram::overflow_only(16));
    }
}
