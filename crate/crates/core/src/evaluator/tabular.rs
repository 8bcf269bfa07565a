use std::collections::HashMap;

use super::checkpoint::{Backend, Reader, Writer};
use super::{
    backup_target, cross_entropy, CheckpointError, Continuation, DistanceHistogram, EvalError,
    FeasibilityEvaluator, TrainableEvaluator,
};
use crate::envs::{Action, Embedding, Target};
use crate::relabel::RelabeledSample;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularConfig<F> {
    pub t_bins: usize,
    /// Step size of the per-cell averaging.
    pub lr: F,
    /// Training batches between target-table syncs.
    pub sync_period: u64,
    pub continuation: Continuation<F>,
    /// Probability floor inside the logarithm of the loss.
    pub eps: F,
}

impl<F: Scalar> Default for TabularConfig<F> {
    fn default() -> Self {
        Self {
            t_bins: super::DEFAULT_T,
            lr: F::of(0.5),
            sync_period: 1000,
            continuation: Continuation::Control,
            eps: F::of(1e-12),
        }
    }
}

fn cell_key(task_id: u64, source: &Embedding, target: &Target) -> u128 {
    (task_id as u128) << 64 | (source.pack() as u128) << 32 | target.pack() as u128
}

/// Lookup-table evaluator: one histogram per (task, source, action, target),
/// uniform until first trained.
#[derive(Debug, Clone)]
pub struct TabularEvaluator<F> {
    config: TabularConfig<F>,
    index: HashMap<u128, u32>,
    /// Cell `c` occupies `[c * 4T, (c + 1) * 4T)`, action-major.
    online: Vec<F>,
    target: Vec<F>,
    steps: u64,
}

impl<F: Scalar> TabularEvaluator<F> {
    pub fn new(config: TabularConfig<F>) -> Self {
        assert!(config.t_bins >= 2);
        assert!(config.sync_period >= 1);
        Self {
            config,
            index: HashMap::new(),
            online: Vec::new(),
            target: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &TabularConfig<F> {
        &self.config
    }

    pub fn n_cells(&self) -> usize {
        self.index.len()
    }

    fn stride(&self) -> usize {
        4 * self.config.t_bins
    }

    fn read(&self, table: &[F], key: u128, action: Action) -> DistanceHistogram<F> {
        let t = self.config.t_bins;
        match self.index.get(&key) {
            Some(&c) if (c as usize + 1) * self.stride() <= table.len() => {
                let off = c as usize * self.stride() + action.index() * t;
                DistanceHistogram::from_vec(table[off..off + t].to_vec())
            }
            _ => DistanceHistogram::uniform(t),
        }
    }

    fn cell_mut(&mut self, key: u128) -> usize {
        let stride = self.stride();
        let next = self.index.len() as u32;
        let c = *self.index.entry(key).or_insert(next);
        if c == next {
            let u = F::one() / F::of_usize(self.config.t_bins);
            self.online.extend(std::iter::repeat_n(u, stride));
        }
        c as usize * stride
    }

    /// Copies the online table into the target table.
    pub fn sync(&mut self) {
        self.target.clone_from(&self.online);
    }

    fn target_successor(&self, s: &RelabeledSample) -> DistanceHistogram<F> {
        let key = cell_key(s.transition.task_id, &s.transition.next.embedding(), &s.target);
        let per_action = Action::ALL.map(|a| self.read(&self.target, key, a));
        self.config.continuation.combine(&per_action)
    }

    pub fn backup(&self, s: &RelabeledSample) -> DistanceHistogram<F> {
        let t = self.config.t_bins;
        if s.h_flag || s.transition.terminal() {
            backup_target(t, s.h_flag, s.transition.terminal(), None)
        } else {
            backup_target(t, false, false, Some(&self.target_successor(s)))
        }
    }

    pub(crate) fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Backend::Tabular);
        let c = &self.config;
        w.u64(c.t_bins as u64);
        w.f(c.lr);
        w.u64(c.sync_period);
        write_continuation(&mut w, &c.continuation);
        w.f(c.eps);
        w.u64(self.steps);
        let mut entries: Vec<(u128, u32)> = self.index.iter().map(|(&k, &v)| (k, v)).collect();
        entries.sort_unstable();
        w.u64(entries.len() as u64);
        let stride = self.stride();
        for (key, c) in entries {
            w.u128(key);
            let off = c as usize * stride;
            for &v in &self.online[off..off + stride] {
                w.f(v);
            }
            // unsynced cells are written as the uniform rows they read as
            let u = F::one() / F::of_usize(self.config.t_bins);
            for i in off..off + stride {
                w.f(self.target.get(i).copied().unwrap_or(u));
            }
        }
        w.finish()
    }

    pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader::new(bytes, Backend::Tabular)?;
        let t_bins = r.u64()? as usize;
        if t_bins < 2 {
            return Err(CheckpointError::Corrupt("t_bins < 2".into()));
        }
        let lr = r.f()?;
        let sync_period = r.u64()?;
        let continuation = read_continuation(&mut r)?;
        let eps = r.f()?;
        let steps = r.u64()?;
        let n = r.u64()? as usize;
        let mut me = Self::new(TabularConfig {
            t_bins,
            lr,
            sync_period: sync_period.max(1),
            continuation,
            eps,
        });
        me.steps = steps;
        let stride = me.stride();
        for c in 0..n {
            let key = r.u128()?;
            me.index.insert(key, c as u32);
            for _ in 0..stride {
                me.online.push(r.f()?);
            }
            for _ in 0..stride {
                me.target.push(r.f()?);
            }
        }
        r.end()?;
        Ok(me)
    }
}

pub(super) fn write_continuation<F: Scalar>(w: &mut Writer, c: &Continuation<F>) {
    match c {
        Continuation::Control => w.u8(0),
        Continuation::Evaluation(ws) => {
            w.u8(1);
            for &x in ws {
                w.f(x);
            }
        }
    }
}

pub(super) fn read_continuation<F: Scalar>(r: &mut Reader) -> Result<Continuation<F>, CheckpointError> {
    match r.u8()? {
        0 => Ok(Continuation::Control),
        1 => Ok(Continuation::Evaluation([r.f()?, r.f()?, r.f()?, r.f()?])),
        k => Err(CheckpointError::Corrupt(format!("continuation tag {k}"))),
    }
}

impl<F: Scalar> FeasibilityEvaluator<F> for TabularEvaluator<F> {
    fn t_bins(&self) -> usize {
        self.config.t_bins
    }

    fn predict(
        &self,
        task_id: u64,
        source: &Embedding,
        action: Option<Action>,
        target: &Target,
    ) -> DistanceHistogram<F> {
        match action {
            Some(a) => self.read(&self.online, cell_key(task_id, source, target), a),
            None => self
                .config
                .continuation
                .combine(&self.predict_actions(task_id, source, target)),
        }
    }

    fn predict_actions(
        &self,
        task_id: u64,
        source: &Embedding,
        target: &Target,
    ) -> [DistanceHistogram<F>; 4] {
        let key = cell_key(task_id, source, target);
        Action::ALL.map(|a| self.read(&self.online, key, a))
    }
}

impl<F: Scalar> TrainableEvaluator<F> for TabularEvaluator<F> {
    fn train_batch(&mut self, samples: &[RelabeledSample]) -> Result<F, EvalError> {
        if samples.is_empty() {
            return Err(EvalError::EmptyBatch);
        }
        let t = self.config.t_bins;
        let backups: Vec<DistanceHistogram<F>> = samples.iter().map(|s| self.backup(s)).collect();
        let mut loss = F::zero();
        for (s, b) in samples.iter().zip(&backups) {
            let tr = &s.transition;
            let pred = self.predict(tr.task_id, &tr.s.embedding(), Some(tr.action), &s.target);
            loss += cross_entropy(b.probs(), pred.probs(), self.config.eps);
        }
        let loss = loss / F::of_usize(samples.len());
        if !loss.is_finite() {
            return Err(EvalError::NonFiniteLoss {
                step: self.steps,
                batch: samples.len(),
                task_id: samples[0].transition.task_id,
            });
        }
        let lr = self.config.lr;
        for (s, b) in samples.iter().zip(&backups) {
            let tr = &s.transition;
            let off = self.cell_mut(cell_key(tr.task_id, &tr.s.embedding(), &s.target))
                + tr.action.index() * t;
            for (p, &q) in self.online[off..off + t].iter_mut().zip(b.probs()) {
                *p += lr * (q - *p);
            }
        }
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.sync_period) {
            self.sync();
        }
        Ok(loss)
    }

    fn steps(&self) -> u64 {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{step, EnvState, Family, GridTask, StateSpace};
    use crate::oracle::{target_table, PolicySpec};
    use crate::relabel::{Strategy, Transition};

    fn sample(task: &GridTask, s: EnvState, a: Action, target: Target) -> RelabeledSample {
        let (next, r, _) = step(task, &s, a).unwrap();
        RelabeledSample {
            transition: Transition {
                task_id: 0,
                episode_id: 0,
                t: 0,
                s,
                action: a,
                reward: r,
                next,
            },
            target,
            h_flag: crate::envs::indicator(&next, &target),
            strategy: Strategy::Episode,
        }
    }

    fn all_samples(task: &GridTask, space: &StateSpace, targets: &[Target]) -> Vec<RelabeledSample> {
        let mut out = Vec::new();
        for i in space.nonterminal() {
            for a in Action::ALL {
                for &g in targets {
                    out.push(sample(task, *space.state(i), a, g));
                }
            }
        }
        out
    }

    #[test]
    fn fresh_model_is_uniform() {
        let ev = TabularEvaluator::<f64>::new(TabularConfig::default());
        let h = ev.predict(0, &Embedding::default(), None, &Target::singleton(Embedding::default()));
        assert_eq!(h, DistanceHistogram::uniform(16));
    }

    #[test]
    fn corridor_converges_to_point_mass() {
        let task = GridTask::from_layout(Family::Rds, &["..G"]).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(space.state(1).embedding());
        let mut ev = TabularEvaluator::<f64>::new(TabularConfig {
            lr: 1.0,
            sync_period: 1,
            ..TabularConfig::default()
        });
        let data = all_samples(&task, &space, &[target]);
        for _ in 0..40 {
            ev.train_batch(&data).unwrap();
        }
        let h = ev.predict(0, &space.state(0).embedding(), Some(Action::Right), &target);
        assert!(h.l1(&DistanceHistogram::point(16, 1)) < 1e-3);
        // the wall bump costs one step before the same move
        let h = ev.predict(0, &space.state(0).embedding(), Some(Action::Left), &target);
        assert!(h.l1(&DistanceHistogram::point(16, 2)) < 1e-3);
    }

    #[test]
    fn two_state_chain_matches_geometric() {
        let task = GridTask::from_layout(Family::Rds, &["..G"]).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(space.state(1).embedding());
        let mut ev = TabularEvaluator::<f64>::new(TabularConfig {
            lr: 0.5,
            sync_period: 5,
            continuation: Continuation::Evaluation([0.0, 0.0, 0.5, 0.5]),
            ..TabularConfig::default()
        });
        let data: Vec<_> = [Action::Left, Action::Right]
            .into_iter()
            .map(|a| sample(&task, *space.state(0), a, target))
            .collect();
        for _ in 0..2000 {
            ev.train_batch(&data).unwrap();
        }
        let mut pi = vec![[0.0; 4]; space.len()];
        pi[0] = [0.0, 0.0, 0.5, 0.5];
        let oracle = target_table(&space, &PolicySpec::Table(pi), &target, 16);
        let h = ev.predict(0, &space.state(0).embedding(), None, &target);
        assert!(h.l1(oracle.row(0)) < 0.02, "{:?}", h);
    }

    #[test]
    fn fixed_point_batch_is_unchanged() {
        let task = GridTask::from_layout(Family::Rds, &["..G"]).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(space.state(1).embedding());
        let s = sample(&task, *space.state(0), Action::Right, target);
        let mut ev = TabularEvaluator::<f64>::new(TabularConfig {
            lr: 1.0,
            ..TabularConfig::default()
        });
        ev.train_batch(&[s]).unwrap();
        let before = ev.online.clone();
        let loss = ev.train_batch(&[s]).unwrap();
        assert_eq!(ev.online, before);
        // the backup is a point mass, whose entropy is zero
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn infeasible_target_gains_overflow() {
        let task = GridTask::from_layout(Family::Rds, &["L..G"]).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(Embedding::new(0, 0, true, true));
        let mut ev = TabularEvaluator::<f64>::new(TabularConfig {
            lr: 0.3,
            sync_period: 2,
            ..TabularConfig::default()
        });
        let data = all_samples(&task, &space, &[target]);
        let e = space.state(0).embedding();
        let mut prev = ev.predict(0, &e, Some(Action::Left), &target).overflow();
        for _ in 0..30 {
            ev.train_batch(&data).unwrap();
            let now = ev.predict(0, &e, Some(Action::Left), &target).overflow();
            assert!(now >= prev);
            prev = now;
        }
        assert!(prev > 0.95);
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let task = GridTask::from_layout(Family::Rds, &["....", "...G"]).unwrap();
        let space = StateSpace::new(&task);
        let targets: Vec<Target> = (0..3).map(|i| Target::singleton(space.state(i).embedding())).collect();
        let mut ev = TabularEvaluator::<f64>::new(TabularConfig {
            sync_period: 3,
            ..TabularConfig::default()
        });
        let data = all_samples(&task, &space, &targets);
        for _ in 0..7 {
            ev.train_batch(&data).unwrap();
        }
        let bytes = ev.to_bytes();
        let back = TabularEvaluator::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for s in &data {
            let e = s.transition.s.embedding();
            for a in Action::ALL {
                assert_eq!(
                    ev.predict(0, &e, Some(a), &s.target),
                    back.predict(0, &e, Some(a), &s.target)
                );
            }
            assert_eq!(ev.backup(s), back.backup(s));
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let task = GridTask::from_layout(Family::Rds, &["..G"]).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(space.state(1).embedding());
        let mut ev = TabularEvaluator::<f64>::new(TabularConfig {
            lr: f64::NAN,
            ..TabularConfig::default()
        });
        let s = sample(&task, *space.state(0), Action::Left, target);
        ev.train_batch(&[s]).unwrap();
        assert!(matches!(
            ev.train_batch(&[s]),
            Err(EvalError::NonFiniteLoss { .. })
        ));
    }
}
