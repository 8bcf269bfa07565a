use std::collections::{BTreeMap, HashMap};

use rand::{Rng, RngCore};

use super::{GenError, HallucinationInjector, SpaceMap};
use crate::envs::{Action, Embedding, EnvState, Target};
use crate::oracle::Category;
use crate::relabel::{TargetGenerator, Transition};

/// A successor drawn from the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simulated {
    pub next: EnvState,
    pub reward: f64,
    /// Category the corruption channel aimed for; G0 for an observed successor.
    pub intended: Category,
}

#[derive(Debug, Clone, Default)]
struct Outcomes {
    /// Keyed by (embedding, terminal, success) so that iteration is ordered.
    counts: BTreeMap<(Embedding, bool, bool), (u32, f64)>,
    total: u32,
}

/// Empirical one-step model with a structured corruption channel.
///
/// Only non-terminal successors are corrupted: a hallucinated successor is a
/// live state whose embedding is certified G1 or G2 relative to the source.
#[derive(Debug, Clone)]
pub struct OneStepModel {
    table: HashMap<(u64, Embedding, Action), Outcomes>,
    spaces: SpaceMap,
    pub injector: HallucinationInjector,
}

impl OneStepModel {
    pub fn new(spaces: SpaceMap, injector: HallucinationInjector) -> Self {
        Self {
            table: HashMap::new(),
            spaces,
            injector,
        }
    }

    pub fn observe(&mut self, tr: &Transition) {
        let o = self
            .table
            .entry((tr.task_id, tr.s.embedding(), tr.action))
            .or_default();
        let n = tr.next;
        let e = o.counts.entry((n.embedding(), n.terminal, n.success)).or_insert((0, tr.reward));
        e.0 += 1;
        o.total += 1;
    }

    pub fn fit<'a>(&mut self, transitions: impl IntoIterator<Item = &'a Transition>) {
        for tr in transitions {
            self.observe(tr);
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.table.len()
    }

    pub fn sample_next<R: Rng + ?Sized>(
        &self,
        task_id: u64,
        s: &EnvState,
        a: Action,
        rng: &mut R,
    ) -> Result<Simulated, GenError> {
        let o = self
            .table
            .get(&(task_id, s.embedding(), a))
            .ok_or(GenError::UnseenPair)?;
        let mut u = rng.random_range(0..o.total);
        let (&(e, terminal, success), &(_, reward)) = o
            .counts
            .iter()
            .find(|(_, (c, _))| {
                if u < *c {
                    true
                } else {
                    u -= c;
                    false
                }
            })
            .expect("counts sum to total");
        let mut next = EnvState::alive(e);
        next.terminal = terminal;
        next.success = success;
        let observed = Simulated {
            next,
            reward,
            intended: Category::G0,
        };
        if terminal || (self.injector.p_g1 == 0.0 && self.injector.p_g2 == 0.0) {
            return Ok(observed);
        }
        let space = self.spaces.get(&task_id).ok_or(GenError::UnknownTask(task_id))?;
        let Some(src) = space.index_of(s) else {
            return Ok(observed);
        };
        let inj = self
            .injector
            .inject(space, src, Target::singleton(e), rng);
        if inj.intended == Category::G0 {
            return Ok(observed);
        }
        Ok(Simulated {
            next: EnvState::alive(inj.target.embedding),
            reward: 0.0,
            intended: inj.intended,
        })
    }
}

impl TargetGenerator for OneStepModel {
    fn generate(&self, tr: &Transition, rng: &mut dyn RngCore) -> Option<Target> {
        self.sample_next(tr.task_id, &tr.s, tr.action, rng)
            .ok()
            .map(|sim| Target::singleton(sim.next.embedding()))
    }
}
