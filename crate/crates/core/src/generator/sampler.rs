use std::collections::{BTreeMap, HashMap};

use rand::{Rng, RngCore};

use super::{HallucinationInjector, Injection, SpaceMap};
use crate::envs::{Embedding, EnvState, Target};
use crate::oracle::Category;
use crate::relabel::{TargetGenerator, Transition};

/// Conditional categorical over target embeddings given a source, fit from
/// `(s_t, s_t')` pairs with `t' > t`.
#[derive(Debug, Clone, Default)]
pub struct ConditionalTargetSampler {
    conditional: HashMap<(u64, Embedding), BTreeMap<Embedding, u32>>,
    marginal: HashMap<u64, BTreeMap<Embedding, u32>>,
    /// 0 picks the mode; 1 samples counts as they are.
    pub temperature: f64,
}

impl ConditionalTargetSampler {
    pub fn new(temperature: f64) -> Self {
        assert!(temperature >= 0.0);
        Self {
            temperature,
            ..Self::default()
        }
    }

    pub fn observe(&mut self, task_id: u64, source: Embedding, target: Embedding) {
        *self
            .conditional
            .entry((task_id, source))
            .or_default()
            .entry(target)
            .or_insert(0) += 1;
        *self.marginal.entry(task_id).or_default().entry(target).or_insert(0) += 1;
    }

    /// Adds every future pair of one episode's visited states.
    pub fn fit_episode(&mut self, task_id: u64, states: &[EnvState]) {
        for (t, s) in states.iter().enumerate() {
            for later in &states[t + 1..] {
                self.observe(task_id, s.embedding(), later.embedding());
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, counts: &BTreeMap<Embedding, u32>, rng: &mut R) -> Option<Embedding> {
        if counts.is_empty() {
            return None;
        }
        if self.temperature == 0.0 {
            // first maximum in key order
            let mut best: Option<(&Embedding, u32)> = None;
            for (e, &c) in counts {
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some((e, c));
                }
            }
            return best.map(|(e, _)| *e);
        }
        let inv = 1.0 / self.temperature;
        let weights: Vec<f64> = counts.values().map(|&c| (c as f64).powf(inv)).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for ((e, _), w) in counts.iter().zip(&weights) {
            if u < *w {
                return Some(*e);
            }
            u -= w;
        }
        counts.keys().next_back().copied()
    }

    /// Falls back to the task marginal for an unseen source.
    pub fn sample<R: Rng + ?Sized>(&self, task_id: u64, source: &Embedding, rng: &mut R) -> Option<Embedding> {
        match self.conditional.get(&(task_id, *source)) {
            Some(c) => self.draw(c, rng),
            None => self.draw(self.marginal.get(&task_id)?, rng),
        }
    }

    pub fn support(&self, task_id: u64, source: &Embedding) -> Option<Vec<Embedding>> {
        self.conditional
            .get(&(task_id, *source))
            .map(|c| c.keys().copied().collect())
    }
}

/// Candidate targets for the planner: sampler proposals passed through the
/// hallucination injector.
#[derive(Debug, Clone)]
pub struct CandidateGenerator {
    pub sampler: ConditionalTargetSampler,
    pub injector: HallucinationInjector,
    pub spaces: SpaceMap,
    pub radius: u8,
}

impl CandidateGenerator {
    pub fn new(sampler: ConditionalTargetSampler, injector: HallucinationInjector, spaces: SpaceMap, radius: u8) -> Self {
        Self {
            sampler,
            injector,
            spaces,
            radius,
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, task_id: u64, source: &EnvState, rng: &mut R) -> Injection {
        let e = self
            .sampler
            .sample(task_id, &source.embedding(), rng)
            .unwrap_or(source.embedding());
        let base = Target::new(e, self.radius);
        let space = self.spaces.get(&task_id);
        match space.and_then(|sp| sp.index_of(source).map(|i| (sp, i))) {
            Some((space, i)) if !space.is_terminal(i) => self.injector.inject(space.as_ref(), i, base, rng),
            _ => Injection {
                target: base,
                intended: Category::G0,
                fell_back: false,
            },
        }
    }

    /// `k` independent candidates conditioned on `source`.
    pub fn sample_candidates<R: Rng + ?Sized>(
        &self,
        task_id: u64,
        source: &EnvState,
        k: usize,
        rng: &mut R,
    ) -> Vec<Injection> {
        assert!(k >= 1);
        (0..k).map(|_| self.sample_one(task_id, source, rng)).collect()
    }
}

impl TargetGenerator for CandidateGenerator {
    fn generate(&self, tr: &Transition, rng: &mut dyn RngCore) -> Option<Target> {
        Some(self.sample_one(tr.task_id, &tr.s, rng).target)
    }
}
