use std::collections::BTreeMap;

use rand::RngCore;

use super::plan::{build_plan_graph, goal_policy_action, plan_and_select, PlanConfig, Selection};
use super::Agent;
use crate::envs::{indicator, Action, EnvState, Target};
use crate::evaluator::FeasibilityEvaluator;
use crate::generator::CandidateGenerator;
use crate::scalar::Scalar;

/// One planning decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanRecord {
    pub task_id: u64,
    pub source: EnvState,
    pub target: Target,
    pub goal: bool,
}

/// Decision-time planner over generated candidate targets.
///
/// At each decision point it samples candidates, builds the plan graph,
/// selects a first hop and follows the evaluator's goal-reaching policy
/// toward it until the target is hit or `tau` steps pass.
pub struct SkipperAgent<F, E> {
    pub evaluator: E,
    pub generator: CandidateGenerator,
    pub goals: BTreeMap<u64, Target>,
    pub cfg: PlanConfig<F>,
    pub n_candidates: usize,
    pub log: Vec<PlanRecord>,
    current: Option<(Target, usize)>,
}

impl<F: Scalar, E: FeasibilityEvaluator<F>> SkipperAgent<F, E> {
    pub fn new(
        evaluator: E,
        generator: CandidateGenerator,
        goals: BTreeMap<u64, Target>,
        cfg: PlanConfig<F>,
        n_candidates: usize,
    ) -> Self {
        Self {
            evaluator,
            generator,
            goals,
            cfg,
            n_candidates,
            log: Vec::new(),
            current: None,
        }
    }

    /// Plans from `state` and records the selection.
    pub fn replan(&mut self, task_id: u64, state: &EnvState, rng: &mut dyn RngCore) -> Target {
        let goal = self.goals[&task_id];
        let candidates: Vec<Target> = self
            .generator
            .sample_candidates(task_id, state, self.n_candidates, rng)
            .into_iter()
            .map(|inj| inj.target)
            .collect();
        let graph = build_plan_graph(&self.evaluator, task_id, state, &candidates, goal, &self.cfg);
        let target = match plan_and_select(&graph).selection {
            Selection::Candidate(t) => t,
            Selection::Goal => goal,
        };
        self.log.push(PlanRecord {
            task_id,
            source: *state,
            target,
            goal: target == goal,
        });
        target
    }
}

impl<F: Scalar, E: FeasibilityEvaluator<F>> Agent for SkipperAgent<F, E> {
    fn begin_episode(&mut self, _: u64) {
        self.current = None;
    }

    fn act(&mut self, task_id: u64, state: &EnvState, rng: &mut dyn RngCore) -> Action {
        let expired = match &self.current {
            Some((t, n)) => indicator(state, t) || *n >= self.cfg.tau,
            None => true,
        };
        if expired {
            let t = self.replan(task_id, state, rng);
            self.current = Some((t, 0));
        }
        let (target, n) = self.current.as_mut().expect("a target is committed");
        *n += 1;
        goal_policy_action(&self.evaluator, task_id, state, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{goal_target, run_episode};
    use crate::envs::{generate_task, Family, InitMode, StateSpace};
    use crate::evaluator::OracleEvaluator;
    use crate::generator::{ConditionalTargetSampler, HallucinationInjector, SpaceMap};
    use crate::oracle::{categorize, PolicySpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn oracle_backed_plus_planner_never_picks_hallucinations() {
        let task = generate_task(Family::Ssm, 6, 6, 0.2, 3).unwrap();
        let space = Arc::new(StateSpace::new(&task));
        let mut spaces = SpaceMap::new();
        spaces.insert(task.task_id, space.clone());
        let mut sampler = ConditionalTargetSampler::new(1.0);
        for s in space.nonterminal() {
            sampler.observe(task.task_id, space.state(s).embedding(), space.state(s).embedding());
        }
        let injector = HallucinationInjector::new(0.3, 0.3).unwrap();
        let generator = CandidateGenerator::new(sampler, injector, spaces, 0);
        let ev = OracleEvaluator::<f64>::new(PolicySpec::GreedyToTarget, 16).with_task(task.task_id, space.clone());
        let mut goals = BTreeMap::new();
        goals.insert(task.task_id, goal_target(&space));
        let cfg = PlanConfig {
            gamma: 0.95,
            tau: 8,
            reject: true,
            theta: 0.05,
        };
        let mut agent = SkipperAgent::new(ev, generator, goals, cfg, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for ep in 0..10 {
            let start = space.reset(InitMode::AllNonterminal, &mut rng);
            run_episode(&task, &mut agent, start, ep, 60, &mut rng);
        }
        assert!(!agent.log.is_empty());
        for r in &agent.log {
            let src = space.index_of(&r.source).unwrap();
            assert!(!categorize(&space, src, &r.target).infeasible(), "{r:?}");
        }
    }
}
