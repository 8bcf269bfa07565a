use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore};

use super::QTable;
use crate::envs::{step, Action, EnvState, GridTask, StateSpace};
use crate::oracle::optimal_q;
use crate::relabel::Transition;
use crate::scalar::Scalar;

/// Anything that picks actions in a task.
pub trait Agent {
    /// Called before the first step of every episode.
    fn begin_episode(&mut self, _task_id: u64) {}

    fn act(&mut self, task_id: u64, state: &EnvState, rng: &mut dyn RngCore) -> Action;
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomAgent;

impl Agent for RandomAgent {
    fn act(&mut self, _: u64, _: &EnvState, rng: &mut dyn RngCore) -> Action {
        Action::ALL[rng.random_range(0..4)]
    }
}

/// Greedy on the exact optimal action values of each known task.
#[derive(Debug, Clone, Default)]
pub struct OracleAgent {
    tasks: BTreeMap<u64, (Arc<StateSpace>, Vec<[f64; 4]>)>,
    gamma: f64,
}

impl OracleAgent {
    pub fn new(gamma: f64) -> Self {
        Self {
            tasks: BTreeMap::new(),
            gamma,
        }
    }

    pub fn add_task(&mut self, task_id: u64, space: Arc<StateSpace>) {
        let q = optimal_q(&space, self.gamma);
        self.tasks.insert(task_id, (space, q));
    }
}

impl Agent for OracleAgent {
    fn act(&mut self, task_id: u64, state: &EnvState, _: &mut dyn RngCore) -> Action {
        let Some((space, q)) = self.tasks.get(&task_id) else {
            return Action::Up;
        };
        match space.index_of(state) {
            Some(i) => Action::ALL[argmax(&q[i])],
            None => Action::Up,
        }
    }
}

fn argmax<F: PartialOrd + Copy>(row: &[F; 4]) -> usize {
    let mut best = 0;
    for a in 1..4 {
        if row[a] > row[best] {
            best = a;
        }
    }
    best
}

/// With probability `eps` a uniform action, otherwise the greedy one.
pub fn epsilon_greedy<F: Scalar, R: Rng + ?Sized>(q: &QTable<F>, state: &EnvState, eps: f64, rng: &mut R) -> Action {
    if eps > 0.0 && rng.random::<f64>() < eps {
        Action::ALL[rng.random_range(0..4)]
    } else {
        q.greedy(&state.embedding())
    }
}

/// Epsilon-greedy over a borrowed Q-table.
#[derive(Debug)]
pub struct GreedyQAgent<'a, F> {
    pub q: &'a QTable<F>,
    pub eps: f64,
}

impl<F: Scalar> Agent for GreedyQAgent<'_, F> {
    fn act(&mut self, _: u64, state: &EnvState, rng: &mut dyn RngCore) -> Action {
        epsilon_greedy(self.q, state, self.eps, rng)
    }
}

/// A finished (or truncated) episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub transitions: Vec<Transition>,
    pub ret: f64,
    pub success: bool,
}

/// Rolls `agent` out from `start` for at most `max_steps` steps.
pub fn run_episode(
    task: &GridTask,
    agent: &mut dyn Agent,
    start: EnvState,
    episode_id: u64,
    max_steps: usize,
    rng: &mut dyn RngCore,
) -> EpisodeOutcome {
    agent.begin_episode(task.task_id);
    let mut s = start;
    let mut transitions = Vec::new();
    let mut ret = 0.0;
    for t in 0..max_steps {
        if s.terminal {
            break;
        }
        let action = agent.act(task.task_id, &s, rng);
        let (next, reward, _) = step(task, &s, action).expect("state is not terminal");
        transitions.push(Transition {
            task_id: task.task_id,
            episode_id,
            t: t as u32,
            s,
            action,
            reward,
            next,
        });
        ret += reward;
        s = next;
    }
    EpisodeOutcome {
        transitions,
        ret,
        success: s.success,
    }
}
