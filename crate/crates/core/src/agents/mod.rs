//! Target-assisted agents: tabular Q-learning, gated Dyna and a
//! graph-planning agent over generated targets.

mod dyna;
mod plan;
mod policies;
mod qtable;
mod skipper;

pub use dyna::{dyna_step, DynaStats, Gate, SimRecord};
pub use plan::{
    build_plan_graph, goal_policy_action, goal_target, plan_and_select, PlanConfig, PlanGraph, PlanResult,
    Selection, VertexKind,
};
pub use policies::{epsilon_greedy, run_episode, Agent, EpisodeOutcome, GreedyQAgent, OracleAgent, RandomAgent};
pub use qtable::{EpsilonSchedule, QTable};
pub use skipper::{PlanRecord, SkipperAgent};
