//! Target producers: a one-step successor model, a conditional target sampler
//! and a hallucination injector with controlled rates.

mod injector;
mod one_step;
mod sampler;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use injector::{HallucinationInjector, Injection};
pub use one_step::{OneStepModel, Simulated};
pub use sampler::{CandidateGenerator, ConditionalTargetSampler};

use crate::envs::StateSpace;

/// State graphs of a task set, keyed by task id.
pub type SpaceMap = BTreeMap<u64, Arc<StateSpace>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("no observation of this state-action pair")]
    UnseenPair,
    #[error("no certified G1 target exists")]
    G1Unavailable,
    #[error("no certified G2 target exists")]
    G2Unavailable,
    #[error("invalid hallucination rates ({0}, {1})")]
    InvalidRate(f64, f64),
    #[error("unknown task {0}")]
    UnknownTask(u64),
}
