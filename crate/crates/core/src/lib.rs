//! Target-feasibility evaluation for target-assisted planning agents on
//! controlled gridworlds, checked against an exact dynamic-programming oracle.

pub mod agents;
pub mod config;
pub mod envs;
pub mod evaluator;
pub mod experiments;
pub mod generator;
pub mod metrics;
pub mod oracle;
pub mod relabel;
pub mod scalar;
pub mod selftest;
pub mod stats;
pub mod train;

pub use scalar::Scalar;

/// Double-precision histogram.
pub type Histogram64 = evaluator::DistanceHistogram<f64>;
/// Single-precision histogram.
pub type Histogram32 = evaluator::DistanceHistogram<f32>;
/// Double-precision lookup-table evaluator.
pub type Tabular64 = evaluator::TabularEvaluator<f64>;
pub type Tabular32 = evaluator::TabularEvaluator<f32>;
pub type Feedforward64 = evaluator::FeedforwardEvaluator<f64>;
pub type Feedforward32 = evaluator::FeedforwardEvaluator<f32>;
