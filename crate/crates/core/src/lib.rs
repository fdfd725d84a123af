//! Balancing-weight estimation for non-monotone missing-not-at-random data
//! under pattern-graph identifying assumptions.

pub mod basis;
pub mod cli;
pub mod dataset;
pub mod estimator;
pub mod linalg;
pub mod optimizer;
pub mod par;
pub mod pattern_graph;
pub mod simulator;
pub mod weights;

pub use dataset::Dataset;
pub use par::Exec;
pub use pattern_graph::{Pattern, PatternGraph};
