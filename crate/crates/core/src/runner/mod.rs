//! Experiment orchestration: configuration, the depth-then-touch loop,
//! metrics and artifacts.

mod config;
mod run;

pub use config::{ExperimentConfig, MeshSource, RunMode};
pub use run::*;
