//! Gaussian-process spatial graph: a fixed lattice of SDF query nodes, each
//! constrained by unary Gaussian potentials from nearby surface samples and by
//! an empty-space prior. Nodes share no factors, so the MAP estimate is the
//! per-node product of Gaussians, maintained incrementally in information form.

mod checkpoint;
mod graph;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use graph::{
    make_factor, DivergenceReport, GaussianFactor, GpsgGraph, GridSpec, LoggedSample, NodePosterior,
    NodeSelection, PriorSpec, QueryNode, QueryResult, SourceTag, UpdateReport, COVARIANCE_FLOOR,
};
