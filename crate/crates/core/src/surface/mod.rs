//! Zero-level-set extraction of the posterior SDF and pruning of unsupported geometry.

mod marching;
mod prune;
pub mod tables;

pub use marching::{marching_cubes, SdfField, UncertainMesh};
pub use prune::{prune_unsupported, prune_with_index};
