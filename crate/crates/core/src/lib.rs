//! Incremental visuo-tactile shape mapping.
//!
//! Dense tactile surface patches and a single noisy depth map are fused into a
//! signed-distance posterior held on a fixed lattice of query nodes. Each surface
//! sample contributes local Gaussian potentials, derived from a thin-plate GP
//! conditional, to the nodes within an association radius; the posterior at each
//! node is maintained incrementally in information form. A marching-cubes pass
//! over the posterior mean gives the implicit surface with per-vertex uncertainty.

pub mod error;
pub mod geometry;
pub mod gpsg;
pub mod kernel;
pub mod runner;
pub mod surface;
pub mod tactile;

pub use error::{Error, Result};
