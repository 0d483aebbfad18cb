use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mesh::TriangleMesh;
use super::spatial::KdTree;
use crate::error::{Error, Result};

/// Default number of surface samples per mesh for Chamfer evaluation.
pub const DEFAULT_CHAMFER_SAMPLES: usize = 10_000;

/// Square meters to square millimeters.
pub const M2_TO_MM2: f64 = 1e6;

/// Symmetric Chamfer distance in m^2: mean squared nearest-neighbour distance
/// from `a` to `b` plus the same from `b` to `a`.
pub fn chamfer_distance(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let ta = KdTree::new(a.to_vec());
    let tb = KdTree::new(b.to_vec());
    Ok(chamfer_with_trees(&ta, &tb))
}

pub(crate) fn chamfer_with_trees(a: &KdTree, b: &KdTree) -> f64 {
    one_sided(a.points(), b) + one_sided(b.points(), a)
}

fn one_sided(from: &[Point3<f64>], to: &KdTree) -> f64 {
    let d2: Vec<f64> = from
        .par_iter()
        .map(|p| to.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2))
        .collect();
    d2.iter().sum::<f64>() / from.len() as f64
}

/// Fixed ground-truth sample set reused for every evaluation of a run. Both
/// sides use stratified area sampling.
#[derive(Clone, Debug)]
pub struct ChamferReference {
    tree: KdTree,
    samples: usize,
    seed: u64,
}

impl ChamferReference {
    pub fn new(ground_truth: &TriangleMesh, samples: usize, seed: u64) -> Result<Self> {
        if ground_truth.is_empty() || samples == 0 {
            return Err(Error::EmptyPointSet);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = ground_truth.sample_surface_stratified(samples, &mut rng);
        Ok(Self {
            tree: KdTree::new(pts),
            samples,
            seed,
        })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        self.tree.points()
    }

    /// Chamfer distance (m^2) from a reconstruction mesh, sampled with the same count.
    pub fn evaluate(&self, reconstruction: &TriangleMesh) -> Result<f64> {
        if reconstruction.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let pts = reconstruction.sample_surface_stratified(self.samples, &mut rng);
        Ok(chamfer_with_trees(&KdTree::new(pts), &self.tree))
    }
}
