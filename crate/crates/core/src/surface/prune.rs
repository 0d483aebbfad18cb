use nalgebra::Point3;

use super::marching::UncertainMesh;
use crate::geometry::{KdTree, TriangleMesh};

/// Drops every vertex farther than `radius` from all measurement positions,
/// along with any face touching a dropped vertex, then compacts indices.
/// Vertices left without faces are removed too.
pub fn prune_unsupported(mesh: &UncertainMesh, measurements: &[Point3<f64>], radius: f64) -> UncertainMesh {
    if measurements.is_empty() || mesh.is_empty() {
        return UncertainMesh::empty();
    }
    let tree = KdTree::new(measurements.to_vec());
    prune_with_index(mesh, &tree, radius)
}

pub fn prune_with_index(mesh: &UncertainMesh, index: &KdTree, radius: f64) -> UncertainMesh {
    let m = mesh.mesh();
    let supported: Vec<bool> = m
        .vertices()
        .iter()
        .map(|v| index.any_within(v, radius))
        .collect();
    let faces: Vec<[usize; 3]> = m
        .faces()
        .iter()
        .copied()
        .filter(|f| f.iter().all(|&i| supported[i]))
        .collect();
    if faces.is_empty() {
        return UncertainMesh::empty();
    }
    let mut remap = vec![usize::MAX; m.vertices().len()];
    let mut vertices = Vec::new();
    let mut sigma = Vec::new();
    for f in &faces {
        for &i in f {
            if remap[i] == usize::MAX {
                remap[i] = vertices.len();
                vertices.push(m.vertices()[i]);
                sigma.push(mesh.sigma()[i]);
            }
        }
    }
    let faces = faces.into_iter().map(|f| f.map(|i| remap[i])).collect();
    UncertainMesh::new(TriangleMesh::from_parts_unchecked(vertices, faces, Some(sigma)))
        .expect("sigma copied from a valid mesh")
}
