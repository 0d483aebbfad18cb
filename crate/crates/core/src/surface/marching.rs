use std::collections::HashMap;

use nalgebra::Point3;

use super::tables::{triangle_table, CORNERS, EDGES};
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::gpsg::{GpsgGraph, GridSpec};

/// Posterior `phi` mean and variance sampled on the query lattice.
#[derive(Clone, Debug)]
pub struct SdfField {
    pub spec: GridSpec,
    pub phi: Vec<f64>,
    pub variance: Vec<f64>,
    pub touched: Vec<bool>,
}

impl SdfField {
    pub fn new(spec: GridSpec, phi: Vec<f64>, variance: Vec<f64>, touched: Vec<bool>) -> Result<Self> {
        let n = spec.node_count();
        if phi.len() != n || variance.len() != n || touched.len() != n {
            return Err(Error::InvalidArgument(format!("field arrays must have {n} entries")));
        }
        if phi.iter().chain(&variance).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field values must be finite".into()));
        }
        Ok(Self {
            spec,
            phi,
            variance,
            touched,
        })
    }

    /// Samples a closure at every lattice node (variance zero, all touched).
    pub fn from_fn(spec: GridSpec, f: impl Fn(&Point3<f64>) -> f64) -> Self {
        let phi = (0..spec.node_count()).map(|i| f(&spec.position(i))).collect();
        Self {
            spec,
            phi,
            variance: vec![0.0; spec.node_count()],
            touched: vec![true; spec.node_count()],
        }
    }

    /// Cached posterior of a graph; query the graph beforehand.
    pub fn from_graph(graph: &GpsgGraph) -> Self {
        let (phi, variance) = graph.phi_field();
        Self {
            spec: *graph.spec(),
            phi,
            variance,
            touched: graph.nodes().iter().map(|n| n.touched).collect(),
        }
    }

    pub fn phi_at(&self, p: &Point3<f64>) -> f64 {
        self.spec.trilinear(&self.phi, p)
    }
}

/// Triangle mesh whose per-vertex attribute is the posterior `phi` std-dev (m).
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainMesh {
    mesh: TriangleMesh,
}

impl UncertainMesh {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        match mesh.attribute() {
            Some(a) if a.iter().all(|s| *s >= 0.0) => Ok(Self { mesh }),
            None if mesh.vertices().is_empty() => Ok(Self { mesh }),
            _ => Err(Error::InvalidArgument("uncertain mesh needs non-negative per-vertex sigma".into())),
        }
    }

    pub fn empty() -> Self {
        Self {
            mesh: TriangleMesh::empty(),
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn into_mesh(self) -> TriangleMesh {
        self.mesh
    }

    pub fn sigma(&self) -> &[f64] {
        self.mesh.attribute().unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.is_empty()
    }
}

/// Extracts the `iso` level set. Vertices sit on lattice edges by linear
/// interpolation; their sigma is the square root of the linearly interpolated
/// node variance. Triangles face toward increasing `phi`.
pub fn marching_cubes(field: &SdfField, iso: f64) -> UncertainMesh {
    let spec = &field.spec;
    let s = spec.nodes_per_axis;
    let table = triangle_table();
    let mut vertex_of: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut sigma: Vec<f64> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for k in 0..s - 1 {
        for j in 0..s - 1 {
            for i in 0..s - 1 {
                let node = |c: usize| {
                    let [dx, dy, dz] = CORNERS[c];
                    spec.index(i + dx, j + dy, k + dz)
                };
                let mut case = 0usize;
                for c in 0..8 {
                    if field.phi[node(c)] < iso {
                        case |= 1 << c;
                    }
                }
                let tris = &table[case];
                if tris.is_empty() {
                    continue;
                }
                for tri in tris {
                    let mut ids = [0usize; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let [ca, cb] = EDGES[e as usize];
                        let (na, nb) = (node(ca), node(cb));
                        let key = (na.min(nb), na.max(nb), 0);
                        *slot = *vertex_of.entry(key).or_insert_with(|| {
                            let (fa, fb) = (field.phi[na], field.phi[nb]);
                            let t = ((iso - fa) / (fb - fa)).clamp(0.0, 1.0);
                            let pa = spec.position(na);
                            let pb = spec.position(nb);
                            vertices.push(pa + (pb - pa) * t);
                            let var = field.variance[na] + t * (field.variance[nb] - field.variance[na]);
                            sigma.push(var.max(0.0).sqrt());
                            vertices.len() - 1
                        });
                    }
                    faces.push(ids);
                }
            }
        }
    }
    if faces.is_empty() {
        return UncertainMesh::empty();
    }
    UncertainMesh {
        mesh: TriangleMesh::from_parts_unchecked(vertices, faces, Some(sigma)),
    }
}
