use std::collections::{BTreeMap, HashMap};

use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

/// Minimum accepted triangle area, m^2.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self {
            min: Point3::from([f64::INFINITY; 3]),
            max: Point3::from([f64::NEG_INFINITY; 3]),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        let v = Vector3::repeat(pad);
        Aabb::new(self.min - v, self.max + v)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_squared(&self, p: &Point3<f64>) -> f64 {
        (0..3)
            .map(|i| {
                let d = (self.min[i] - p[i]).max(0.0).max(p[i] - self.max[i]);
                d * d
            })
            .sum()
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| !(self.max[i] > self.min[i]))
    }
}

/// Indexed triangle mesh in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    normals: Option<Vec<Vector3<f64>>>,
    attribute: Option<Vec<f64>>,
}

impl TriangleMesh {
    /// Builds and validates a mesh: indices in range and no face below [`MIN_FACE_AREA`].
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mesh = Self {
            vertices,
            faces,
            normals: None,
            attribute: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// A mesh with no geometry. Valid as an extraction result, never as loaded input.
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            normals: None,
            attribute: None,
        }
    }

    /// Construction for extracted surfaces: index checks only, tiny slivers allowed.
    pub(crate) fn from_parts_unchecked(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
        attribute: Option<Vec<f64>>,
    ) -> Self {
        debug_assert!(faces.iter().flatten().all(|&i| i < vertices.len()));
        debug_assert!(attribute.as_ref().is_none_or(|a| a.len() == vertices.len()));
        Self {
            vertices,
            faces,
            normals: None,
            attribute,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        index: i,
                        count: n,
                    });
                }
            }
            let area = self.face_area(fi);
            if !(area > MIN_FACE_AREA) {
                return Err(Error::DegenerateFace { face: fi, area });
            }
        }
        Ok(())
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::InvalidArgument("normal count != vertex count".into()));
        }
        self.normals = Some(normals.into_iter().map(|n| n.normalize()).collect());
        Ok(self)
    }

    pub fn with_attribute(mut self, attribute: Vec<f64>) -> Result<Self> {
        if attribute.len() != self.vertices.len() {
            return Err(Error::InvalidArgument("attribute count != vertex count".into()));
        }
        self.attribute = Some(attribute);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn attribute(&self) -> Option<&[f64]> {
        self.attribute.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal following the right-hand rule on the face winding.
    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Uniform scale about the origin (unit conversion).
    pub fn scaled(mut self, factor: f64) -> Self {
        for v in &mut self.vertices {
            *v = Point3::from(v.coords * factor);
        }
        self
    }

    pub fn translated(mut self, offset: Vector3<f64>) -> Self {
        for v in &mut self.vertices {
            *v += offset;
        }
        self
    }

    /// Undirected edge -> number of incident faces.
    pub fn edge_census(&self) -> BTreeMap<(usize, usize), usize> {
        let mut edges = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Every edge shared by exactly two faces.
    pub fn check_watertight(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        match self.edge_census().into_iter().find(|&(_, c)| c != 2) {
            Some(((a, b), c)) => Err(Error::NotWatertight(a, b, c)),
            None => Ok(()),
        }
    }

    /// V - E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for &i in self.faces.iter().flatten() {
            used[i] = true;
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_census().len() as i64 + self.faces.len() as i64
    }

    /// Area-weighted uniform samples on the surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Point3<f64>> {
        self.sample_surface_with_faces(count, rng)
            .into_iter()
            .map(|(p, _)| p)
            .collect()
    }

    /// Area-weighted samples placed by systematic sampling of the area CDF:
    /// one random offset, then evenly spaced quantiles. Each face receives a
    /// count within one of its expected share, which keeps estimates built on
    /// these samples far less noisy than independent draws.
    pub fn sample_surface_stratified<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Point3<f64>> {
        if self.faces.is_empty() || count == 0 {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut acc = 0.0;
        for f in 0..self.faces.len() {
            acc += self.face_area(f);
            cdf.push(acc);
        }
        let offset: f64 = rng.random();
        (0..count)
            .map(|i| {
                let u = (i as f64 + offset) / count as f64 * acc;
                let f = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(f);
                let (mut s, mut t): (f64, f64) = (rng.random(), rng.random());
                if s + t > 1.0 {
                    s = 1.0 - s;
                    t = 1.0 - t;
                }
                a + (b - a) * s + (c - a) * t
            })
            .collect()
    }

    /// Area-weighted samples along with the face each one lies on.
    pub fn sample_surface_with_faces<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> Vec<(Point3<f64>, usize)> {
        if self.faces.is_empty() {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut acc = 0.0;
        for f in 0..self.faces.len() {
            acc += self.face_area(f);
            cdf.push(acc);
        }
        (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let f = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(f);
                let (mut s, mut t): (f64, f64) = (rng.random(), rng.random());
                if s + t > 1.0 {
                    s = 1.0 - s;
                    t = 1.0 - t;
                }
                (a + (b - a) * s + (c - a) * t, f)
            })
            .collect()
    }

    /// Geodesic sphere from a subdivided icosahedron, outward winding.
    ///
    /// Subdivision level `n` yields `10 * 4^n + 2` vertices (642 at level 3).
    pub fn icosphere(radius: f64, subdivisions: u32) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vector3<f64>> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|v| Vector3::from(*v).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let mut mid = |i: usize, j: usize| {
                    *midpoints.entry((i.min(j), i.max(j))).or_insert_with(|| {
                        vertices.push(((vertices[i] + vertices[j]) * 0.5).normalize());
                        vertices.len() - 1
                    })
                };
                let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let vertices = vertices.into_iter().map(|v| Point3::from(v * radius)).collect();
        Self::from_parts_unchecked(vertices, faces, None)
    }

    /// Closed box centered at the origin with the given edge lengths.
    pub fn cuboid(size: Vector3<f64>) -> Self {
        let h = size * 0.5;
        let vertices = (0..8)
            .map(|i| {
                Point3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        let faces = vec![
            [0, 2, 1],
            [1, 2, 3],
            [4, 5, 6],
            [5, 7, 6],
            [0, 1, 4],
            [1, 5, 4],
            [2, 6, 3],
            [3, 6, 7],
            [0, 4, 2],
            [2, 4, 6],
            [1, 3, 5],
            [3, 7, 5],
        ];
        Self::from_parts_unchecked(vertices, faces, None)
    }

    /// Closed cylinder along z, base at z = 0, with `segments` around and `rings` side bands.
    pub fn cylinder(radius: f64, height: f64, segments: usize, rings: usize) -> Self {
        let segments = segments.max(3);
        let rings = rings.max(1);
        let mut vertices = Vec::new();
        for r in 0..=rings {
            let z = height * r as f64 / rings as f64;
            for s in 0..segments {
                let a = std::f64::consts::TAU * s as f64 / segments as f64;
                vertices.push(Point3::new(radius * a.cos(), radius * a.sin(), z));
            }
        }
        let bottom = vertices.len();
        vertices.push(Point3::new(0.0, 0.0, 0.0));
        let top = vertices.len();
        vertices.push(Point3::new(0.0, 0.0, height));
        let mut faces = Vec::new();
        for r in 0..rings {
            for s in 0..segments {
                let a = r * segments + s;
                let b = r * segments + (s + 1) % segments;
                let c = a + segments;
                let d = b + segments;
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        for s in 0..segments {
            let a = s;
            let b = (s + 1) % segments;
            faces.push([bottom, b, a]);
            let off = rings * segments;
            faces.push([top, off + a, off + b]);
        }
        Self::from_parts_unchecked(vertices, faces, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_topology() {
        let s = TriangleMesh::icosphere(1.0, 3);
        assert_eq!(s.vertices().len(), 642);
        assert_eq!(s.faces().len(), 1280);
        assert_eq!(s.euler_characteristic(), 2);
        s.check_watertight().unwrap();
        TriangleMesh::new(s.vertices().to_vec(), s.faces().to_vec()).unwrap();
    }

    #[test]
    fn primitives_are_closed_and_outward() {
        for m in [
            TriangleMesh::icosphere(0.05, 2),
            TriangleMesh::cuboid(Vector3::new(0.06, 0.06, 0.12)),
            TriangleMesh::cylinder(0.03, 0.1, 24, 4),
        ] {
            m.check_watertight().unwrap();
            assert_eq!(m.euler_characteristic(), 2);
            let c = m.bounding_box().center();
            for f in 0..m.faces().len() {
                let [a, b, cc] = m.triangle(f);
                let centroid = Point3::from((a.coords + b.coords + cc.coords) / 3.0);
                assert!(m.face_normal(f).dot(&(centroid - c)) > 0.0, "face {f} inward");
            }
        }
    }

    #[test]
    fn degenerate_face_rejected() {
        let cube = TriangleMesh::cuboid(Vector3::repeat(1.0));
        let mut faces = cube.faces().to_vec();
        faces[0] = [0, 0, 1];
        assert!(matches!(
            TriangleMesh::new(cube.vertices().to_vec(), faces),
            Err(Error::DegenerateFace { face: 0, .. })
        ));
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let cube = TriangleMesh::cuboid(Vector3::repeat(1.0));
        let faces = cube.faces()[1..].to_vec();
        let m = TriangleMesh::new(cube.vertices().to_vec(), faces).unwrap();
        assert!(matches!(m.check_watertight(), Err(Error::NotWatertight(..))));
    }

    #[test]
    fn attribute_length_checked() {
        let cube = TriangleMesh::cuboid(Vector3::repeat(1.0));
        assert!(cube.clone().with_attribute(vec![0.0; 7]).is_err());
        assert!(cube.with_attribute(vec![0.0; 8]).is_ok());
    }
}
