//! Bounding-volume hierarchy over a triangle mesh: ray casts, crossing counts
//! and closest-point queries.

use nalgebra::{Point3, Vector3};

use super::mesh::{Aabb, TriangleMesh};
use super::pose::Ray;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub point: Point3<f64>,
    /// Unit face normal flipped to face against the ray direction.
    pub face_normal: Vector3<f64>,
    pub face: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ClosestPoint {
    pub point: Point3<f64>,
    pub distance: f64,
    pub face: usize,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Immutable BVH built once per mesh. Queries take `&self` and are thread-safe.
#[derive(Clone, Debug)]
pub struct MeshBvh {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl MeshBvh {
    pub fn build(mesh: TriangleMesh) -> Self {
        let n = mesh.faces().len();
        let centroids: Vec<Point3<f64>> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                Point3::from((a.coords + b.coords + c.coords) / 3.0)
            })
            .collect();
        let face_bounds: Vec<Aabb> = (0..n).map(|f| Aabb::from_points(&mesh.triangle(f))).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(&mut nodes, &mut order, 0, n, &centroids, &face_bounds);
        }
        Self { mesh, nodes, order }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// Nearest intersection with `t > 0`. Ties on distance go to the lower face index.
    pub fn raycast(&self, ray: &Ray) -> Option<RayHit> {
        self.raycast_within(ray, f64::INFINITY)
    }

    /// Like [`raycast`](Self::raycast) but ignores hits beyond `t_max`.
    pub fn raycast_within(&self, ray: &Ray, t_max: f64) -> Option<RayHit> {
        let mut best: Option<(f64, usize)> = None;
        let inv = ray.direction().map(|d| 1.0 / d);
        let mut stack = Vec::with_capacity(64);
        if !self.nodes.is_empty() {
            stack.push(0);
        }
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            let limit = best.map_or(t_max, |b| b.0);
            match slab(node.bounds(), ray, &inv) {
                Some(tmin) if tmin <= limit => {}
                _ => continue,
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[*start..*end] {
                        if let Some(t) = intersect(&self.mesh.triangle(f), ray) {
                            if t <= t_max && best.is_none_or(|(bt, bf)| t < bt || (t == bt && f < bf)) {
                                best = Some((t, f));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best.map(|(t, f)| self.make_hit(ray, t, f))
    }

    fn make_hit(&self, ray: &Ray, t: f64, face: usize) -> RayHit {
        let mut n = self.mesh.face_normal(face);
        if n.dot(ray.direction()) > 0.0 {
            n = -n;
        }
        RayHit {
            distance: t,
            point: ray.at(t),
            face_normal: n,
            face,
        }
    }

    /// Number of triangle crossings along the ray (`t > 0`).
    pub fn count_crossings(&self, ray: &Ray) -> usize {
        let inv = ray.direction().map(|d| 1.0 / d);
        let mut count = 0;
        let mut stack = Vec::with_capacity(64);
        if !self.nodes.is_empty() {
            stack.push(0);
        }
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if slab(node.bounds(), ray, &inv).is_none() {
                continue;
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    count += self.order[*start..*end]
                        .iter()
                        .filter(|&&f| intersect(&self.mesh.triangle(f), ray).is_some())
                        .count();
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        count
    }

    /// Closest point on the surface to `p`.
    pub fn closest_point(&self, p: &Point3<f64>) -> Option<ClosestPoint> {
        let mut best: Option<ClosestPoint> = None;
        let mut best_d2 = f64::INFINITY;
        let mut stack = Vec::with_capacity(64);
        if !self.nodes.is_empty() {
            stack.push(0);
        }
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.bounds().distance_squared(p) > best_d2 {
                continue;
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[*start..*end] {
                        let q = closest_on_triangle(p, &self.mesh.triangle(f));
                        let d2 = (q - p).norm_squared();
                        if d2 < best_d2 {
                            best_d2 = d2;
                            best = Some(ClosestPoint {
                                point: q,
                                distance: d2.sqrt(),
                                face: f,
                            });
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_squared(p);
                    let dr = self.nodes[*right].bounds().distance_squared(p);
                    if dl < dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    centroids: &[Point3<f64>],
    face_bounds: &[Aabb],
) -> usize {
    let bounds = order[start..end]
        .iter()
        .fold(Aabb::empty(), |b, &f| b.union(&face_bounds[f]));
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return idx;
    }
    let cb = Aabb::from_points(order[start..end].iter().map(|&f| &centroids[f]));
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build_node(nodes, order, start, mid, centroids, face_bounds);
    let right = build_node(nodes, order, mid, end, centroids, face_bounds);
    nodes[idx] = Node::Inner { bounds, left, right };
    idx
}

/// Entry distance of the ray into the box, if it hits at `t >= 0`.
fn slab(b: &Aabb, ray: &Ray, inv: &Vector3<f64>) -> Option<f64> {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        let o = ray.origin[i];
        if inv[i].is_infinite() {
            if o < b.min[i] || o > b.max[i] {
                return None;
            }
            continue;
        }
        let t1 = (b.min[i] - o) * inv[i];
        let t2 = (b.max[i] - o) * inv[i];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    // Small slack so hits on box faces are not lost to rounding.
    (tmin <= tmax * (1.0 + 1e-12) + 1e-15).then_some(tmin)
}

/// Möller–Trumbore intersection distance with `t > 0`.
/// Barycentric slack so rays through shared edges and vertices cannot slip
/// between neighbouring triangles.
const EDGE_EPS: f64 = 1e-12;

pub(crate) fn intersect(tri: &[Point3<f64>; 3], ray: &Ray) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let d = ray.direction();
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

/// Closest point on a triangle (Voronoi-region walk).
pub(crate) fn closest_on_triangle(p: &Point3<f64>, tri: &[Point3<f64>; 3]) -> Point3<f64> {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Brute-force nearest hit over all faces, same tie-break as [`MeshBvh::raycast`].
pub fn raycast_brute_force(mesh: &TriangleMesh, ray: &Ray) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for f in 0..mesh.faces().len() {
        if let Some(t) = intersect(&mesh.triangle(f), ray) {
            if best.is_none_or(|(bt, bf)| t < bt || (t == bt && f < bf)) {
                best = Some((t, f));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube() -> MeshBvh {
        MeshBvh::build(TriangleMesh::cuboid(Vector3::repeat(1.0)))
    }

    #[test]
    fn axis_aligned_hit_on_cube() {
        let bvh = unit_cube();
        let ray = Ray::new(Point3::new(0.0, 0.0, 5.0), -Vector3::z()).unwrap();
        let hit = bvh.raycast(&ray).unwrap();
        assert!((hit.distance - 4.5).abs() < 1e-12);
        assert!((hit.point - Point3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        assert!((hit.face_normal - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn ray_pointing_away_misses() {
        let bvh = unit_cube();
        let ray = Ray::new(Point3::new(0.0, 0.0, 5.0), Vector3::z()).unwrap();
        assert!(bvh.raycast(&ray).is_none());
    }

    #[test]
    fn sphere_hit_distance_within_tessellation() {
        let bvh = MeshBvh::build(TriangleMesh::icosphere(1.0, 3));
        let ray = Ray::new(Point3::new(0.0, 0.0, 3.0), -Vector3::z()).unwrap();
        let d = bvh.raycast(&ray).unwrap().distance;
        assert!((1.99..=2.01).contains(&d), "{d}");
    }

    #[test]
    fn hit_lies_on_ray_and_triangle_plane() {
        let bvh = MeshBvh::build(TriangleMesh::icosphere(1.0, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let o = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 3.0);
            let ray = Ray::new(o, Point3::origin() - o).unwrap();
            let Some(hit) = bvh.raycast(&ray) else { continue };
            let along = ray.at(hit.distance);
            assert!((along - hit.point).norm() < 1e-9);
            let [a, ..] = bvh.mesh().triangle(hit.face);
            let n = bvh.mesh().face_normal(hit.face);
            assert!((hit.point - a).dot(&n).abs() < 1e-9);
            assert!(hit.face_normal.dot(ray.direction()) <= 0.0);
        }
    }

    #[test]
    fn closest_point_on_cube_face() {
        let bvh = unit_cube();
        let cp = bvh.closest_point(&Point3::new(0.1, 0.2, 2.0)).unwrap();
        assert!((cp.distance - 1.5).abs() < 1e-12);
        let cp = bvh.closest_point(&Point3::new(1.5, 1.5, 1.5)).unwrap();
        assert!((cp.point - Point3::new(0.5, 0.5, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn crossing_count_parity() {
        let bvh = unit_cube();
        let d = Vector3::new(0.3, 0.7, 1.1);
        let inside = Ray::new(Point3::new(0.01, 0.02, 0.03), d).unwrap();
        let outside = Ray::new(Point3::new(-2.0, 0.02, 0.03), Vector3::new(1.0, 0.013, 0.021)).unwrap();
        assert_eq!(bvh.count_crossings(&inside) % 2, 1);
        assert_eq!(bvh.count_crossings(&outside), 2);
    }
}
