//! Static 3-D k-d tree for nearest-neighbour and radius queries.

use nalgebra::Point3;

const LEAF: usize = 8;

#[derive(Clone, Debug)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    index: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        let mut index: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut index, 0, points.len(), &mut nodes);
        }
        Self { points, index, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Index and squared distance of the nearest stored point.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    pub fn nearest_distance(&self, q: &Point3<f64>) -> Option<f64> {
        self.nearest(q).map(|(_, d2)| d2.sqrt())
    }

    /// Whether any stored point lies within `radius` (inclusive) of `q`.
    pub fn any_within(&self, q: &Point3<f64>, radius: f64) -> bool {
        self.nearest(q).is_some_and(|(_, d2)| d2 <= radius * radius)
    }

    /// Indices of all stored points within `radius` of `q`, ascending.
    pub fn within(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.collect(0, q, radius * radius, radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn search(&self, node: usize, q: &Point3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.index[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }

    fn collect(&self, node: usize, q: &Point3<f64>, r2: f64, r: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                out.extend(
                    self.index[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
                );
            }
            KdNode::Split { axis, value, left, right } => {
                if q[axis] - r <= value {
                    self.collect(left, q, r2, r, out);
                }
                if q[axis] + r >= value {
                    self.collect(right, q, r2, r, out);
                }
            }
        }
    }
}

fn build(
    points: &[Point3<f64>],
    index: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<KdNode>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &index[start..end] {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = (start + end) / 2;
    index[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[index[mid]][axis];
    nodes.push(KdNode::Leaf { start, end });
    // Left holds coordinates <= value, right >= value.
    let left = build(points, index, start, mid, nodes);
    let right = build(points, index, mid, end, nodes);
    nodes[id] = KdNode::Split { axis, value, left, right };
    id
}
