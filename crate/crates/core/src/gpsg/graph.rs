use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Point3, SymmetricEigen, Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, SurfaceSample};
use crate::kernel::{single_observation_conditional, FullGp, GpObservation, KernelParams};

/// Smallest eigenvalue kept in a factor covariance.
pub const COVARIANCE_FLOOR: f64 = 1e-10;

/// Query lattice layout and association radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// Nodes per axis (S).
    pub nodes_per_axis: usize,
    pub bbox: Aabb,
    /// Association radius as a fraction of `side_length`.
    pub radius_fraction: f64,
    /// Object side length (m) the radius is measured against.
    pub side_length: f64,
}

impl GridSpec {
    pub fn new(nodes_per_axis: usize, bbox: Aabb, radius_fraction: f64, side_length: f64) -> Result<Self> {
        if nodes_per_axis < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 nodes per axis".into()));
        }
        if bbox.is_degenerate() {
            return Err(Error::InvalidArgument("grid bbox is degenerate".into()));
        }
        if !(radius_fraction > 0.0 && radius_fraction < 1.0) {
            return Err(Error::InvalidArgument("radius_fraction must lie in (0, 1)".into()));
        }
        if !(side_length > 0.0) {
            return Err(Error::InvalidArgument("side_length must be positive".into()));
        }
        Ok(Self {
            nodes_per_axis,
            bbox,
            radius_fraction,
            side_length,
        })
    }

    /// Grid around an object's bounding box. The side length is the larger
    /// horizontal extent and the box is padded by one association radius.
    pub fn around_object(object: &Aabb, nodes_per_axis: usize, radius_fraction: f64) -> Result<Self> {
        let ext = object.extent();
        let side = ext.x.max(ext.y);
        let radius = radius_fraction * side;
        Self::new(nodes_per_axis, object.padded(radius), radius_fraction, side)
    }

    pub fn radius(&self) -> f64 {
        self.radius_fraction * self.side_length
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis.pow(3)
    }

    pub fn spacing(&self) -> Vector3<f64> {
        self.bbox.extent() / (self.nodes_per_axis - 1) as f64
    }

    /// Flat index with x fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let s = self.nodes_per_axis;
        i + s * (j + s * k)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let s = self.nodes_per_axis;
        [index % s, (index / s) % s, index / (s * s)]
    }

    pub fn position(&self, index: usize) -> Point3<f64> {
        let [i, j, k] = self.coords(index);
        let h = self.spacing();
        self.bbox.min + Vector3::new(i as f64 * h.x, j as f64 * h.y, k as f64 * h.z)
    }

    /// Node indices with `|x_node - p| <= radius`, ascending.
    pub fn nodes_within(&self, p: &Point3<f64>, radius: f64) -> Vec<usize> {
        let s = self.nodes_per_axis as i64;
        let h = self.spacing();
        let mut range = [(0i64, 0i64); 3];
        for a in 0..3 {
            let lo = ((p[a] - radius - self.bbox.min[a]) / h[a]).ceil() as i64;
            let hi = ((p[a] + radius - self.bbox.min[a]) / h[a]).floor() as i64;
            range[a] = (lo.max(0), hi.min(s - 1));
        }
        let r2 = radius * radius;
        let mut out = Vec::new();
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let idx = self.index(i as usize, j as usize, k as usize);
                    if (self.position(idx) - p).norm_squared() <= r2 {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }

    /// Trilinear interpolation of a per-node scalar; `p` is clamped into the box.
    pub fn trilinear(&self, values: &[f64], p: &Point3<f64>) -> f64 {
        let s = self.nodes_per_axis;
        let h = self.spacing();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = ((p[a] - self.bbox.min[a]) / h[a]).clamp(0.0, (s - 1) as f64);
            let i = (t.floor() as usize).min(s - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let (di, dj, dk) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
            acc += w * values[self.index(base[0] + di, base[1] + dj, base[2] + dk)];
        }
        acc
    }
}

/// Per-node Gaussian prior `||y - b||^2_{Sigma_b}`; a positive `phi` mean marks empty space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorSpec {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl PriorSpec {
    pub fn new(mean: Vector4<f64>, covariance: Matrix4<f64>) -> Result<Self> {
        if !(mean[0] > 0.0) {
            return Err(Error::InvalidArgument("prior phi mean must be positive".into()));
        }
        if (covariance - covariance.transpose()).abs().max() > 1e-12 * covariance.abs().max()
            || covariance.cholesky().is_none()
        {
            return Err(Error::InvalidArgument("prior covariance must be symmetric PD".into()));
        }
        Ok(Self { mean, covariance })
    }

    /// `b = (R, 0, 0, 0)`, `Sigma_b = diag(R^3, 6R, 6R, 6R)`.
    pub fn from_kernel(params: &KernelParams) -> Self {
        Self {
            mean: Vector4::new(params.support, 0.0, 0.0, 0.0),
            covariance: params.prior_block().0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceTag {
    Depth,
    Tactile,
    Base,
    Prior,
}

impl SourceTag {
    pub fn code(self) -> u8 {
        match self {
            SourceTag::Depth => 0,
            SourceTag::Tactile => 1,
            SourceTag::Base => 2,
            SourceTag::Prior => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => SourceTag::Depth,
            1 => SourceTag::Tactile,
            2 => SourceTag::Base,
            3 => SourceTag::Prior,
            _ => return None,
        })
    }
}

/// Unary potential on one node from conditioning on one measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFactor {
    pub node: usize,
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    /// `covariance^-1`, from the same floored eigendecomposition.
    pub information: Matrix4<f64>,
    pub source: SourceTag,
    pub timestep: u32,
}

/// Conditional of the node state on a single surface sample, covariance
/// symmetrized and eigenvalue-floored at [`COVARIANCE_FLOOR`].
pub fn make_factor(
    sample: &SurfaceSample,
    node: usize,
    node_position: &Point3<f64>,
    params: &KernelParams,
    source: SourceTag,
    timestep: u32,
) -> GaussianFactor {
    let (mean, cov) = single_observation_conditional(&GpObservation::from(sample), node_position, params);
    let eig = SymmetricEigen::new(cov);
    let vals = eig.eigenvalues.map(|l| l.max(COVARIANCE_FLOOR));
    let v = eig.eigenvectors;
    let covariance = v * Matrix4::from_diagonal(&vals) * v.transpose();
    let information = v * Matrix4::from_diagonal(&vals.map(|l| 1.0 / l)) * v.transpose();
    GaussianFactor {
        node,
        mean,
        covariance: (covariance + covariance.transpose()) * 0.5,
        information: (information + information.transpose()) * 0.5,
        source,
        timestep,
    }
}

/// One lattice node in information form.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryNode {
    pub position: Point3<f64>,
    pub eta: Vector4<f64>,
    pub lambda: Matrix4<f64>,
    pub factor_count: usize,
    pub touched: bool,
    mean: Vector4<f64>,
    covariance: Matrix4<f64>,
}

impl QueryNode {
    pub fn mean(&self) -> &Vector4<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix4<f64> {
        &self.covariance
    }

    fn fuse(&mut self, f: &GaussianFactor) {
        self.eta += f.information * f.mean;
        self.lambda += f.information;
        self.factor_count += 1;
    }

    fn solve(&mut self) {
        let lambda = (self.lambda + self.lambda.transpose()) * 0.5;
        let chol = lambda
            .cholesky()
            .expect("node information matrix is PD once the prior is installed");
        let cov = chol.inverse();
        self.covariance = (cov + cov.transpose()) * 0.5;
        self.mean = chol.solve(&self.eta);
    }
}

/// A surface sample as stored in the measurement log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoggedSample {
    pub sample: SurfaceSample,
    pub source: SourceTag,
    pub timestep: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateReport {
    pub factors_added: usize,
    pub nodes_dirtied: usize,
    pub samples_dropped: usize,
    pub wall_time: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeSelection {
    All,
    DirtyOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodePosterior {
    pub index: usize,
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct QueryResult {
    /// Nodes whose 4x4 system was re-solved on this call.
    pub solves: usize,
    pub wall_time: Duration,
    pub posteriors: Vec<NodePosterior>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DivergenceReport {
    pub nodes_compared: usize,
    pub max_abs_phi: f64,
    pub mean_abs_phi: f64,
}

/// The S^3 lattice of query nodes with their fused unary factors.
#[derive(Clone, Debug)]
pub struct GpsgGraph {
    spec: GridSpec,
    prior: PriorSpec,
    kernel: KernelParams,
    nodes: Vec<QueryNode>,
    log: Vec<LoggedSample>,
    dirty: BTreeSet<usize>,
    total_factors: usize,
    last_update: UpdateReport,
}

impl GpsgGraph {
    /// Every node starts from the prior alone: `eta = Sigma_b^-1 b`, `Lambda = Sigma_b^-1`.
    pub fn new(spec: GridSpec, prior: PriorSpec, kernel: KernelParams) -> Self {
        let lambda = prior
            .covariance
            .try_inverse()
            .expect("PriorSpec guarantees an invertible covariance");
        let lambda = (lambda + lambda.transpose()) * 0.5;
        let eta = lambda * prior.mean;
        let nodes = (0..spec.node_count())
            .map(|i| QueryNode {
                position: spec.position(i),
                eta,
                lambda,
                factor_count: 0,
                touched: false,
                mean: prior.mean,
                covariance: prior.covariance,
            })
            .collect();
        Self {
            spec,
            prior,
            kernel,
            nodes,
            log: Vec::new(),
            dirty: BTreeSet::new(),
            total_factors: 0,
            last_update: UpdateReport::default(),
        }
    }

    pub(crate) fn from_parts(
        spec: GridSpec,
        prior: PriorSpec,
        kernel: KernelParams,
        nodes: Vec<(Vector4<f64>, Matrix4<f64>, usize, bool)>,
        log: Vec<LoggedSample>,
    ) -> Self {
        let mut g = Self::new(spec, prior, kernel);
        for (node, (eta, lambda, count, touched)) in g.nodes.iter_mut().zip(nodes) {
            node.eta = eta;
            node.lambda = lambda;
            node.factor_count = count;
            node.touched = touched;
            if count > 0 {
                node.solve();
            }
        }
        g.total_factors = g.nodes.iter().map(|n| n.factor_count).sum();
        g.log = log;
        g
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn radius(&self) -> f64 {
        self.spec.radius()
    }

    pub fn nodes(&self) -> &[QueryNode] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &QueryNode {
        &self.nodes[index]
    }

    pub fn measurements(&self) -> &[LoggedSample] {
        &self.log
    }

    pub fn dirty_count(&self) -> usize {
        self.dirty.len()
    }

    pub fn total_factors(&self) -> usize {
        self.total_factors
    }

    pub fn last_update(&self) -> &UpdateReport {
        &self.last_update
    }

    /// Factors for one sample at every node within the association radius.
    pub fn factors_for(&self, sample: &SurfaceSample, source: SourceTag, timestep: u32) -> Vec<GaussianFactor> {
        self.spec
            .nodes_within(&sample.position, self.radius())
            .into_iter()
            .map(|j| make_factor(sample, j, &self.nodes[j].position, &self.kernel, source, timestep))
            .collect()
    }

    /// Associates each sample with the nodes inside the radius and fuses the
    /// resulting factors. Samples outside the grid box are dropped.
    pub fn add_measurements(&mut self, samples: &[SurfaceSample], source: SourceTag, timestep: u32) -> UpdateReport {
        let start = Instant::now();
        let (inside, outside): (Vec<&SurfaceSample>, Vec<&SurfaceSample>) =
            samples.iter().partition(|s| self.spec.bbox.contains(&s.position));
        if !outside.is_empty() {
            log::debug!("dropped {} samples outside the grid box", outside.len());
        }
        let factors: Vec<Vec<GaussianFactor>> = inside
            .par_iter()
            .map(|s| self.factors_for(s, source, timestep))
            .collect();
        let mut report = UpdateReport {
            samples_dropped: outside.len(),
            ..Default::default()
        };
        for f in factors.iter().flatten() {
            self.fuse_factor(f);
            report.factors_added += 1;
        }
        let mut touched_now = BTreeSet::new();
        for f in factors.iter().flatten() {
            touched_now.insert(f.node);
        }
        report.nodes_dirtied = touched_now.len();
        self.log.extend(inside.iter().map(|s| LoggedSample {
            sample: **s,
            source,
            timestep,
        }));
        report.wall_time = start.elapsed();
        self.last_update = report;
        report
    }

    /// Fuses one factor into its node and marks it dirty.
    pub fn fuse_factor(&mut self, f: &GaussianFactor) {
        let node = &mut self.nodes[f.node];
        node.fuse(f);
        node.touched = true;
        self.dirty.insert(f.node);
        self.total_factors += 1;
    }

    /// Re-solves dirty nodes and returns posteriors for the selection.
    pub fn query(&mut self, selection: NodeSelection) -> QueryResult {
        let start = Instant::now();
        let dirty: Vec<usize> = std::mem::take(&mut self.dirty).into_iter().collect();
        let solved: Vec<(usize, Vector4<f64>, Matrix4<f64>)> = dirty
            .par_iter()
            .map(|&j| {
                let mut n = self.nodes[j].clone();
                n.solve();
                (j, n.mean, n.covariance)
            })
            .collect();
        for &(j, m, c) in &solved {
            self.nodes[j].mean = m;
            self.nodes[j].covariance = c;
        }
        let posteriors = match selection {
            NodeSelection::DirtyOnly => solved
                .iter()
                .map(|&(index, mean, covariance)| NodePosterior {
                    index,
                    mean,
                    covariance,
                })
                .collect(),
            NodeSelection::All => self
                .nodes
                .iter()
                .enumerate()
                .map(|(index, n)| NodePosterior {
                    index,
                    mean: n.mean,
                    covariance: n.covariance,
                })
                .collect(),
        };
        QueryResult {
            solves: solved.len(),
            wall_time: start.elapsed(),
            posteriors,
        }
    }

    /// Per-node cached `phi` mean and variance. Call [`Self::query`] first to refresh.
    pub fn phi_field(&self) -> (Vec<f64>, Vec<f64>) {
        self.nodes
            .iter()
            .map(|n| (n.mean[0], n.covariance[(0, 0)].max(0.0)))
            .unzip()
    }

    /// Compares node posteriors with the dense GP on the same observations, over
    /// the nodes within the radius of at least one observation.
    pub fn compare_to_full_gp(&mut self, observations: &[GpObservation], cap: usize) -> Result<DivergenceReport> {
        if observations.len() > cap {
            return Err(Error::CapExceeded {
                count: observations.len(),
                cap,
            });
        }
        self.query(NodeSelection::DirtyOnly);
        let mut support = BTreeSet::new();
        for o in observations {
            support.extend(self.spec.nodes_within(&o.position, self.radius()));
        }
        if support.is_empty() {
            return Ok(DivergenceReport::default());
        }
        let gp = FullGp::fit(observations, &self.kernel, cap)?;
        let diffs: Vec<f64> = support
            .iter()
            .map(|&j| (gp.mean(&self.nodes[j].position)[0] - self.nodes[j].mean[0]).abs())
            .collect();
        Ok(DivergenceReport {
            nodes_compared: diffs.len(),
            max_abs_phi: diffs.iter().cloned().fold(0.0, f64::max),
            mean_abs_phi: diffs.iter().sum::<f64>() / diffs.len() as f64,
        })
    }
}
