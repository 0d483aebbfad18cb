//! Thin-plate covariance over SDF value and gradient, and the dense GP posterior.
//!
//! The scalar kernel is `k(d) = 2d^3 - 3Rd^2 + R^3` with `d = |x - x'|`. A
//! [`KernelBlock`] holds the 4x4 covariance between `[phi, dphi/dx, dphi/dy, dphi/dz]`
//! at two points; derivative entries are analytic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix4, Point3, Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::SurfaceSample;

/// Default observation cap for the dense posterior.
pub const DEFAULT_FULL_GP_CAP: usize = 2_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    /// Support scale R (m); should bound the pairwise distances of interest.
    pub support: f64,
    /// Noise used when an observation does not carry its own (m).
    pub sigma_n_default: f64,
}

impl KernelParams {
    pub fn new(support: f64, sigma_n_default: f64) -> Result<Self> {
        if !(support > 0.0) || !(sigma_n_default > 0.0) {
            return Err(Error::InvalidArgument(
                "kernel support and default noise must be positive".into(),
            ));
        }
        Ok(Self {
            support,
            sigma_n_default,
        })
    }

    /// Scalar thin-plate covariance at separation `d`.
    pub fn scalar(&self, d: f64) -> f64 {
        let r = self.support;
        2.0 * d * d * d - 3.0 * r * d * d + r * r * r
    }

    /// Covariance at zero separation: `diag(R^3, 6R, 6R, 6R)`.
    pub fn prior_block(&self) -> KernelBlock {
        let r = self.support;
        KernelBlock(Matrix4::from_diagonal(&Vector4::new(r * r * r, 6.0 * r, 6.0 * r, 6.0 * r)))
    }
}

/// 4x4 covariance between `[phi, grad phi]` at two points, ordered `[value, x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelBlock(pub Matrix4<f64>);

impl KernelBlock {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }
}

/// Covariance block `cov([phi, grad phi](xi), [phi, grad phi](xj))`.
pub fn kernel_block(xi: &Point3<f64>, xj: &Point3<f64>, params: &KernelParams) -> KernelBlock {
    let rr = params.support;
    let r: Vector3<f64> = xi - xj;
    let d = r.norm();
    if d == 0.0 {
        return params.prior_block();
    }
    let mut m = Matrix4::zeros();
    m[(0, 0)] = params.scalar(d);
    let g = 6.0 * (d - rr);
    for a in 0..3 {
        // d k / d xi_a and d k / d xj_a
        m[(a + 1, 0)] = g * r[a];
        m[(0, a + 1)] = -g * r[a];
        for b in 0..3 {
            let delta = if a == b { 1.0 } else { 0.0 };
            m[(a + 1, b + 1)] = -6.0 * r[a] * r[b] / d - g * delta;
        }
    }
    KernelBlock(m)
}

/// A GP training point: position and 4-vector target `(phi, normal)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpObservation {
    pub position: Point3<f64>,
    pub target: Vector4<f64>,
    pub sigma_n: f64,
}

impl GpObservation {
    /// Surface observation: `phi = 0`, gradient equal to the unit normal.
    pub fn surface(position: Point3<f64>, normal: Vector3<f64>, sigma_n: f64) -> Result<Self> {
        if !(sigma_n >= 0.0) {
            return Err(Error::InvalidArgument("sigma_n must be non-negative".into()));
        }
        let n = normal.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("normal has norm {n}, expected 1")));
        }
        Ok(Self {
            position,
            target: Vector4::new(0.0, normal.x, normal.y, normal.z),
            sigma_n,
        })
    }
}

impl From<&SurfaceSample> for GpObservation {
    fn from(s: &SurfaceSample) -> Self {
        Self {
            position: s.position,
            target: Vector4::new(0.0, s.normal.x, s.normal.y, s.normal.z),
            sigma_n: s.noise_sigma,
        }
    }
}

/// Posterior of the query `[phi, grad phi]` given one observation:
/// `mu = k_qi (k_ii + s^2 I)^-1 y`, `Sigma = k_qq - k_qi (k_ii + s^2 I)^-1 k_iq`.
///
/// `k_ii + s^2 I` is diagonal, so the inverse is exact and cheap.
pub fn single_observation_conditional(
    obs: &GpObservation,
    query: &Point3<f64>,
    params: &KernelParams,
) -> (Vector4<f64>, Matrix4<f64>) {
    let k_qi = kernel_block(query, &obs.position, params).0;
    let noise = obs.sigma_n * obs.sigma_n;
    let prior = params.prior_block().0;
    let inv = Vector4::from_fn(|i, _| 1.0 / (prior[(i, i)] + noise));
    let gain = Matrix4::from_fn(|r, c| k_qi[(r, c)] * inv[c]);
    let mean = gain * obs.target;
    let mut cov = prior - gain * k_qi.transpose();
    cov = (cov + cov.transpose()) * 0.5;
    (mean, cov)
}

/// Dense GP conditioned on a set of observations, factorized once.
pub struct FullGp {
    positions: Vec<Point3<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    params: KernelParams,
}

impl FullGp {
    pub fn fit(observations: &[GpObservation], params: &KernelParams, cap: usize) -> Result<Self> {
        let n = observations.len();
        if n > cap {
            return Err(Error::CapExceeded { count: n, cap });
        }
        let mut k = DMatrix::zeros(4 * n, 4 * n);
        for i in 0..n {
            for j in i..n {
                let b = kernel_block(&observations[i].position, &observations[j].position, params).0;
                k.fixed_view_mut::<4, 4>(4 * i, 4 * j).copy_from(&b);
                if i != j {
                    k.fixed_view_mut::<4, 4>(4 * j, 4 * i).copy_from(&b.transpose());
                }
            }
            let s2 = observations[i].sigma_n * observations[i].sigma_n;
            for c in 0..4 {
                k[(4 * i + c, 4 * i + c)] += s2;
            }
        }
        let max_diag = k.diagonal().max();
        let chol = Cholesky::new(k).ok_or(Error::NotPositiveDefinite)?;
        // Pivots that collapse to rounding level mean the matrix is singular.
        let min_pivot = chol.l_dirty().diagonal().map(|l| l * l).min();
        if n > 0 && min_pivot <= 1e-14 * max_diag {
            return Err(Error::NotPositiveDefinite);
        }
        let mut y = DVector::zeros(4 * n);
        for (i, o) in observations.iter().enumerate() {
            y.fixed_rows_mut::<4>(4 * i).copy_from(&o.target);
        }
        let alpha = chol.solve(&y);
        Ok(Self {
            positions: observations.iter().map(|o| o.position).collect(),
            chol,
            alpha,
            params: *params,
        })
    }

    fn cross(&self, query: &Point3<f64>) -> DMatrix<f64> {
        let n = self.positions.len();
        let mut ks = DMatrix::zeros(4 * n, 4);
        for (i, p) in self.positions.iter().enumerate() {
            ks.fixed_view_mut::<4, 4>(4 * i, 0)
                .copy_from(&kernel_block(p, query, &self.params).0);
        }
        ks
    }

    pub fn mean(&self, query: &Point3<f64>) -> Vector4<f64> {
        if self.positions.is_empty() {
            return Vector4::zeros();
        }
        let m = self.cross(query).tr_mul(&self.alpha);
        Vector4::new(m[0], m[1], m[2], m[3])
    }

    pub fn posterior(&self, query: &Point3<f64>) -> (Vector4<f64>, Matrix4<f64>) {
        let prior = self.params.prior_block().0;
        if self.positions.is_empty() {
            return (Vector4::zeros(), prior);
        }
        let ks = self.cross(query);
        let m = ks.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("Cholesky factor has a positive diagonal");
        let red = v.tr_mul(&v);
        let mut cov = Matrix4::from_fn(|r, c| prior[(r, c)] - red[(r, c)]);
        cov = (cov + cov.transpose()) * 0.5;
        (Vector4::new(m[0], m[1], m[2], m[3]), cov)
    }
}

/// Dense posterior mean and covariance at each query.
pub fn full_gp_posterior(
    observations: &[GpObservation],
    queries: &[Point3<f64>],
    params: &KernelParams,
    cap: usize,
) -> Result<Vec<(Vector4<f64>, Matrix4<f64>)>> {
    let gp = FullGp::fit(observations, params, cap)?;
    Ok(queries.par_iter().map(|q| gp.posterior(q)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(r: f64) -> KernelParams {
        KernelParams::new(r, 1e-3).unwrap()
    }

    #[test]
    fn self_block_is_diagonal_prior() {
        let p = params(1.0);
        let x = Point3::new(0.3, -0.1, 0.2);
        let b = kernel_block(&x, &x, &p).0;
        assert_eq!(b, Matrix4::from_diagonal(&Vector4::new(1.0, 6.0, 6.0, 6.0)));
    }

    #[test]
    fn value_vanishes_at_support_edge() {
        let p = params(1.0);
        let b = kernel_block(&Point3::origin(), &Point3::new(0.0, 1.0, 0.0), &p).0;
        assert!(b[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn block_transpose_symmetry() {
        let p = params(0.3);
        let a = Point3::new(0.01, 0.05, -0.02);
        let b = Point3::new(-0.04, 0.02, 0.07);
        let ab = kernel_block(&a, &b, &p).0;
        let ba = kernel_block(&b, &a, &p).0;
        assert!((ab - ba.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn prior_posterior_without_observations() {
        let p = params(0.2);
        let out = full_gp_posterior(&[], &[Point3::new(0.1, 0.0, 0.0)], &p, 10).unwrap();
        assert_eq!(out[0].0, Vector4::zeros());
        assert_eq!(out[0].1, p.prior_block().0);
    }

    #[test]
    fn interpolation_limit() {
        let p = params(0.2);
        let obs = GpObservation::surface(Point3::origin(), Vector3::z(), 1e-7).unwrap();
        let (m, c) = full_gp_posterior(&[obs], &[Point3::origin()], &p, 10).unwrap()[0];
        assert!((m - obs.target).abs().max() < 1e-9);
        assert!(c.abs().max() < 1e-9);
    }

    #[test]
    fn single_observation_matches_dense_path() {
        let p = params(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = Vector3::new(rng.random(), rng.random(), rng.random::<f64>() - 0.5).normalize();
            let obs = GpObservation::surface(
                Point3::new(rng.random_range(-0.1..0.1), 0.0, rng.random_range(-0.1..0.1)),
                n,
                rng.random_range(1e-3..1e-2),
            )
            .unwrap();
            let q = Point3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.02);
            let (m1, c1) = single_observation_conditional(&obs, &q, &p);
            let (m2, c2) = full_gp_posterior(&[obs], &[q], &p, 10).unwrap()[0];
            assert!((m1 - m2).abs().max() < 1e-12);
            assert!((c1 - c2).abs().max() < 1e-12);
        }
    }

    #[test]
    fn duplicate_noiseless_points_fail() {
        let p = params(0.2);
        let o = GpObservation::surface(Point3::origin(), Vector3::z(), 0.0).unwrap();
        assert!(matches!(
            FullGp::fit(&[o, o], &p, 10),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn cap_is_enforced() {
        let p = params(0.2);
        let o = GpObservation::surface(Point3::origin(), Vector3::z(), 0.01).unwrap();
        assert!(matches!(
            full_gp_posterior(&[o; 3], &[], &p, 2),
            Err(Error::CapExceeded { count: 3, cap: 2 })
        ));
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> Vec<GpObservation> {
        (0..n)
            .map(|_| {
                let pos = Point3::new(
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                );
                let nrm = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                GpObservation::surface(pos, nrm, rng.random_range(5e-3..2e-2)).unwrap()
            })
            .collect()
    }

    #[test]
    fn posterior_covariance_is_psd_and_monotone() {
        let p = params(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let obs = random_instance(&mut rng, 12);
            let queries: Vec<_> = (0..8)
                .map(|_| Point3::new(rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08)))
                .collect();
            let fewer = full_gp_posterior(&obs[..11], &queries, &p, 100).unwrap();
            let more = full_gp_posterior(&obs, &queries, &p, 100).unwrap();
            for ((_, c_few), (_, c_all)) in fewer.iter().zip(&more) {
                let eig = SymmetricEigen::new(*c_all).eigenvalues;
                assert!(eig.min() >= -1e-10, "{eig}");
                // Loewner order: c_few - c_all is PSD.
                let diff = SymmetricEigen::new(c_few - c_all).eigenvalues;
                assert!(diff.min() >= -1e-10, "{diff}");
            }
        }
    }

    #[test]
    fn posterior_mean_gradient_matches_finite_differences() {
        let p = params(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs = random_instance(&mut rng, 10);
        let gp = FullGp::fit(&obs, &p, 100).unwrap();
        let h = 1e-6;
        for _ in 0..20 {
            let q = Point3::new(rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06));
            let m = gp.mean(&q);
            for a in 0..3 {
                let mut e = Vector3::zeros();
                e[a] = h;
                let fd = (gp.mean(&(q + e))[0] - gp.mean(&(q - e))[0]) / (2.0 * h);
                let scale = m.fixed_rows::<3>(1).norm().max(1e-3);
                assert!((fd - m[a + 1]).abs() <= 0.01 * scale, "axis {a}: fd {fd} vs {}", m[a + 1]);
            }
        }
    }
}
