use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, MeshBvh, Ray, RigidPose, SurfaceSample};

/// Default gel press into the surface (m).
pub const DEFAULT_PRESS_DEPTH: f64 = 5e-4;
/// Candidate surface points drawn per requested touch in uniform mode.
const CANDIDATES_PER_TOUCH: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyMode {
    /// Farthest-point spread over area-weighted surface samples.
    Uniform,
    /// Horizontal approaches at `angles` azimuths for each of `heights` levels.
    Ring { angles: usize, heights: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplorationPolicy {
    pub mode: PolicyMode,
    pub touch_count: usize,
    pub seed: u64,
}

impl ExplorationPolicy {
    pub fn uniform(touch_count: usize, seed: u64) -> Self {
        Self {
            mode: PolicyMode::Uniform,
            touch_count,
            seed,
        }
    }

    pub fn ring(angles: usize, heights: usize, seed: u64) -> Self {
        Self {
            mode: PolicyMode::Ring { angles, heights },
            touch_count: angles * heights,
            seed,
        }
    }
}

/// Sensor pose pressing `press` into the surface at `point` with outward `normal`.
pub fn pose_at(point: &Point3<f64>, normal: &Vector3<f64>, press: f64) -> RigidPose {
    let n = normal.normalize();
    RigidPose::looking_along(point - n * press, -n)
}

/// Sensor poses normal to the surface, in exploration order.
/// Ring approaches that miss the mesh are skipped.
pub fn sample_sensor_poses(bvh: &MeshBvh, policy: &ExplorationPolicy, press: f64) -> Result<Vec<RigidPose>> {
    let mesh = bvh.mesh();
    mesh.check_watertight()?;
    match policy.mode {
        PolicyMode::Uniform => {
            if policy.touch_count == 0 {
                return Ok(Vec::new());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
            let n_cand = (policy.touch_count * CANDIDATES_PER_TOUCH).max(2000);
            let cand = mesh.sample_surface_with_faces(n_cand, &mut rng);
            let mut chosen = Vec::with_capacity(policy.touch_count);
            let mut gap = vec![f64::INFINITY; cand.len()];
            let mut next = 0;
            while chosen.len() < policy.touch_count.min(cand.len()) {
                chosen.push(next);
                let p = cand[next].0;
                for (g, (q, _)) in gap.iter_mut().zip(&cand) {
                    *g = g.min((q - p).norm_squared());
                }
                next = (0..cand.len())
                    .max_by(|&a, &b| gap[a].total_cmp(&gap[b]).then(b.cmp(&a)))
                    .expect("candidates exist");
            }
            Ok(chosen
                .into_iter()
                .map(|i| {
                    let (p, f) = cand[i];
                    pose_at(&p, &mesh.face_normal(f), press)
                })
                .collect())
        }
        PolicyMode::Ring { angles, heights } => {
            if angles == 0 || heights == 0 {
                return Err(Error::InvalidArgument("ring policy needs angles and heights".into()));
            }
            let bb = mesh.bounding_box();
            let c = bb.center();
            let reach = 2.0 * bb.diagonal();
            let mut poses = Vec::with_capacity(angles * heights);
            for k in 0..heights {
                let z = bb.min.z + (k as f64 + 0.5) / heights as f64 * bb.extent().z;
                for a in 0..angles {
                    let theta = std::f64::consts::TAU * a as f64 / angles as f64;
                    let out = Vector3::new(theta.cos(), theta.sin(), 0.0);
                    let ray = Ray::new(Point3::new(c.x, c.y, z) + out * reach, -out)?;
                    match bvh.raycast(&ray) {
                        Some(hit) => poses.push(pose_at(&hit.point, &hit.face_normal, press)),
                        None => log::warn!("ring approach at height {k}, angle {a} missed the object"),
                    }
                }
            }
            Ok(poses)
        }
    }
}

/// Poses whose origin lies within `tolerance` of the lowest pose height.
pub fn lowest_ring(poses: &[RigidPose], tolerance: f64) -> Vec<RigidPose> {
    let Some(low) = poses.iter().map(|p| p.origin().z).min_by(f64::total_cmp) else {
        return Vec::new();
    };
    poses.iter().copied().filter(|p| p.origin().z <= low + tolerance).collect()
}

/// Synthetic support samples on the table plane below the object: each pose
/// origin dropped to the box floor and clamped into its footprint, facing down.
pub fn hallucinate_base(object: &Aabb, poses: &[RigidPose], sigma: f64) -> Result<Vec<SurfaceSample>> {
    poses
        .iter()
        .map(|pose| {
            let o = pose.origin();
            let p = Point3::new(
                o.x.clamp(object.min.x, object.max.x),
                o.y.clamp(object.min.y, object.max.y),
                object.min.z,
            );
            SurfaceSample::new(p, -Vector3::z(), sigma)
        })
        .collect()
}
