use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::decimate::voxel_decimate;
use super::SampleSet;
use crate::error::{Error, Result};
use crate::geometry::{MeshBvh, Ray, RigidPose, SurfaceSample};

/// Pixels shallower than this are out of contact (m).
pub const CONTACT_THRESHOLD: f64 = 1e-5;
/// Ray start distance behind the gel plane (m).
const RAY_STANDOFF: f64 = 0.01;

/// Gel geometry. The sensing patch lies in the sensor `xy` plane centred on
/// the pose origin; the sensor `z` axis points into the object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorSpec {
    pub width_px: usize,
    pub height_px: usize,
    pub patch_width: f64,
    pub patch_height: f64,
    pub max_depth: f64,
}

impl Default for SensorSpec {
    /// 640x480 pixels over a 4:3 patch of 2.66 cm², 1 mm gel.
    fn default() -> Self {
        let area = 2.66e-4;
        Self {
            width_px: 640,
            height_px: 480,
            patch_width: (area * 4.0 / 3.0f64).sqrt(),
            patch_height: (area * 3.0 / 4.0f64).sqrt(),
            max_depth: 1e-3,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width_px < 2 || self.height_px < 2 {
            return Err(Error::InvalidArgument("sensor needs at least 2x2 pixels".into()));
        }
        if !(self.patch_width > 0.0 && self.patch_height > 0.0 && self.max_depth > 0.0) {
            return Err(Error::InvalidArgument("sensor dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn pixel_pitch(&self) -> (f64, f64) {
        (
            self.patch_width / self.width_px as f64,
            self.patch_height / self.height_px as f64,
        )
    }

    /// Sensor-frame `(x, y)` of a pixel centre.
    pub fn pixel_xy(&self, u: usize, v: usize) -> (f64, f64) {
        let (dx, dy) = self.pixel_pitch();
        (
            (u as f64 + 0.5) * dx - 0.5 * self.patch_width,
            (v as f64 + 0.5) * dy - 0.5 * self.patch_height,
        )
    }
}

/// One touch: gel penetration per pixel and the derived contact mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileObservation {
    pub pose: RigidPose,
    pub width: usize,
    pub height: usize,
    /// Row-major penetration depths (m).
    pub heightmap: Vec<f32>,
    pub contact_mask: Vec<bool>,
    pub timestep: u32,
}

impl TactileObservation {
    /// Builds an observation, deriving the mask from the heightmap.
    pub fn new(pose: RigidPose, width: usize, height: usize, heightmap: Vec<f32>, timestep: u32) -> Result<Self> {
        if heightmap.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "heightmap has {} values, expected {width}x{height}",
                heightmap.len()
            )));
        }
        if heightmap.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::InvalidArgument("heightmap values must be finite and non-negative".into()));
        }
        let contact_mask = heightmap.iter().map(|&h| f64::from(h) > CONTACT_THRESHOLD).collect();
        Ok(Self {
            pose,
            width,
            height,
            heightmap,
            contact_mask,
            timestep,
        })
    }

    pub fn contact_count(&self) -> usize {
        self.contact_mask.iter().filter(|&&c| c).count()
    }

    fn h(&self, u: usize, v: usize) -> f64 {
        f64::from(self.heightmap[v * self.width + u])
    }
}

/// Ray-casts the gel patch against the mesh. Each pixel ray starts behind the
/// gel plane and runs along sensor `z`; penetration is how far the surface
/// sits behind the plane, clamped to the gel depth. Gaussian noise of
/// `noise_sigma` is added to pixels in contact, then re-clamped.
pub fn render_tactile<R: Rng + ?Sized>(
    bvh: &MeshBvh,
    pose: &RigidPose,
    spec: &SensorSpec,
    noise_sigma: f64,
    timestep: u32,
    rng: &mut R,
) -> Result<TactileObservation> {
    spec.validate()?;
    let z = pose.axis_z();
    let mut depth: Vec<f64> = (0..spec.height_px)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..spec.width_px).map(move |u| {
                let (x, y) = spec.pixel_xy(u, v);
                let start = pose.transform_point(&Point3::new(x, y, -RAY_STANDOFF));
                let ray = Ray::new(start, z).expect("sensor axis is unit");
                match bvh.raycast_within(&ray, RAY_STANDOFF) {
                    Some(hit) => (RAY_STANDOFF - hit.distance).clamp(0.0, spec.max_depth),
                    None => 0.0,
                }
            })
        })
        .collect();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::InvalidArgument(format!("pixel noise: {e}")))?;
        for d in depth.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + normal.sample(rng)).clamp(0.0, spec.max_depth);
        }
    }
    let obs = TactileObservation::new(
        *pose,
        spec.width_px,
        spec.height_px,
        depth.into_iter().map(|d| d as f32).collect(),
        timestep,
    )?;
    if obs.contact_count() == 0 {
        return Err(Error::ContactMiss);
    }
    Ok(obs)
}

/// Decimation and noise settings for turning observations into samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub budget: usize,
    /// Noise level attached to every emitted sample (m).
    pub sigma: f64,
    /// Perturb emitted positions with isotropic Gaussian noise of `sigma`.
    pub perturb: bool,
}

/// Back-projects contact pixels into world points with outward normals from
/// heightmap gradients, then decimates to the budget. Saturated pixels are
/// skipped since their true surface lies beyond the gel.
pub fn tactile_to_samples<R: Rng + ?Sized>(
    obs: &TactileObservation,
    spec: &SensorSpec,
    config: &SampleConfig,
    rng: &mut R,
) -> Result<SampleSet> {
    let (w, hgt) = (obs.width, obs.height);
    if w != spec.width_px || hgt != spec.height_px {
        return Err(Error::InvalidArgument("observation does not match sensor size".into()));
    }
    let (dx, dy) = spec.pixel_pitch();
    let saturation = spec.max_depth as f32;
    let usable = |u: usize, v: usize| obs.contact_mask[v * w + u] && obs.heightmap[v * w + u] < saturation;
    let masked = |u: usize, v: usize| obs.contact_mask[v * w + u];
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for v in 0..hgt {
        for u in 0..w {
            if !usable(u, v) {
                continue;
            }
            let (x, y) = spec.pixel_xy(u, v);
            points.push(obs.pose.transform_point(&Point3::new(x, y, -obs.h(u, v))));
            let hx = (u > 0 && u + 1 < w && masked(u - 1, v) && masked(u + 1, v))
                .then(|| (obs.h(u + 1, v) - obs.h(u - 1, v)) / (2.0 * dx));
            let hy = (v > 0 && v + 1 < hgt && masked(u, v - 1) && masked(u, v + 1))
                .then(|| (obs.h(u, v + 1) - obs.h(u, v - 1)) / (2.0 * dy));
            normals.push(match (hx, hy) {
                (Some(hx), Some(hy)) => {
                    let n = -Vector3::new(hx, hy, 1.0).normalize();
                    Some(obs.pose.transform_vector(&n))
                }
                _ => None,
            });
        }
    }
    if points.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let initial = (points.len() as f64 * dx * dy / config.budget.max(1) as f64).sqrt();
    let (picks, voxel) = voxel_decimate(&points, &normals, config.budget, initial);
    if picks.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let noise = Normal::new(0.0, config.sigma).map_err(|e| Error::InvalidArgument(format!("sample noise: {e}")))?;
    let samples = picks
        .into_iter()
        .map(|pick| {
            let mut p = points[pick.index];
            if config.perturb {
                p += Vector3::from_fn(|_, _| noise.sample(rng));
            }
            SurfaceSample::new(p, pick.normal, config.sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        samples,
        voxel_size: voxel,
    })
}
