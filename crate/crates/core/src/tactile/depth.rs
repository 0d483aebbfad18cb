use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::decimate::voxel_decimate;
use super::{SampleConfig, SampleSet};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, MeshBvh, Ray, RigidPose, SurfaceSample};

/// Half-width of the box filter applied before normal estimation (px).
const SMOOTH_RADIUS: isize = 3;
/// Pixel offset of the neighbours used for cross-product normals.
const NORMAL_STRIDE: usize = 4;
/// Neighbours differing by more than this are treated as a depth edge (m).
const DEPTH_EDGE: f64 = 0.02;
/// Normals closer than this to perpendicular with the view ray are dropped.
const MIN_VIEW_COSINE: f64 = 0.17;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
        }
    }
}

/// Camera frame: `z` forward, `x` right, `y` down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub pose: RigidPose,
    pub intrinsics: Intrinsics,
}

impl Camera {
    /// Camera `distance` from the box centre at the given elevation and
    /// azimuth (degrees), looking at the centre.
    pub fn overlooking(target: &Aabb, distance: f64, elevation_deg: f64, azimuth_deg: f64, intrinsics: Intrinsics) -> Self {
        let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
        let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let centre = target.center();
        Self {
            pose: RigidPose::looking_along(centre + dir * distance, -dir),
            intrinsics,
        }
    }

    /// Unnormalised camera-frame direction with unit `z`.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }
}

/// Z-depth image; 0 marks pixels without a return.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub camera: Camera,
    /// Row-major depths (m).
    pub depth: Vec<f64>,
}

impl DepthMap {
    pub fn new(camera: Camera, depth: Vec<f64>) -> Result<Self> {
        let k = &camera.intrinsics;
        if depth.len() != k.width * k.height {
            return Err(Error::InvalidArgument("depth grid does not match intrinsics".into()));
        }
        if depth.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidArgument("depths must be finite and non-negative".into()));
        }
        Ok(Self { camera, depth })
    }

    pub fn width(&self) -> usize {
        self.camera.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.camera.intrinsics.height
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width() + u]
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    /// Rounds depths to whole millimetres, as stored in 16-bit PNG.
    pub fn quantized_mm(&self) -> Self {
        Self {
            camera: self.camera,
            depth: self
                .depth
                .iter()
                .map(|d| (d * 1000.0).round().min(f64::from(u16::MAX)) / 1000.0)
                .collect(),
        }
    }

    /// Camera-frame point of pixel `(u, v)` at depth `z`.
    pub fn back_project(&self, u: usize, v: usize, z: f64) -> Point3<f64> {
        Point3::from(self.camera.pixel_direction(u as f64, v as f64) * z)
    }
}

/// Ray-casts one ray per pixel. Hits carry Gaussian noise of `noise_sigma`.
pub fn render_depthmap<R: Rng + ?Sized>(bvh: &MeshBvh, camera: &Camera, noise_sigma: f64, rng: &mut R) -> Result<DepthMap> {
    let k = camera.intrinsics;
    let origin = camera.pose.origin();
    let mut depth: Vec<f64> = (0..k.height)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..k.width).map(move |u| {
                let d = camera.pixel_direction(u as f64, v as f64);
                let ray = Ray::new(origin, camera.pose.transform_vector(&d)).expect("pixel ray is non-zero");
                bvh.raycast(&ray).map_or(0.0, |hit| hit.distance / d.norm())
            })
        })
        .collect();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(format!("depth noise: {e}")))?;
        for d in depth.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + normal.sample(rng)).max(0.0);
        }
    }
    DepthMap::new(*camera, depth)
}

fn smoothed(d: &DepthMap) -> Vec<f64> {
    let (w, h) = (d.width() as isize, d.height() as isize);
    let mut out = vec![0.0; d.depth.len()];
    for v in 0..h {
        for u in 0..w {
            let centre = d.depth[(v * w + u) as usize];
            if centre <= 0.0 {
                continue;
            }
            let (mut sum, mut n) = (0.0, 0usize);
            for dv in -SMOOTH_RADIUS..=SMOOTH_RADIUS {
                for du in -SMOOTH_RADIUS..=SMOOTH_RADIUS {
                    let (uu, vv) = (u + du, v + dv);
                    if uu < 0 || vv < 0 || uu >= w || vv >= h {
                        continue;
                    }
                    let z = d.depth[(vv * w + uu) as usize];
                    if z > 0.0 && (z - centre).abs() < DEPTH_EDGE {
                        sum += z;
                        n += 1;
                    }
                }
            }
            out[(v * w + u) as usize] = sum / n as f64;
        }
    }
    out
}

/// Back-projects valid pixels into world samples. Normals come from cross
/// products of smoothed neighbouring back-projections, oriented toward the
/// camera. Voxels are formed on the smoothed points so isolated noisy pixels
/// cannot claim a voxel of their own; each sample keeps its pixel's raw depth.
/// A map whose pixels have no valid neighbours yields an error.
pub fn depthmap_to_samples(d: &DepthMap, config: &SampleConfig) -> Result<SampleSet> {
    let (w, h) = (d.width(), d.height());
    let z = smoothed(d);
    let s = NORMAL_STRIDE;
    let smooth_point = |u: usize, v: usize| d.back_project(u, v, z[v * w + u]);
    let continuous = |a: usize, b: usize| z[a] > 0.0 && z[b] > 0.0 && (z[a] - z[b]).abs() < DEPTH_EDGE;
    let mut raw_points = Vec::new();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut footprint = 0.0;
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let raw = d.depth[i];
            if raw <= 0.0 {
                continue;
            }
            raw_points.push(d.camera.pose.transform_point(&d.back_project(u, v, raw)));
            points.push(d.camera.pose.transform_point(&smooth_point(u, v)));
            footprint += (raw / d.camera.intrinsics.fx) * (raw / d.camera.intrinsics.fy);
            let normal = if u >= s && v >= s && u + s < w && v + s < h {
                let (l, r, t, b) = (i - s, i + s, i - s * w, i + s * w);
                if [l, r, t, b].iter().all(|&j| continuous(i, j)) {
                    let du = smooth_point(u + s, v) - smooth_point(u - s, v);
                    let dv = smooth_point(u, v + s) - smooth_point(u, v - s);
                    let mut n = du.cross(&dv);
                    let view = smooth_point(u, v).coords;
                    if n.dot(&view) > 0.0 {
                        n = -n;
                    }
                    let n = n.normalize();
                    (n.dot(&-view.normalize()) > MIN_VIEW_COSINE).then(|| d.camera.pose.transform_vector(&n))
                } else {
                    None
                }
            } else {
                None
            };
            normals.push(normal);
        }
    }
    if points.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let initial = (footprint / config.budget.max(1) as f64).sqrt();
    let (picks, voxel) = voxel_decimate(&points, &normals, config.budget, initial);
    if picks.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let samples = picks
        .into_iter()
        .map(|p| SurfaceSample::new(raw_points[p.index], p.normal, config.sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        samples,
        voxel_size: voxel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriangleMesh;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn cfg(sigma: f64) -> SampleConfig {
        SampleConfig {
            budget: 500,
            sigma,
            perturb: false,
        }
    }

    fn front_camera(distance: f64) -> Camera {
        Camera {
            pose: RigidPose::looking_along(Point3::new(0.0, 0.0, distance), -Vector3::z()),
            intrinsics: Intrinsics::default(),
        }
    }

    #[test]
    fn cube_front_face_depth() {
        let bvh = MeshBvh::build(TriangleMesh::cuboid(Vector3::repeat(0.1)));
        let d = render_depthmap(&bvh, &front_camera(1.0), 0.0, &mut rng()).unwrap();
        assert!((d.at(320, 240) - 0.95).abs() < 1e-12);
        assert!((d.at(319, 239) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn all_miss_is_zero() {
        let bvh = MeshBvh::build(TriangleMesh::cuboid(Vector3::repeat(0.1)));
        let cam = Camera {
            pose: RigidPose::looking_along(Point3::new(0.0, 0.0, 1.0), Vector3::z()),
            intrinsics: Intrinsics::default(),
        };
        let d = render_depthmap(&bvh, &cam, 0.005, &mut rng()).unwrap();
        assert_eq!(d.valid_count(), 0);
        assert!(matches!(depthmap_to_samples(&d, &cfg(0.005)), Err(Error::NoValidPixels)));
    }

    #[test]
    fn noise_level_is_statistically_right() {
        let bvh = MeshBvh::build(TriangleMesh::cuboid(Vector3::repeat(0.2)));
        let cam = front_camera(0.5);
        let clean = render_depthmap(&bvh, &cam, 0.0, &mut rng()).unwrap();
        let noisy = render_depthmap(&bvh, &cam, 0.005, &mut rng()).unwrap();
        let res: Vec<f64> = clean
            .depth
            .iter()
            .zip(&noisy.depth)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, n)| n - c)
            .collect();
        assert!(res.len() >= 10_000);
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (res.len() - 1) as f64).sqrt();
        assert!((0.0045..=0.0055).contains(&sd), "{sd}");
    }

    #[test]
    fn fronto_parallel_plane_normals() {
        let bvh = MeshBvh::build(TriangleMesh::cuboid(Vector3::new(0.3, 0.3, 0.01)));
        let d = render_depthmap(&bvh, &front_camera(0.5), 0.0, &mut rng()).unwrap();
        let set = depthmap_to_samples(&d, &cfg(0.005)).unwrap();
        assert!(!set.samples.is_empty() && set.samples.len() <= 500);
        for s in &set.samples {
            assert!(s.normal.dot(&Vector3::z()) > 1f64.to_radians().cos());
        }
    }

    #[test]
    fn sphere_normals_within_ten_degrees() {
        let bvh = MeshBvh::build(TriangleMesh::icosphere(0.05, 4));
        let cam = Camera::overlooking(&bvh.mesh().bounding_box(), 0.5, 45.0, 30.0, Intrinsics::default());
        let d = render_depthmap(&bvh, &cam, 0.0, &mut rng()).unwrap();
        let set = depthmap_to_samples(&d, &cfg(0.005)).unwrap();
        assert!(set.samples.len() > 50);
        let bad = set
            .samples
            .iter()
            .filter(|s| s.normal.dot(&s.position.coords.normalize()) < 10f64.to_radians().cos())
            .count();
        assert_eq!(bad, 0);
    }

    #[test]
    fn single_pixel_is_rejected() {
        let mut depth = vec![0.0; 640 * 480];
        depth[240 * 640 + 320] = 0.5;
        let d = DepthMap::new(front_camera(1.0), depth).unwrap();
        assert!(matches!(depthmap_to_samples(&d, &cfg(0.005)), Err(Error::NoValidPixels)));
    }

    #[test]
    fn quantization_rounds_to_millimetres() {
        let d = DepthMap::new(front_camera(1.0), vec![0.12345; 640 * 480]).unwrap().quantized_mm();
        assert!(d.depth.iter().all(|&z| (z - 0.123).abs() < 1e-12));
    }
}
