//! Experiment configuration: `[section]` headers with `key = value` lines.
//! `#` and `;` start comments. Every key has a default, so a file holding only
//! `[object] mesh = ...` is a complete config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{load_mesh, TriangleMesh, DEFAULT_CHAMFER_SAMPLES};
use crate::tactile::{ExplorationPolicy, Intrinsics, PolicyMode, SensorSpec, DEFAULT_PRESS_DEPTH};

#[derive(Clone, Debug, PartialEq)]
pub enum MeshSource {
    File { path: PathBuf, unit_scale: f64 },
    Sphere { radius: f64 },
    Box { size: Vector3<f64> },
    Cylinder { radius: f64, height: f64 },
}

impl MeshSource {
    fn parse(spec: &str, base: &Path, unit_scale: f64) -> Result<Self> {
        let Some(rest) = spec.strip_prefix("builtin:") else {
            let path = base.join(spec);
            if !path.is_file() {
                return Err(Error::Config(format!("mesh file {} does not exist", path.display())));
            }
            return Ok(Self::File { path, unit_scale });
        };
        let bad = || Error::Config(format!("bad builtin mesh {spec:?}"));
        let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| *v > 0.0).ok_or_else(bad);
        let (kind, args) = rest.split_once(':').ok_or_else(bad)?;
        match kind {
            "sphere" => Ok(Self::Sphere { radius: num(args)? }),
            "box" => {
                let dims: Vec<f64> = args.split('x').map(num).collect::<Result<_>>()?;
                let [x, y, z] = dims[..] else { return Err(bad()) };
                Ok(Self::Box {
                    size: Vector3::new(x, y, z),
                })
            }
            "cylinder" => {
                let (r, h) = args.split_once(':').ok_or_else(bad)?;
                Ok(Self::Cylinder {
                    radius: num(r)?,
                    height: num(h)?,
                })
            }
            _ => Err(bad()),
        }
    }

    /// Loads or builds the ground-truth mesh. Built-in boxes and cylinders
    /// rest on the `z = 0` table plane.
    pub fn load(&self) -> Result<TriangleMesh> {
        match self {
            Self::File { path, unit_scale } => load_mesh(path, *unit_scale),
            Self::Sphere { radius } => Ok(TriangleMesh::icosphere(*radius, 3)),
            Self::Box { size } => Ok(TriangleMesh::cuboid(*size).translated(Vector3::new(0.0, 0.0, size.z / 2.0))),
            Self::Cylinder { radius, height } => Ok(TriangleMesh::cylinder(*radius, *height, 64, 16)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Sim,
    Replay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mesh: MeshSource,
    pub nodes_per_axis: usize,
    pub radius_fraction: f64,
    /// Kernel support `R`; `None` uses the object's bounding-box diagonal.
    pub kernel_support: Option<f64>,
    /// Prior mean `phi`; `None` uses `R`.
    pub prior_phi: Option<f64>,
    /// Multiplier on the kernel-derived prior covariance.
    pub prior_scale: f64,
    pub sensor: SensorSpec,
    pub press_depth: f64,
    pub pixel_noise: f64,
    pub intrinsics: Intrinsics,
    pub camera_distance: f64,
    pub camera_elevation_deg: f64,
    pub camera_azimuth_deg: f64,
    pub policy: ExplorationPolicy,
    pub hallucinate_base: bool,
    pub sigma_tactile: f64,
    pub sigma_depth: f64,
    /// Base samples get `base_sigma_factor * sigma_depth`.
    pub base_sigma_factor: f64,
    pub tactile_budget: usize,
    pub depth_budget: usize,
    pub snapshot_interval: usize,
    pub output_dir: PathBuf,
    pub record: bool,
    pub seed: u64,
    pub mode: RunMode,
    pub records: Option<PathBuf>,
    pub chamfer_samples: usize,
}

impl ExperimentConfig {
    /// Defaults for a given ground-truth source.
    pub fn new(mesh: MeshSource) -> Self {
        Self {
            mesh,
            nodes_per_axis: 16,
            radius_fraction: 0.15,
            kernel_support: None,
            prior_phi: None,
            prior_scale: 1.0,
            sensor: SensorSpec::default(),
            press_depth: DEFAULT_PRESS_DEPTH,
            pixel_noise: 5e-5,
            intrinsics: Intrinsics::default(),
            camera_distance: 0.5,
            camera_elevation_deg: 45.0,
            camera_azimuth_deg: 0.0,
            policy: ExplorationPolicy::uniform(60, 0),
            hallucinate_base: false,
            sigma_tactile: 5e-4,
            sigma_depth: 5e-3,
            base_sigma_factor: 2.0,
            tactile_budget: 60,
            depth_budget: 500,
            snapshot_interval: 30,
            output_dir: PathBuf::from("out"),
            record: true,
            seed: 0,
            mode: RunMode::Sim,
            records: None,
            chamfer_samples: DEFAULT_CHAMFER_SAMPLES,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = parse_sections(text)?;
        let mut take = |key: &str| entries.remove(key);
        let mesh_spec = take("object.mesh").ok_or_else(|| Error::Config("object.mesh is required".into()))?;
        let unit_scale = take("object.unit_scale").map(|v| num(&v, "object.unit_scale")).transpose()?.unwrap_or(1.0);
        let mut c = Self::new(MeshSource::parse(&mesh_spec, base, unit_scale)?);

        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = take($key) {
                    $field = v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {}", $key)))?;
                }
            };
        }
        macro_rules! set_opt {
            ($key:literal, $field:expr) => {
                if let Some(v) = take($key) {
                    $field = if v == "auto" { None } else { Some(num(&v, $key)?) };
                }
            };
        }
        set!("grid.nodes_per_axis", c.nodes_per_axis);
        set!("grid.radius_fraction", c.radius_fraction);
        set_opt!("kernel.support", c.kernel_support);
        set_opt!("prior.phi", c.prior_phi);
        set!("prior.scale", c.prior_scale);
        set!("sensor.width_px", c.sensor.width_px);
        set!("sensor.height_px", c.sensor.height_px);
        set!("sensor.patch_width", c.sensor.patch_width);
        set!("sensor.patch_height", c.sensor.patch_height);
        set!("sensor.max_depth", c.sensor.max_depth);
        set!("sensor.press_depth", c.press_depth);
        set!("sensor.pixel_noise", c.pixel_noise);
        set!("camera.width", c.intrinsics.width);
        set!("camera.height", c.intrinsics.height);
        set!("camera.fx", c.intrinsics.fx);
        set!("camera.fy", c.intrinsics.fy);
        set!("camera.cx", c.intrinsics.cx);
        set!("camera.cy", c.intrinsics.cy);
        set!("camera.distance", c.camera_distance);
        set!("camera.elevation", c.camera_elevation_deg);
        set!("camera.azimuth", c.camera_azimuth_deg);
        set!("noise.sigma_tactile", c.sigma_tactile);
        set!("noise.sigma_depth", c.sigma_depth);
        set!("noise.base_factor", c.base_sigma_factor);
        set!("decimation.tactile_budget", c.tactile_budget);
        set!("decimation.depth_budget", c.depth_budget);
        set!("output.snapshot_interval", c.snapshot_interval);
        set!("output.record", c.record);
        set!("exploration.hallucinate_base", c.hallucinate_base);
        set!("run.seed", c.seed);
        set!("eval.chamfer_samples", c.chamfer_samples);
        if let Some(dir) = take("output.dir") {
            c.output_dir = base.join(dir);
        }
        let mode = take("exploration.mode").unwrap_or_else(|| "uniform".into());
        let mut touches = 60usize;
        set!("exploration.touches", touches);
        let mut angles = 8usize;
        let mut heights = 5usize;
        set!("exploration.angles", angles);
        set!("exploration.heights", heights);
        c.policy = match mode.as_str() {
            "uniform" => ExplorationPolicy::uniform(touches, c.seed),
            "ring" => ExplorationPolicy::ring(angles, heights, c.seed),
            other => return Err(Error::Config(format!("unknown exploration.mode {other:?}"))),
        };
        match take("run.mode").as_deref() {
            None | Some("sim") => {}
            Some("replay") => c.mode = RunMode::Replay,
            Some(other) => return Err(Error::Config(format!("unknown run.mode {other:?}"))),
        }
        if let Some(r) = take("run.records") {
            let p = base.join(r);
            if !p.exists() {
                return Err(Error::Config(format!("records {} do not exist", p.display())));
            }
            c.records = Some(p);
        }
        if let Some(key) = entries.keys().next() {
            return Err(Error::Config(format!("unknown key {key}")));
        }
        c.validate()?;
        Ok(c)
    }

    /// Overrides the seed, keeping the exploration seed in step.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.policy.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        let positive = [
            ("grid.radius_fraction", self.radius_fraction),
            ("prior.scale", self.prior_scale),
            ("sensor.press_depth", self.press_depth),
            ("camera.distance", self.camera_distance),
            ("noise.sigma_tactile", self.sigma_tactile),
            ("noise.sigma_depth", self.sigma_depth),
            ("noise.base_factor", self.base_sigma_factor),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.pixel_noise < 0.0 {
            return Err(Error::Config("sensor.pixel_noise must be non-negative".into()));
        }
        if self.nodes_per_axis < 2 || self.radius_fraction >= 1.0 {
            return Err(Error::Config("grid needs nodes_per_axis >= 2 and radius_fraction < 1".into()));
        }
        if self.tactile_budget == 0 || self.depth_budget == 0 || self.chamfer_samples == 0 {
            return Err(Error::Config("budgets and chamfer_samples must be at least 1".into()));
        }
        if let PolicyMode::Ring { angles, heights } = self.policy.mode {
            if angles == 0 || heights == 0 {
                return Err(Error::Config("ring exploration needs angles and heights >= 1".into()));
            }
        }
        if self.mode == RunMode::Replay && self.records.is_none() {
            return Err(Error::Config("replay mode needs run.records".into()));
        }
        Ok(())
    }
}

fn num(v: &str, key: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("bad number {v:?} for {key}")))
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}
