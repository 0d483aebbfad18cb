use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, RunMode};
use crate::error::{Error, Result};
use crate::geometry::{write_ply, ChamferReference, KdTree, MeshBvh, PlyFormat, RigidPose, TriangleMesh, M2_TO_MM2};
use crate::gpsg::{GpsgGraph, GridSpec, NodeSelection, PriorSpec, SourceTag};
use crate::kernel::KernelParams;
use crate::surface::{marching_cubes, prune_with_index, SdfField, UncertainMesh};
use crate::tactile::{
    depthmap_to_samples, derive_seed, hallucinate_base, lowest_ring, read_depth_png, render_depthmap, render_tactile,
    sample_sensor_poses, tactile_to_samples, write_depth_png, Camera, DepthMap, PolicyMode, SampleConfig,
    TactileObservation, TouchRecordReader, TouchRecordWriter,
};

const STREAM_DEPTH: u64 = 1;
const STREAM_TOUCH: u64 = 2;
const STREAM_SAMPLES: u64 = 3;
const STREAM_CHAMFER: u64 = 4;

/// Relative CD change below which a touch counts as settled.
pub const CONVERGENCE_TOLERANCE: f64 = 0.02;
/// Consecutive settled touches needed for convergence.
pub const CONVERGENCE_WINDOW: usize = 5;
/// Touch record and depth image names inside a records directory.
pub const TOUCH_FILE: &str = "touches.bin";
pub const DEPTH_FILE: &str = "depth.png";

/// Reconstruction state after one update.
#[derive(Clone, Debug)]
pub struct ReconstructionFrame {
    pub timestep: u32,
    pub mesh: UncertainMesh,
    /// Chamfer distance to the ground truth (mm²); infinite when the mesh is empty.
    pub cd_mm2: f64,
    pub factors_added: usize,
    pub update_ms: f64,
    pub query_ms: f64,
    pub touches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub touches: usize,
    pub depth_only_cd_mm2: f64,
    pub final_cd_mm2: f64,
    /// Touch count at which CD settles, if it does.
    pub convergence_touches: Option<usize>,
    pub median_factors_per_touch: Option<usize>,
    pub total_factors: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub frames: Vec<ReconstructionFrame>,
    pub summary: RunSummary,
}

/// Sensor streams consumed by the reconstruction loop.
#[derive(Clone, Debug)]
pub struct RunInputs {
    /// Millimetre-quantised depth image for timestep 0.
    pub depth: DepthMap,
    pub touches: Vec<TactileObservation>,
}

/// Builds the ground truth and its BVH.
pub fn load_ground_truth(config: &ExperimentConfig) -> Result<MeshBvh> {
    let mesh = config.mesh.load()?;
    mesh.check_watertight()?;
    Ok(MeshBvh::build(mesh))
}

pub fn overlooking_camera(config: &ExperimentConfig, object: &TriangleMesh) -> Camera {
    Camera::overlooking(
        &object.bounding_box(),
        config.camera_distance,
        config.camera_elevation_deg,
        config.camera_azimuth_deg,
        config.intrinsics,
    )
}

/// Renders the depth image seen by the overlooking camera.
pub fn simulate_depth(config: &ExperimentConfig, gt: &MeshBvh) -> Result<DepthMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_DEPTH, 0));
    let camera = overlooking_camera(config, gt.mesh());
    Ok(render_depthmap(gt, &camera, config.sigma_depth, &mut rng)?.quantized_mm())
}

/// Renders one touch per pose with timesteps 1, 2, ...; misses are logged and skipped.
pub fn simulate_touches(config: &ExperimentConfig, gt: &MeshBvh, poses: &[RigidPose]) -> Result<Vec<TactileObservation>> {
    let mut out = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let t = i as u32 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_TOUCH, u64::from(t)));
        match render_tactile(gt, pose, &config.sensor, config.pixel_noise, t, &mut rng) {
            Ok(obs) => out.push(obs),
            Err(Error::ContactMiss) => log::warn!("touch {t}: no contact, skipped"),
            Err(e) => return Err(e.at_step(format!("render touch {t}"))),
        }
    }
    Ok(out)
}

pub fn simulate_inputs(config: &ExperimentConfig, gt: &MeshBvh) -> Result<RunInputs> {
    let depth = simulate_depth(config, gt).map_err(|e| e.at_step("render depth"))?;
    let poses =
        sample_sensor_poses(gt, &config.policy, config.press_depth).map_err(|e| e.at_step("sample poses"))?;
    let touches = simulate_touches(config, gt, &poses)?;
    Ok(RunInputs { depth, touches })
}

/// Writes a records directory that [`read_records`] accepts.
pub fn write_records(inputs: &RunInputs, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_depth_png(&inputs.depth, &dir.join(DEPTH_FILE))?;
    let mut w = TouchRecordWriter::create(&dir.join(TOUCH_FILE))?;
    for obs in &inputs.touches {
        w.write(obs)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_records(dir: &Path) -> Result<RunInputs> {
    let depth = read_depth_png(&dir.join(DEPTH_FILE))?;
    let touches = TouchRecordReader::open(&dir.join(TOUCH_FILE))?.collect::<Result<Vec<_>>>()?;
    Ok(RunInputs { depth, touches })
}

/// Sim mode renders inputs (recording them when enabled); replay mode reads them.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let gt = load_ground_truth(config).map_err(|e| e.at_step("load mesh"))?;
    let inputs = match config.mode {
        RunMode::Sim => {
            let inputs = simulate_inputs(config, &gt)?;
            if config.record {
                write_records(&inputs, &records_dir(config)).map_err(|e| e.at_step("write records"))?;
            }
            inputs
        }
        RunMode::Replay => {
            let dir = config.records.as_deref().ok_or_else(|| Error::Config("replay needs records".into()))?;
            read_records(dir).map_err(|e| e.at_step("read records"))?
        }
    };
    reconstruct(config, gt.mesh(), &inputs, |_, _| {})
}

pub fn records_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("records")
}

/// Kernel, grid and prior for a ground-truth object.
pub fn build_graph(config: &ExperimentConfig, object: &TriangleMesh) -> Result<GpsgGraph> {
    let bbox = object.bounding_box();
    let support = config.kernel_support.unwrap_or_else(|| bbox.diagonal());
    let kernel = KernelParams::new(support, config.sigma_tactile)?;
    let spec = GridSpec::around_object(&bbox, config.nodes_per_axis, config.radius_fraction)?;
    let base = PriorSpec::from_kernel(&kernel);
    let mut mean = base.mean;
    mean[0] = config.prior_phi.unwrap_or(support);
    let prior = PriorSpec::new(mean, base.covariance * config.prior_scale)?;
    Ok(GpsgGraph::new(spec, prior, kernel))
}

/// Runs the incremental loop: depth (and optional base samples) at timestep 0,
/// then one update per touch. `observe` sees the graph after every query.
pub fn reconstruct(
    config: &ExperimentConfig,
    ground_truth: &TriangleMesh,
    inputs: &RunInputs,
    mut observe: impl FnMut(&GpsgGraph, &ReconstructionFrame),
) -> Result<RunOutput> {
    let mut graph = build_graph(config, ground_truth).map_err(|e| e.at_step("build graph"))?;
    let reference = ChamferReference::new(
        ground_truth,
        config.chamfer_samples,
        derive_seed(config.seed, STREAM_CHAMFER, 0),
    )
    .map_err(|e| e.at_step("sample ground truth"))?;
    let mut frames: Vec<ReconstructionFrame> = Vec::with_capacity(inputs.touches.len() + 1);

    let depth_cfg = SampleConfig {
        budget: config.depth_budget,
        sigma: config.sigma_depth,
        perturb: false,
    };
    let depth_samples = depthmap_to_samples(&inputs.depth, &depth_cfg).map_err(|e| e.at_step("depth samples"))?;
    let mut report = graph.add_measurements(&depth_samples.samples, SourceTag::Depth, 0);
    if config.hallucinate_base && matches!(config.policy.mode, PolicyMode::Ring { .. }) {
        let poses: Vec<RigidPose> = inputs.touches.iter().map(|o| o.pose).collect();
        let ring = lowest_ring(&poses, 0.25 * graph.spec().spacing().z);
        let base = hallucinate_base(
            &ground_truth.bounding_box(),
            &ring,
            config.base_sigma_factor * config.sigma_depth,
        )?;
        let r = graph.add_measurements(&base, SourceTag::Base, 0);
        report.factors_added += r.factors_added;
        report.wall_time += r.wall_time;
    }
    let frame = extract_frame(&mut graph, &reference, 0, 0, report.factors_added, report.wall_time)
        .map_err(|e| e.at_step("frame 0"))?;
    observe(&graph, &frame);
    frames.push(frame);

    let tactile_cfg = SampleConfig {
        budget: config.tactile_budget,
        sigma: config.sigma_tactile,
        perturb: true,
    };
    for (n, obs) in inputs.touches.iter().enumerate() {
        let t = obs.timestep;
        if frames.last().is_some_and(|f| f.timestep >= t) {
            return Err(Error::BadRecord(format!("touch timestep {t} is not increasing")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SAMPLES, u64::from(t)));
        let set = match tactile_to_samples(obs, &config.sensor, &tactile_cfg, &mut rng) {
            Ok(s) => s,
            Err(Error::NoValidPixels) => {
                log::warn!("touch {t}: no usable pixels, skipped");
                continue;
            }
            Err(e) => return Err(e.at_step(format!("touch {t} samples"))),
        };
        let report = graph.add_measurements(&set.samples, SourceTag::Tactile, t);
        let frame = extract_frame(&mut graph, &reference, t, n + 1, report.factors_added, report.wall_time)
            .map_err(|e| e.at_step(format!("frame {t}")))?;
        observe(&graph, &frame);
        frames.push(frame);
    }
    let summary = summarize(&frames);
    Ok(RunOutput { frames, summary })
}

fn extract_frame(
    graph: &mut GpsgGraph,
    reference: &ChamferReference,
    timestep: u32,
    touches: usize,
    factors_added: usize,
    update_time: std::time::Duration,
) -> Result<ReconstructionFrame> {
    let q = graph.query(NodeSelection::DirtyOnly);
    let field = SdfField::from_graph(graph);
    let raw = marching_cubes(&field, 0.0);
    let support = KdTree::new(graph.measurements().iter().map(|m| m.sample.position).collect());
    let mesh = prune_with_index(&raw, &support, graph.radius());
    let cd_mm2 = if mesh.is_empty() {
        log::warn!("timestep {timestep}: reconstruction is empty");
        f64::INFINITY
    } else {
        reference.evaluate(mesh.mesh())? * M2_TO_MM2
    };
    Ok(ReconstructionFrame {
        timestep,
        mesh,
        cd_mm2,
        factors_added,
        update_ms: update_time.as_secs_f64() * 1e3,
        query_ms: q.wall_time.as_secs_f64() * 1e3,
        touches,
    })
}

/// Index of the first frame after which CD changes by less than the
/// tolerance for `CONVERGENCE_WINDOW` consecutive touches.
pub fn convergence_index(cd: &[f64]) -> Option<usize> {
    let settled: Vec<bool> = cd
        .windows(2)
        .map(|w| w[0].is_finite() && w[1].is_finite() && (w[1] - w[0]).abs() < CONVERGENCE_TOLERANCE * w[0])
        .collect();
    (0..settled.len()).find(|&i| settled.len() >= i + CONVERGENCE_WINDOW && settled[i..i + CONVERGENCE_WINDOW].iter().all(|&s| s))
}

pub fn summarize(frames: &[ReconstructionFrame]) -> RunSummary {
    let cd: Vec<f64> = frames.iter().map(|f| f.cd_mm2).collect();
    let mut per_touch: Vec<usize> = frames.iter().filter(|f| f.touches > 0).map(|f| f.factors_added).collect();
    per_touch.sort_unstable();
    RunSummary {
        frames: frames.len(),
        touches: frames.last().map_or(0, |f| f.touches),
        depth_only_cd_mm2: cd.first().copied().unwrap_or(f64::NAN),
        final_cd_mm2: cd.last().copied().unwrap_or(f64::NAN),
        convergence_touches: convergence_index(&cd).map(|i| frames[i].touches),
        median_factors_per_touch: (!per_touch.is_empty()).then(|| per_touch[per_touch.len() / 2]),
        total_factors: frames.iter().map(|f| f.factors_added).sum(),
    }
}

/// Deterministic per-frame metrics (no wall times).
pub fn metrics_csv(frames: &[ReconstructionFrame]) -> String {
    let mut s = String::from("timestep,touches,cd_mm2,factors,vertices,faces\n");
    for f in frames {
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{},{}",
            f.timestep,
            f.touches,
            f.cd_mm2,
            f.factors_added,
            f.mesh.mesh().vertices().len(),
            f.mesh.mesh().faces().len()
        );
    }
    s
}

pub fn timings_csv(frames: &[ReconstructionFrame]) -> String {
    let mut s = String::from("timestep,update_ms,query_ms\n");
    for f in frames {
        let _ = writeln!(s, "{},{:.4},{:.4}", f.timestep, f.update_ms, f.query_ms);
    }
    s
}

pub fn summary_text(summary: &RunSummary) -> String {
    let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
    format!(
        "frames={}\ntouches={}\ndepth_only_cd_mm2={:.6}\nfinal_cd_mm2={:.6}\nconvergence_touches={}\nmedian_factors_per_touch={}\ntotal_factors={}\n",
        summary.frames,
        summary.touches,
        summary.depth_only_cd_mm2,
        summary.final_cd_mm2,
        opt(summary.convergence_touches),
        opt(summary.median_factors_per_touch),
        summary.total_factors,
    )
}

/// Writes `metrics.csv`, `timings.csv`, `summary.txt` and a PLY snapshot for
/// every timestep that is a multiple of `snapshot_interval` (0 disables).
pub fn emit_outputs(output: &RunOutput, dir: &Path, snapshot_interval: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("metrics.csv", metrics_csv(&output.frames))?;
    put("timings.csv", timings_csv(&output.frames))?;
    put("summary.txt", summary_text(&output.summary))?;
    if snapshot_interval > 0 {
        for f in output.frames.iter().filter(|f| f.timestep as usize % snapshot_interval == 0) {
            let p = dir.join(format!("mesh_t{:03}.ply", f.timestep));
            write_ply(f.mesh.mesh(), &p, PlyFormat::BinaryLittleEndian)?;
            written.push(p);
        }
    }
    Ok(written)
}
