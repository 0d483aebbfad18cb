//! Acceptance suite. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the test fails if any criterion fails.
//!
//! Oracles (finite differences, dense least squares, brute-force support
//! checks) are written here independently of the library code they check.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use gpsg::geometry::{Aabb, SurfaceSample};
use gpsg::gpsg::{GpsgGraph, GridSpec, LoggedSample, NodeSelection, PriorSpec, SourceTag};
use gpsg::kernel::{kernel_block, FullGp, GpObservation, KernelParams};
use gpsg::runner::{
    build_graph, emit_outputs, load_ground_truth, metrics_csv, reconstruct, simulate_depth, simulate_inputs,
    simulate_touches, ExperimentConfig, MeshSource, RunInputs, RunOutput,
};
use gpsg::tactile::sample_sensor_poses;
use nalgebra::{DMatrix, DVector, Matrix4, Point3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    if elapsed < limit {
        Ok(format!("{detail}; {:.2}s", elapsed.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.2}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

// Criterion 1 -----------------------------------------------------------------

/// Thin-plate covariance between the values at `a` and `b`.
fn k_scalar(a: &Point3<f64>, b: &Point3<f64>, rr: f64) -> f64 {
    let d = (a - b).norm();
    2.0 * d.powi(3) - 3.0 * rr * d * d + rr.powi(3)
}

/// Finite-difference block: entry `(p, q)` differentiates the first point along
/// axis `p - 1` (if `p > 0`) and the second along `q - 1` (if `q > 0`).
fn fd_block(xi: &Point3<f64>, xj: &Point3<f64>, rr: f64, h: f64) -> Matrix4<f64> {
    let e = |a: usize| Vector3::ith(a, h);
    let mut m = Matrix4::zeros();
    m[(0, 0)] = k_scalar(xi, xj, rr);
    for a in 0..3 {
        m[(a + 1, 0)] = (k_scalar(&(xi + e(a)), xj, rr) - k_scalar(&(xi - e(a)), xj, rr)) / (2.0 * h);
        m[(0, a + 1)] = (k_scalar(xi, &(xj + e(a)), rr) - k_scalar(xi, &(xj - e(a)), rr)) / (2.0 * h);
    }
    for a in 0..3 {
        for b in 0..3 {
            let f = |si: f64, sj: f64| k_scalar(&(xi + e(a) * si), &(xj + e(b) * sj), rr);
            m[(a + 1, b + 1)] = (f(1.0, 1.0) - f(1.0, -1.0) - f(-1.0, 1.0) + f(-1.0, -1.0)) / (4.0 * h * h);
        }
    }
    m
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let rr = 0.2;
    let params = KernelParams::new(rr, 1e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let xi = Point3::from(Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)));
        let d = rng.random_range(0.01..0.99) * rr;
        let xj = xi + unit_vector(&mut rng) * d;
        let analytic = kernel_block(&xi, &xj, &params).0;
        let fd = fd_block(&xi, &xj, rr, 1e-5 * rr);
        // Matrix relative error per block; entries that vanish have no
        // meaningful relative error of their own.
        worst = worst.max((analytic - fd).norm() / analytic.norm());
    }
    let x = Point3::new(0.03, -0.02, 0.01);
    let self_block = kernel_block(&x, &x, &params).0;
    let expected = Matrix4::from_diagonal(&Vector4::new(rr.powi(3), 6.0 * rr, 6.0 * rr, 6.0 * rr));
    let exact = self_block == expected;
    let detail = format!("max relative FD error {worst:.2e} (< 1e-4), self block exact: {exact}");
    if worst < 1e-4 && exact {
        within(start.elapsed(), Duration::from_secs(1), detail)
    } else {
        Err(detail)
    }
}

// Criterion 2 -----------------------------------------------------------------

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let radius = 0.05;
    let params = KernelParams::new(0.2, 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let obs: Vec<GpObservation> = (0..200)
        .map(|_| {
            let n = unit_vector(&mut rng);
            GpObservation::surface(Point3::from(n * radius), n, 1e-4).unwrap()
        })
        .collect();
    let gp = match FullGp::fit(&obs, &params, 2000) {
        Ok(gp) => gp,
        Err(e) => return Err(format!("fit failed: {e}")),
    };
    let phi = |dir: &Vector3<f64>, r: f64| gp.mean(&Point3::from(dir * r))[0];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dir = unit_vector(&mut rng);
        let (mut lo, mut hi) = (0.03, 0.07);
        if !(phi(&dir, lo) < 0.0 && phi(&dir, hi) > 0.0) {
            return Err(format!("no sign change along ray {dir:?}"));
        }
        while hi - lo > 1e-7 {
            let mid = 0.5 * (lo + hi);
            if phi(&dir, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst = worst.max((0.5 * (lo + hi) - radius).abs());
    }
    let detail = format!("max |zero crossing - 0.05| = {:.3} mm (<= 2 mm)", worst * 1e3);
    if worst <= 0.002 {
        within(start.elapsed(), Duration::from_secs(30), detail)
    } else {
        Err(detail)
    }
}

// Criterion 3 -----------------------------------------------------------------

/// Minimises the sum of squared Mahalanobis residuals of every factor and
/// every node prior with a dense least-squares solve over all node states.
fn dense_minimiser(nodes: usize, prior: &PriorSpec, factors: &[(usize, Vector4<f64>, Matrix4<f64>)]) -> DVector<f64> {
    let rows = 4 * (nodes + factors.len());
    let mut a = DMatrix::zeros(rows, 4 * nodes);
    let mut b = DVector::zeros(rows);
    let mut put = |row: usize, node: usize, mean: &Vector4<f64>, cov: &Matrix4<f64>| {
        // Whitening W with W^T W = cov^-1.
        let info = cov.try_inverse().expect("factor covariance is invertible");
        let info = (info + info.transpose()) * 0.5;
        let w = info.cholesky().expect("information is SPD").l().transpose();
        a.view_mut((row, 4 * node), (4, 4)).copy_from(&w);
        b.rows_mut(row, 4).copy_from(&(w * mean));
    };
    for j in 0..nodes {
        put(4 * j, j, &prior.mean, &prior.covariance);
    }
    for (k, (node, mean, cov)) in factors.iter().enumerate() {
        put(4 * (nodes + k), *node, mean, cov);
    }
    a.svd(true, true).solve(&b, 1e-14).expect("least-squares solve")
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut max_factors = 0;
    for instance in 0..20 {
        let bbox = Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        let spec = GridSpec::new(4, bbox, rng.random_range(0.2..0.45), 1.0).unwrap();
        let kernel = KernelParams::new(rng.random_range(1.0..2.0), 0.05).unwrap();
        let prior = PriorSpec::from_kernel(&kernel);
        let mut graph = GpsgGraph::new(spec, prior.clone(), kernel);
        let mut factors = Vec::new();
        while factors.len() < 50 {
            let p = Point3::from(Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)));
            let s = SurfaceSample::new(p, unit_vector(&mut rng), rng.random_range(0.01..0.1)).unwrap();
            let fs = graph.factors_for(&s, SourceTag::Tactile, 1);
            if factors.len() + fs.len() > 50 {
                break;
            }
            factors.extend(fs.iter().map(|f| (f.node, f.mean, f.covariance)));
            graph.add_measurements(&[s], SourceTag::Tactile, 1);
        }
        max_factors = max_factors.max(factors.len());
        graph.query(NodeSelection::All);
        let x = dense_minimiser(graph.nodes().len(), &prior, &factors);
        for (j, node) in graph.nodes().iter().enumerate() {
            for c in 0..4 {
                let reference = x[4 * j + c];
                let err = (node.mean()[c] - reference).abs() / reference.abs().max(1.0);
                worst = worst.max(err);
            }
        }
        if factors.is_empty() {
            return Err(format!("instance {instance} drew no factors"));
        }
    }
    let detail = format!("20 instances (S=4, <= {max_factors} factors), max deviation {worst:.2e} (<= 1e-9)");
    if worst <= 1e-9 {
        within(start.elapsed(), Duration::from_secs(10), detail)
    } else {
        Err(detail)
    }
}

// Criterion 4 -----------------------------------------------------------------

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let object = Aabb::new(Point3::new(-0.05, -0.05, -0.05), Point3::new(0.05, 0.05, 0.05));
    let spec = GridSpec::around_object(&object, 16, 0.15).unwrap();
    let kernel = KernelParams::new(object.diagonal(), 5e-4).unwrap();
    let base = PriorSpec::from_kernel(&kernel);
    let prior = PriorSpec::new(base.mean, base.covariance * 1e6).unwrap();
    let mut graph = GpsgGraph::new(spec, prior, kernel);
    let n = Vector3::new(0.3, -0.5, 0.8).normalize();
    let sample = SurfaceSample::new(Point3::from(n * 0.05), n, 5e-4).unwrap();
    graph.add_measurements(&[sample], SourceTag::Tactile, 1);
    let report = match graph.compare_to_full_gp(&[GpObservation::from(&sample)], 2000) {
        Ok(r) => r,
        Err(e) => return Err(format!("comparison failed: {e}")),
    };
    let detail = format!(
        "{} nodes within r, max |phi difference| {:.2e} (< 1e-6)",
        report.nodes_compared, report.max_abs_phi
    );
    if report.nodes_compared > 0 && report.max_abs_phi < 1e-6 {
        within(start.elapsed(), Duration::from_secs(1), detail)
    } else {
        Err(detail)
    }
}

// Criteria 5, 6, 7, 9 -----------------------------------------------------------

struct RunRecord {
    label: String,
    seed: u64,
    config: ExperimentConfig,
    output: RunOutput,
    elapsed: Duration,
    trace_violations: usize,
    trace_checks: usize,
    log: Vec<LoggedSample>,
}

fn objects() -> [(&'static str, MeshSource); 2] {
    [
        ("sphere", MeshSource::Sphere { radius: 0.05 }),
        ("box", MeshSource::Box {
            size: Vector3::new(0.06, 0.06, 0.12),
        }),
    ]
}

fn default_config(mesh: MeshSource, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(mesh).with_seed(seed);
    c.record = false;
    c
}

fn run_with_checks(label: &str, config: ExperimentConfig) -> RunRecord {
    let start = Instant::now();
    let gt = load_ground_truth(&config).expect("ground truth");
    let inputs = simulate_inputs(&config, &gt).expect("simulate");
    let mut traces: Option<Vec<f64>> = None;
    let mut violations = 0;
    let mut checks = 0;
    let mut log = Vec::new();
    let output = reconstruct(&config, gt.mesh(), &inputs, |graph, _| {
        let now: Vec<f64> = graph.nodes().iter().map(|n| n.covariance().trace()).collect();
        if let Some(before) = &traces {
            for (b, a) in before.iter().zip(&now) {
                checks += 1;
                // Strictly no growth beyond the last bits of a 4x4 inverse.
                if *a > b * (1.0 + 1e-12) {
                    violations += 1;
                }
            }
        }
        traces = Some(now);
        log = graph.measurements().to_vec();
    })
    .expect("reconstruct");
    RunRecord {
        label: label.to_string(),
        seed: config.seed,
        config,
        output,
        elapsed: start.elapsed(),
        trace_violations: violations,
        trace_checks: checks,
        log,
    }
}

fn criterion_5(runs: &[RunRecord]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for r in runs {
        let s = &r.output.summary;
        let ratio = s.final_cd_mm2 / s.depth_only_cd_mm2;
        let conv = s.convergence_touches;
        let pass = r.output.frames.len() == 61
            && ratio <= 0.30
            && conv.is_some_and(|c| c <= 45)
            && r.elapsed < Duration::from_secs(300);
        ok &= pass;
        lines.push(format!(
            "{} seed {}: CD {:.1} -> {:.1} mm2 ({:.1}%), converged at {} touches, {:.0}s{}",
            r.label,
            r.seed,
            s.depth_only_cd_mm2,
            s.final_cd_mm2,
            ratio * 100.0,
            conv.map_or_else(|| "never".into(), |c| c.to_string()),
            r.elapsed.as_secs_f64(),
            if pass { "" } else { " <- FAIL" }
        ));
    }
    check(ok, format!("CD(60) <= 30% of depth-only CD and convergence <= 45 touches\n    {}", lines.join("\n    ")))
}

/// Re-times the recorded per-touch updates on a fresh graph.
fn replay_update_times(r: &RunRecord) -> BTreeMap<u32, Duration> {
    let gt = load_ground_truth(&r.config).expect("ground truth");
    let mut graph = build_graph(&r.config, gt.mesh()).expect("graph");
    let mut by_step: BTreeMap<(u32, SourceTag), Vec<SurfaceSample>> = BTreeMap::new();
    for m in &r.log {
        by_step.entry((m.timestep, m.source)).or_default().push(m.sample);
    }
    let mut times = BTreeMap::new();
    for ((t, source), samples) in by_step {
        let report = graph.add_measurements(&samples, source, t);
        if source == SourceTag::Tactile {
            times.insert(t, report.wall_time);
        }
    }
    times
}

fn criterion_6(runs: &[RunRecord]) -> Outcome {
    const REPEATS: usize = 4;
    let mut ok = true;
    let mut lines = Vec::new();
    for r in runs {
        let median = r.output.summary.median_factors_per_touch.unwrap_or(0);
        // Per-touch time is the fastest of the live update and its replays,
        // which strips one-off scheduler stalls from a sub-millisecond timing.
        let mut best: BTreeMap<u32, f64> = r
            .output
            .frames
            .iter()
            .filter(|f| f.touches > 0)
            .map(|f| (f.timestep, f.update_ms))
            .collect();
        let live: Vec<f64> = best.values().copied().collect();
        for _ in 0..REPEATS {
            for (t, d) in replay_update_times(r) {
                let ms = d.as_secs_f64() * 1e3;
                best.entry(t).and_modify(|b| *b = b.min(ms));
            }
        }
        let spread = |v: &[f64]| {
            let max = v.iter().copied().fold(0.0, f64::max);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            max / min
        };
        let per_touch: Vec<f64> = best.values().copied().collect();
        let ratio = spread(&per_touch);
        let pass = (300..=3000).contains(&median) && ratio < 3.0;
        ok &= pass;
        lines.push(format!(
            "{} seed {}: median factors/touch {median}, update time max/min {ratio:.2} (single live pass {:.2}){}",
            r.label,
            r.seed,
            spread(&live),
            if pass { "" } else { " <- FAIL" }
        ));
    }
    check(ok, format!("median factors in [300, 3000], update time spread < 3x\n    {}", lines.join("\n    ")))
}

fn criterion_7(runs: &[RunRecord]) -> Outcome {
    let violations: usize = runs.iter().map(|r| r.trace_violations).sum();
    let checks: usize = runs.iter().map(|r| r.trace_checks).sum();
    check(
        violations == 0 && checks > 0,
        format!("{violations} trace increases over {checks} node-update checks in {} runs", runs.len()),
    )
}

fn criterion_9(first: &RunRecord) -> Outcome {
    let second = run_with_checks(&first.label, first.config.clone());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    emit_outputs(&first.output, &a, 0).map_err(|e| e.to_string())?;
    emit_outputs(&second.output, &b, 0).map_err(|e| e.to_string())?;
    let ba = std::fs::read(a.join("metrics.csv")).map_err(|e| e.to_string())?;
    let bb = std::fs::read(b.join("metrics.csv")).map_err(|e| e.to_string())?;
    let same = ba == bb && metrics_csv(&first.output.frames) == metrics_csv(&second.output.frames);
    check(
        same,
        format!("{} seed {}: metrics.csv byte-identical across two runs: {same} ({} bytes)", first.label, first.seed, ba.len()),
    )
}

// Criterion 8 -----------------------------------------------------------------

fn criterion_8() -> Outcome {
    let config = default_config(MeshSource::Sphere { radius: 0.05 }, 8);
    let gt = load_ground_truth(&config).expect("ground truth");
    let poses: Vec<_> = sample_sensor_poses(&gt, &config.policy, config.press_depth)
        .expect("poses")
        .into_iter()
        .filter(|p| p.origin().z > 0.0)
        .collect();
    let inputs = RunInputs {
        depth: simulate_depth(&config, &gt).expect("depth"),
        touches: simulate_touches(&config, &gt, &poses).expect("touches"),
    };
    let mut frames = 0;
    let mut vertices = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut offending = 0;
    reconstruct(&config, gt.mesh(), &inputs, |graph, frame| {
        frames += 1;
        let r = graph.radius();
        let measured: Vec<Point3<f64>> = graph.measurements().iter().map(|m| m.sample.position).collect();
        for v in frame.mesh.mesh().vertices() {
            vertices += 1;
            let nearest = measured.iter().map(|m| (m - v).norm()).fold(f64::INFINITY, f64::min);
            worst_excess = worst_excess.max(nearest - r);
            if nearest > r {
                offending += 1;
            }
        }
    })
    .expect("reconstruct");
    check(
        offending == 0 && vertices > 0,
        format!(
            "{} upper-hemisphere touches, {frames} frames, {vertices} vertices checked, {offending} farther than r (worst nearest - r = {:.2e} m)",
            inputs.touches.len(),
            worst_excess
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(usize, Outcome)> = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3()), (4, criterion_4())];

    let mut runs = Vec::new();
    for (label, mesh) in objects() {
        for seed in 0..5 {
            runs.push(run_with_checks(label, default_config(mesh.clone(), seed)));
        }
    }
    results.push((5, criterion_5(&runs)));
    results.push((6, criterion_6(&runs)));
    results.push((7, criterion_7(&runs)));
    results.push((8, criterion_8()));
    results.push((9, criterion_9(&runs[0])));

    // Written to the raw handle so the report shows without --nocapture.
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (n, outcome) in &results {
        let line = match outcome {
            Ok(detail) => format!("criterion {n}: PASS  {detail}"),
            Err(detail) => {
                failed.push(*n);
                format!("criterion {n}: FAIL  {detail}")
            }
        };
        writeln!(out, "{line}").unwrap();
    }
    drop(out);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
