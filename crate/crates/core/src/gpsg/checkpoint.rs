//! Versioned binary checkpoint of a graph: grid, prior, kernel, per-node
//! information state and the measurement log. All values little-endian.
//!
//! ```text
//! magic "GPSGCKPT" | u32 version
//! u32 S | f64 bbox_min[3] | f64 bbox_max[3] | f64 radius_fraction | f64 side_length
//! f64 kernel_support | f64 kernel_sigma_n
//! f64 prior_mean[4] | f64 prior_cov[16] (row-major)
//! S^3 x { f64 eta[4] | f64 lambda[16] (row-major) | u64 factor_count | u8 touched }
//! u64 n_log | n_log x { f64 pos[3] | f64 normal[3] | f64 sigma | u8 source | u32 timestep }
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix4, Point3, Vector3, Vector4};

use super::graph::{GpsgGraph, GridSpec, LoggedSample, PriorSpec, SourceTag};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, SurfaceSample};
use crate::kernel::KernelParams;

const MAGIC: &[u8; 8] = b"GPSGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_f64s<W: Write>(w: &mut W, v: impl IntoIterator<Item = f64>) -> Result<()> {
    for x in v {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn get_f64s<R: Read, const N: usize>(r: &mut R) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for x in &mut out {
        *x = r.read_f64::<LittleEndian>()?;
    }
    Ok(out)
}

fn row_major(m: &Matrix4<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..16).map(move |i| m[(i / 4, i % 4)])
}

fn from_row_major(v: [f64; 16]) -> Matrix4<f64> {
    Matrix4::from_row_slice(&v)
}

pub fn write_checkpoint<W: Write>(graph: &GpsgGraph, w: &mut W) -> Result<()> {
    let spec = graph.spec();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(spec.nodes_per_axis as u32)?;
    put_f64s(w, spec.bbox.min.iter().copied())?;
    put_f64s(w, spec.bbox.max.iter().copied())?;
    put_f64s(w, [spec.radius_fraction, spec.side_length])?;
    put_f64s(w, [graph.kernel().support, graph.kernel().sigma_n_default])?;
    put_f64s(w, graph.prior().mean.iter().copied())?;
    put_f64s(w, row_major(&graph.prior().covariance))?;
    for n in graph.nodes() {
        put_f64s(w, n.eta.iter().copied())?;
        put_f64s(w, row_major(&n.lambda))?;
        w.write_u64::<LittleEndian>(n.factor_count as u64)?;
        w.write_u8(n.touched as u8)?;
    }
    w.write_u64::<LittleEndian>(graph.measurements().len() as u64)?;
    for m in graph.measurements() {
        put_f64s(w, m.sample.position.iter().copied())?;
        put_f64s(w, m.sample.normal.iter().copied())?;
        put_f64s(w, [m.sample.noise_sigma])?;
        w.write_u8(m.source.code())?;
        w.write_u32::<LittleEndian>(m.timestep)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<GpsgGraph> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadRecord("not a graph checkpoint".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadRecord(format!("unsupported checkpoint version {version}")));
    }
    let s = r.read_u32::<LittleEndian>()? as usize;
    let min = get_f64s::<_, 3>(r)?;
    let max = get_f64s::<_, 3>(r)?;
    let [fraction, side] = get_f64s::<_, 2>(r)?;
    let spec = GridSpec::new(s, Aabb::new(Point3::from(min), Point3::from(max)), fraction, side)?;
    let [support, sigma] = get_f64s::<_, 2>(r)?;
    let kernel = KernelParams::new(support, sigma)?;
    let mean = Vector4::from(get_f64s::<_, 4>(r)?);
    let cov = from_row_major(get_f64s::<_, 16>(r)?);
    let prior = PriorSpec::new(mean, cov)?;
    let mut nodes = Vec::with_capacity(spec.node_count());
    for _ in 0..spec.node_count() {
        let eta = Vector4::from(get_f64s::<_, 4>(r)?);
        let lambda = from_row_major(get_f64s::<_, 16>(r)?);
        let count = r.read_u64::<LittleEndian>()? as usize;
        let touched = r.read_u8()? != 0;
        if lambda.cholesky().is_none() {
            return Err(Error::BadRecord("node information matrix is not PD".into()));
        }
        nodes.push((eta, lambda, count, touched));
    }
    let n_log = r.read_u64::<LittleEndian>()? as usize;
    let mut log = Vec::with_capacity(n_log.min(1 << 20));
    for _ in 0..n_log {
        let p = get_f64s::<_, 3>(r)?;
        let n = get_f64s::<_, 3>(r)?;
        let [sigma] = get_f64s::<_, 1>(r)?;
        let source = SourceTag::from_code(r.read_u8()?)
            .ok_or_else(|| Error::BadRecord("unknown source tag".into()))?;
        let timestep = r.read_u32::<LittleEndian>()?;
        log.push(LoggedSample {
            sample: SurfaceSample {
                position: Point3::from(p),
                normal: Vector3::from(n),
                noise_sigma: sigma,
            },
            source,
            timestep,
        });
    }
    Ok(GpsgGraph::from_parts(spec, prior, kernel, nodes, log))
}
