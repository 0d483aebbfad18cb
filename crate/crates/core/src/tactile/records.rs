//! Touch record stream and depth-image files.
//!
//! Touch file (little-endian): `GPSGTOUC`, u32 version, then per touch
//! u32 timestep, 12 f64 pose `[R|t]` row-major, u32 width, u32 height,
//! width*height f32 penetration depths (m), and the contact mask as a
//! row-major bitset (LSB first, padded to whole bytes).
//!
//! Depth images are 16-bit grayscale PNG in millimetres plus a `key=value`
//! sidecar with the intrinsics and camera pose.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::depth::{Camera, DepthMap, Intrinsics};
use super::sensor::TactileObservation;
use crate::error::{Error, Result};
use crate::geometry::RigidPose;

const MAGIC: &[u8; 8] = b"GPSGTOUC";
const VERSION: u32 = 1;

pub struct TouchRecordWriter<W: Write> {
    out: W,
}

impl TouchRecordWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> TouchRecordWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, obs: &TactileObservation) -> Result<()> {
        let o = &mut self.out;
        o.write_u32::<LittleEndian>(obs.timestep)?;
        for x in obs.pose.to_row_major() {
            o.write_f64::<LittleEndian>(x)?;
        }
        o.write_u32::<LittleEndian>(obs.width as u32)?;
        o.write_u32::<LittleEndian>(obs.height as u32)?;
        for &h in &obs.heightmap {
            o.write_f32::<LittleEndian>(h)?;
        }
        let mut bits = vec![0u8; obs.contact_mask.len().div_ceil(8)];
        for (i, _) in obs.contact_mask.iter().enumerate().filter(|(_, &m)| m) {
            bits[i / 8] |= 1 << (i % 8);
        }
        o.write_all(&bits)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Iterates the touches of a record stream in file order.
pub struct TouchRecordReader<R: Read> {
    input: R,
    path: PathBuf,
}

impl TouchRecordReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?), path)
    }
}

impl<R: Read> TouchRecordReader<R> {
    pub fn new(mut input: R, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::parse(path, "missing touch record header"))?;
        if &magic != MAGIC {
            return Err(Error::parse(path, "not a touch record file"));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::parse(path, format!("unsupported touch record version {version}")));
        }
        Ok(Self {
            input,
            path: path.to_path_buf(),
        })
    }

    fn read_one(&mut self) -> Result<Option<TactileObservation>> {
        let timestep = match self.input.read_u32::<LittleEndian>() {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let bad = |what: &str| Error::BadRecord(format!("{}: touch {timestep}: {what}", self.path.display()));
        let mut m = [0.0; 12];
        for x in &mut m {
            *x = self.input.read_f64::<LittleEndian>().map_err(|_| bad("truncated pose"))?;
        }
        let pose = RigidPose::from_row_major(&m).map_err(|_| bad("pose is not rigid"))?;
        let width = self.input.read_u32::<LittleEndian>().map_err(|_| bad("truncated size"))? as usize;
        let height = self.input.read_u32::<LittleEndian>().map_err(|_| bad("truncated size"))? as usize;
        let n = width * height;
        let mut heightmap = vec![0f32; n];
        self.input
            .read_f32_into::<LittleEndian>(&mut heightmap)
            .map_err(|_| bad("truncated heightmap"))?;
        let mut bits = vec![0u8; n.div_ceil(8)];
        self.input.read_exact(&mut bits).map_err(|_| bad("truncated mask"))?;
        if heightmap.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(bad("invalid heightmap value"));
        }
        let contact_mask = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Some(TactileObservation {
            pose,
            width,
            height,
            heightmap,
            contact_mask,
            timestep,
        }))
    }
}

impl<R: Read> Iterator for TouchRecordReader<R> {
    type Item = Result<TactileObservation>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_one().transpose()
    }
}

fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("txt")
}

/// Writes a millimetre PNG and its metadata sidecar next to it.
pub fn write_depth_png(map: &DepthMap, path: &Path) -> Result<()> {
    let (w, h) = (map.width(), map.height());
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::parse(path, format!("png header: {e}")))?;
    let mut data = Vec::with_capacity(w * h * 2);
    for d in &map.depth {
        let mm = (d * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16;
        data.extend_from_slice(&mm.to_be_bytes());
    }
    writer
        .write_image_data(&data)
        .map_err(|e| Error::parse(path, format!("png data: {e}")))?;
    writer.finish().map_err(|e| Error::parse(path, format!("png: {e}")))?;

    let k = &map.camera.intrinsics;
    let pose: Vec<String> = map.camera.pose.to_row_major().iter().map(|x| format!("{x:?}")).collect();
    let mut side = BufWriter::new(File::create(sidecar_path(path))?);
    writeln!(side, "unit=mm")?;
    writeln!(side, "width={}", k.width)?;
    writeln!(side, "height={}", k.height)?;
    writeln!(side, "fx={:?}", k.fx)?;
    writeln!(side, "fy={:?}", k.fy)?;
    writeln!(side, "cx={:?}", k.cx)?;
    writeln!(side, "cy={:?}", k.cy)?;
    writeln!(side, "pose={}", pose.join(" "))?;
    side.flush()?;
    Ok(())
}

/// Reads a depth PNG written by [`write_depth_png`].
pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path)?;
    let mut get = std::collections::HashMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&side_path, format!("expected key=value, got {line:?}")))?;
        get.insert(k.trim().to_string(), v.trim().to_string());
    }
    let field = |k: &str| {
        get.get(k)
            .ok_or_else(|| Error::parse(&side_path, format!("missing key {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        field(k)?
            .parse()
            .map_err(|_| Error::parse(&side_path, format!("bad number for {k}")))
    };
    if field("unit")? != "mm" {
        return Err(Error::parse(&side_path, "only unit=mm is supported"));
    }
    let intrinsics = Intrinsics {
        width: num("width")? as usize,
        height: num("height")? as usize,
        fx: num("fx")?,
        fy: num("fy")?,
        cx: num("cx")?,
        cy: num("cy")?,
    };
    let values: Vec<f64> = field("pose")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(&side_path, "bad pose value")))
        .collect::<Result<_>>()?;
    let m: [f64; 12] = values
        .try_into()
        .map_err(|_| Error::parse(&side_path, "pose needs 12 values"))?;
    let pose = RigidPose::from_row_major(&m)?;

    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::parse(path, format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(path, format!("png: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::parse(path, "expected 16-bit grayscale"));
    }
    if info.width as usize != intrinsics.width || info.height as usize != intrinsics.height {
        return Err(Error::parse(path, "image size disagrees with sidecar"));
    }
    let depth = buf[..info.buffer_size()]
        .chunks_exact(2)
        .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 1000.0)
        .collect();
    DepthMap::new(Camera { pose, intrinsics }, depth)
}
