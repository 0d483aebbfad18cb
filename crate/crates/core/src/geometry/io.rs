//! OBJ and PLY mesh I/O.
//!
//! Reading: OBJ (`v`/`f` records only) and PLY (ASCII or binary little-endian).
//! Writing: PLY with an optional per-vertex `uncertainty` float property, and OBJ.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Point3;

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};

/// Loads an OBJ or PLY file and multiplies coordinates by `unit_scale` (e.g. 1e-3 for mm).
pub fn load_mesh(path: &Path, unit_scale: f64) -> Result<TriangleMesh> {
    let bytes = fs::read(path)?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (vertices, faces) = match ext.as_str() {
        "obj" => parse_obj(path, &bytes)?,
        "ply" => parse_ply(path, &bytes)?,
        _ => return Err(Error::parse(path, "unsupported extension (expected .obj or .ply)")),
    };
    let vertices = vertices
        .into_iter()
        .map(|v| Point3::from(v.coords * unit_scale))
        .collect();
    TriangleMesh::new(vertices, faces)
}

type RawMesh = (Vec<Point3<f64>>, Vec<[usize; 3]>);

fn parse_obj(path: &Path, bytes: &[u8]) -> Result<RawMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
                if c.len() != 3 {
                    return Err(Error::parse(path, format!("line {}: vertex needs 3 coords", lineno + 1)));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(path, format!("line {}: bad index {tok:?}", lineno + 1)))?;
                    let idx = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(Error::parse(path, format!("line {}: index 0", lineno + 1)));
                    };
                    if idx < 0 {
                        return Err(Error::parse(path, format!("line {}: index out of range", lineno + 1)));
                    }
                    poly.push(idx as usize);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(path, format!("line {}: face needs 3 vertices", lineno + 1)));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[derive(Clone, Copy, Debug)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn read_bin(self, r: &mut &[u8]) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<RawMesh> {
    let bad = |m: &str| Error::parse(path, m.to_string());
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| bad("missing end_header"))?;
    let mut body_start = header_end + b"end_header".len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| bad(&e.to_string()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", ..] => binary = Some(false),
            ["format", "binary_little_endian", ..] => binary = Some(true),
            ["format", other, ..] => return Err(bad(&format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ct = Scalar::parse(ct).ok_or_else(|| bad("bad list count type"))?;
                let it = Scalar::parse(it).ok_or_else(|| bad("bad list item type"))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| bad("bad property type"))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| bad("missing format line"))?;
    let body = &bytes[body_start..];
    let mut ascii_tokens = if binary {
        None
    } else {
        Some(
            std::str::from_utf8(body)
                .map_err(|e| bad(&e.to_string()))?
                .split_whitespace(),
        )
    };
    let mut bin = body;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [f64::NAN; 3];
            let mut poly: Vec<usize> = Vec::new();
            for prop in &el.props {
                let mut read = |ty: Scalar| -> Result<f64> {
                    match ascii_tokens.as_mut() {
                        Some(t) => t
                            .next()
                            .ok_or_else(|| bad("truncated ascii body"))?
                            .parse::<f64>()
                            .map_err(|e| bad(&e.to_string())),
                        None => ty.read_bin(&mut bin).map_err(|_| bad("truncated binary body")),
                    }
                };
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = read(*ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = read(*ct)? as usize;
                        let items: Vec<f64> = (0..n).map(|_| read(*it)).collect::<Result<_>>()?;
                        if name == "vertex_indices" || name == "vertex_index" {
                            poly = items.into_iter().map(|v| v as usize).collect();
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    if xyz.iter().any(|v| v.is_nan()) {
                        return Err(bad("vertex missing x/y/z"));
                    }
                    vertices.push(Point3::from(xyz));
                }
                "face" => {
                    if poly.len() < 3 {
                        return Err(bad("face with fewer than 3 indices"));
                    }
                    for k in 1..poly.len() - 1 {
                        faces.push([poly[0], poly[k], poly[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    Ok((vertices, faces))
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Writes a PLY. When the mesh carries a per-vertex attribute it is stored as
/// `property float uncertainty`.
pub fn write_ply(mesh: &TriangleMesh, path: &Path, format: PlyFormat) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices().len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    let attr = mesh.attribute();
    if attr.is_some() {
        writeln!(w, "property float uncertainty")?;
    }
    writeln!(w, "element face {}", mesh.faces().len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    for (i, v) in mesh.vertices().iter().enumerate() {
        match format {
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
                if let Some(a) = attr {
                    write!(w, " {}", a[i] as f32)?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in v.iter() {
                    w.write_f32::<LittleEndian>(*c as f32)?;
                }
                if let Some(a) = attr {
                    w.write_f32::<LittleEndian>(a[i] as f32)?;
                }
            }
        }
    }
    for f in mesh.faces() {
        match format {
            PlyFormat::Ascii => writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?,
            PlyFormat::BinaryLittleEndian => {
                w.write_u8(3)?;
                for &i in f {
                    w.write_i32::<LittleEndian>(i as i32)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    const CUBE_OBJ: &str = "\
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v -0.5 0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v -0.5 0.5 0.5
v 0.5 0.5 0.5
f 1 3 2
f 2 3 4
f 5 6 7
f 6 8 7
f 1 2 5
f 2 6 5
f 3 7 4
f 4 7 8
f 1 5 3
f 3 5 7
f 2 4 6
f 4 8 6
";

    #[test]
    fn loads_unit_cube_obj() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cube.obj");
        fs::write(&p, CUBE_OBJ).unwrap();
        let m = load_mesh(&p, 1.0).unwrap();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.faces().len(), 12);
        m.check_watertight().unwrap();
    }

    #[test]
    fn degenerate_obj_face_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.obj");
        fs::write(&p, CUBE_OBJ.replacen("f 1 3 2", "f 1 1 2", 1)).unwrap();
        assert!(matches!(load_mesh(&p, 1.0), Err(Error::DegenerateFace { .. })));
    }

    #[test]
    fn empty_obj_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.obj");
        fs::write(&p, "# nothing\n").unwrap();
        assert!(matches!(load_mesh(&p, 1.0), Err(Error::EmptyMesh)));
    }

    #[test]
    fn unit_scale_applies() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cube_mm.obj");
        fs::write(&p, CUBE_OBJ).unwrap();
        let m = load_mesh(&p, 1e-3).unwrap();
        assert!((m.bounding_box().extent() - Vector3::repeat(1e-3)).norm() < 1e-15);
    }

    #[test]
    fn sphere_ply_both_encodings() {
        let sphere = TriangleMesh::icosphere(1.0, 3);
        let dir = tempfile::tempdir().unwrap();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let p = dir.path().join(format!("s_{fmt:?}.ply"));
            let with_attr = sphere
                .clone()
                .with_attribute(vec![0.25; sphere.vertices().len()])
                .unwrap();
            write_ply(&with_attr, &p, fmt).unwrap();
            let m = load_mesh(&p, 1.0).unwrap();
            assert_eq!(m.vertices().len(), 642);
            assert_eq!(m.euler_characteristic(), 2);
            m.check_watertight().unwrap();
        }
    }

    #[test]
    fn unknown_extension() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.stl");
        fs::write(&p, "solid").unwrap();
        assert!(matches!(load_mesh(&p, 1.0), Err(Error::Parse { .. })));
    }
}
