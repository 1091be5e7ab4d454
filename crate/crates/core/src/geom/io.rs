//! Mesh files: ASCII OBJ and binary little-endian PLY.

use std::fmt::Write as _;
use std::path::Path;

use super::mesh::TriangleMesh;
use super::vec::Vec3;
use crate::error::{Error, Result};
use crate::fsutil::{read_file, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::InvalidArgument(format!(
                "unsupported mesh extension: {} (expected .obj or .ply)",
                path.display()
            ))),
        }
    }
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let bytes = read_file(path)?;
    let name = path.display().to_string();
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => {
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::parse(&name, format!("byte {}", e.utf8_error().valid_up_to()), "invalid UTF-8"))?;
            parse_obj(&text, &name)
        }
        MeshFormat::Ply => parse_ply(&bytes, &name),
    }
}

pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let bytes = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => write_obj(mesh).into_bytes(),
        MeshFormat::Ply => write_ply(mesh),
    };
    write_atomic(path, &bytes)
}

/// Vertex coordinates use shortest round-trip formatting, so OBJ is lossless in f64.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertices().len() + mesh.triangle_count()));
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn parse_obj(text: &str, name: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // (line number, face number) per polygon, used to name out-of-range faces
    let mut face_lines: Vec<(usize, usize, Vec<i64>)> = Vec::new();
    let mut face_no = 0;
    for (ln, line) in text.lines().enumerate() {
        let lineno = ln + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in c.iter_mut() {
                    let tok = it.next().ok_or_else(|| {
                        Error::parse(name, format!("line {lineno}"), "vertex needs three coordinates")
                    })?;
                    *slot = tok.parse::<f64>().map_err(|_| {
                        Error::parse(name, format!("line {lineno}"), format!("bad coordinate {tok:?}"))
                    })?;
                }
                vertices.push(Vec3::from_array(c));
            }
            Some("f") => {
                face_no += 1;
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| {
                        Error::parse(name, format!("line {lineno}"), format!("bad face index {tok:?}"))
                    })?;
                    let resolved = if i < 0 { vertices.len() as i64 + i + 1 } else { i };
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(Error::parse(
                        name,
                        format!("line {lineno}"),
                        format!("face {face_no} has fewer than three vertices"),
                    ));
                }
                face_lines.push((lineno, face_no, idx));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    for (lineno, face_no, idx) in face_lines {
        if let Some(bad) = idx.iter().find(|&&i| i < 1 || i > n) {
            return Err(Error::parse(
                name,
                format!("line {lineno}"),
                format!("face {face_no} references vertex {bad} but only {n} vertices exist"),
            ));
        }
        for k in 1..idx.len() - 1 {
            triangles.push([(idx[0] - 1) as u32, (idx[k] - 1) as u32, (idx[k + 1] - 1) as u32]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn write_ply(mesh: &TriangleMesh) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices().len(),
        mesh.triangle_count()
    );
    let mut out = Vec::with_capacity(header.len() + 12 * mesh.vertices().len() + 13 * mesh.triangle_count());
    out.extend_from_slice(header.as_bytes());
    for v in mesh.vertices() {
        for c in v.to_array() {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
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

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::parse(
                self.name,
                format!("offset {}", self.pos),
                "unexpected end of file",
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self, s: Scalar) -> Result<f64> {
        let b = self.take(s.size())?;
        Ok(s.read(b))
    }
}

pub fn parse_ply(data: &[u8], name: &str) -> Result<TriangleMesh> {
    let end_marker = b"end_header\n";
    let header_end = data
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| Error::parse(name, "header", "missing end_header"))?
        + end_marker.len();
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| Error::parse(name, "header", "header is not ASCII"))?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(name, "line 1", "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    for (ln, line) in lines {
        let lineno = ln + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, ..] => {
                return Err(Error::parse(
                    name,
                    format!("line {lineno}"),
                    format!("unsupported PLY format {other:?} (binary_little_endian only)"),
                ))
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            ["element", ename, count] => {
                let count = count.parse().map_err(|_| {
                    Error::parse(name, format!("line {lineno}"), format!("bad element count {count:?}"))
                })?;
                elements.push(Element {
                    name: ename.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", ct, it, pname] => {
                let (ct, it) = match (Scalar::parse(ct), Scalar::parse(it)) {
                    (Some(c), Some(i)) => (c, i),
                    _ => {
                        return Err(Error::parse(name, format!("line {lineno}"), "unknown list property type"))
                    }
                };
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(name, format!("line {lineno}"), "property before element"))?
                    .props
                    .push(Property::List(pname.to_string(), ct, it));
            }
            ["property", ty, pname] => {
                let ty = Scalar::parse(ty).ok_or_else(|| {
                    Error::parse(name, format!("line {lineno}"), format!("unknown property type {ty:?}"))
                })?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(name, format!("line {lineno}"), "property before element"))?
                    .props
                    .push(Property::Scalar(pname.to_string(), ty));
            }
            _ => {
                return Err(Error::parse(
                    name,
                    format!("line {lineno}"),
                    format!("unrecognized header line {line:?}"),
                ))
            }
        }
    }
    if !format_ok {
        return Err(Error::parse(name, "header", "missing format line"));
    }

    let mut cur = Cursor {
        data,
        pos: header_end,
        name,
    };
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                let mut slots = [None; 3];
                for (k, p) in el.props.iter().enumerate() {
                    if let Property::Scalar(n, _) = p {
                        match n.as_str() {
                            "x" => slots[0] = Some(k),
                            "y" => slots[1] = Some(k),
                            "z" => slots[2] = Some(k),
                            _ => {}
                        }
                    }
                }
                if slots.iter().any(|s| s.is_none()) {
                    return Err(Error::parse(name, "header", "vertex element lacks x, y or z"));
                }
                vertices.reserve(el.count);
                for _ in 0..el.count {
                    let mut c = [0.0; 3];
                    for (k, p) in el.props.iter().enumerate() {
                        let v = read_property(&mut cur, p)?;
                        for (axis, s) in slots.iter().enumerate() {
                            if *s == Some(k) {
                                c[axis] = v;
                            }
                        }
                    }
                    vertices.push(Vec3::from_array(c));
                }
            }
            "face" => {
                for f in 0..el.count {
                    let at = cur.pos;
                    for p in &el.props {
                        match p {
                            Property::List(n, ct, it) if n == "vertex_indices" || n == "vertex_index" => {
                                let count = cur.scalar(*ct)? as usize;
                                let mut idx = Vec::with_capacity(count);
                                for _ in 0..count {
                                    idx.push(cur.scalar(*it)?);
                                }
                                if count < 3 {
                                    return Err(Error::parse(
                                        name,
                                        format!("offset {at}"),
                                        format!("face {f} has fewer than three vertices"),
                                    ));
                                }
                                if let Some(bad) = idx.iter().find(|&&i| i < 0.0 || i >= vertices.len() as f64) {
                                    return Err(Error::parse(
                                        name,
                                        format!("offset {at}"),
                                        format!("face {f} references vertex {bad} but only {} vertices exist", vertices.len()),
                                    ));
                                }
                                for k in 1..count - 1 {
                                    triangles.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
                                }
                            }
                            other => {
                                read_property(&mut cur, other)?;
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for p in &el.props {
                        read_property(&mut cur, p)?;
                    }
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

fn read_property(cur: &mut Cursor<'_>, p: &Property) -> Result<f64> {
    match p {
        Property::Scalar(_, s) => cur.scalar(*s),
        Property::List(_, ct, it) => {
            let n = cur.scalar(*ct)? as usize;
            cur.take(n * it.size())?;
            Ok(n as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn obj_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.obj");
        let mut m = tetra();
        m = TriangleMesh::new(
            m.vertices().iter().map(|&v| v * (1.0 / 3.0) + Vec3::splat(0.1)).collect(),
            m.triangles().to_vec(),
        )
        .unwrap();
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ply");
        let m = tetra();
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn obj_out_of_range_face_names_face() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 9\n", "x.obj").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("face 2"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn obj_handles_slashes_and_quads() {
        let m = parse_obj(
            "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n",
            "q.obj",
        )
        .unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn hand_written_ply_cube() {
        let mut data = b"ply\nformat binary_little_endian 1.0\ncomment hand written\nelement vertex 8\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 6\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for i in 0..8u8 {
            for bit in [1u8, 2, 4] {
                let c: f32 = if i & bit != 0 { 1.0 } else { 0.0 };
                data.extend_from_slice(&c.to_le_bytes());
            }
            data.push(200);
        }
        let quads: [[i32; 4]; 6] = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        for q in quads {
            data.push(4);
            for i in q {
                data.extend_from_slice(&i.to_le_bytes());
            }
        }
        let m = parse_ply(&data, "cube.ply").unwrap();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangle_count(), 12);
        assert!(m.is_watertight());
        assert!((m.surface_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_ply_reports_offset() {
        let m = tetra();
        let mut bytes = write_ply(&m);
        bytes.truncate(bytes.len() - 5);
        let err = parse_ply(&bytes, "t.ply").unwrap_err().to_string();
        assert!(err.contains("offset"), "{err}");
    }
}
