//! Mesh file I/O: ASCII OBJ (`v`/`f` records) and binary little-endian PLY.
//!
//! Both readers are strict — anything outside the documented subset is a
//! parse error carrying the file path and byte offset — because these files
//! are pipeline artifacts, not arbitrary third-party exports.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Point3;

use super::TriMesh;
use crate::error::{Error, Result};

/// Loads a mesh, picking the format from the file extension
/// (`.obj` or `.ply`, case-insensitive).
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => load_obj(path),
        Some("ply") => load_ply(path),
        _ => Err(Error::Parameter(format!(
            "unsupported mesh extension on {} (expected .obj or .ply)",
            path.display()
        ))),
    }
}

/// Reads an ASCII OBJ containing only `v x y z` and `f i j k` records
/// (1-based triangle indices), plus `#` comments and blank lines.
pub fn load_obj(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len() as u64;
        let body = line.trim_end_matches(['\n', '\r']);
        let tok_at = |tok: &str| line_start + (tok.as_ptr() as u64 - body.as_ptr() as u64);

        let mut tokens = body.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        if keyword.starts_with('#') {
            continue;
        }
        match keyword {
            "v" => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens.next().ok_or_else(|| {
                        Error::parse(path, line_start, "vertex record needs 3 coordinates")
                    })?;
                    *c = tok.parse::<f64>().map_err(|_| {
                        Error::parse(path, tok_at(tok), format!("invalid coordinate {tok:?}"))
                    })?;
                }
                if let Some(extra) = tokens.next() {
                    return Err(Error::parse(
                        path,
                        tok_at(extra),
                        "vertex record has more than 3 coordinates",
                    ));
                }
                vertices.push(Point3::from(coords));
            }
            "f" => {
                let mut idx = [0usize; 3];
                for slot in &mut idx {
                    let tok = tokens.next().ok_or_else(|| {
                        Error::parse(path, line_start, "face record needs 3 vertex indices")
                    })?;
                    let one_based: usize = tok.parse().map_err(|_| {
                        Error::parse(
                            path,
                            tok_at(tok),
                            format!("invalid face index {tok:?} (plain 1-based integers only)"),
                        )
                    })?;
                    if one_based == 0 || one_based > vertices.len() {
                        return Err(Error::parse(
                            path,
                            tok_at(tok),
                            format!(
                                "face index {one_based} out of range (have {} vertices so far)",
                                vertices.len()
                            ),
                        ));
                    }
                    *slot = one_based - 1;
                }
                if let Some(extra) = tokens.next() {
                    return Err(Error::parse(
                        path,
                        tok_at(extra),
                        "face record has more than 3 indices (triangles only)",
                    ));
                }
                faces.push(idx);
            }
            other => {
                return Err(Error::parse(
                    path,
                    line_start,
                    format!("unsupported OBJ record {other:?} (only v and f are accepted)"),
                ));
            }
        }
    }
    TriMesh::new(vertices, faces)
}

/// Writes a mesh as ASCII OBJ. Coordinates use shortest round-trip
/// formatting, so a load of the written file reproduces them exactly.
pub fn save_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in mesh.faces() {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, PartialEq)]
enum Scalar {
    F32,
    F64,
    I8,
    U8,
    I32,
    U32,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        match name {
            "float" | "float32" => Some(Scalar::F32),
            "double" | "float64" => Some(Scalar::F64),
            "char" | "int8" => Some(Scalar::I8),
            "uchar" | "uint8" => Some(Scalar::U8),
            "int" | "int32" => Some(Scalar::I32),
            "uint" | "uint32" => Some(Scalar::U32),
            _ => None,
        }
    }

}

struct PlyCursor<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> PlyCursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::parse(
                self.path,
                self.pos as u64,
                format!("unexpected end of file while reading {what}"),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_f64(&mut self, ty: Scalar, what: &str) -> Result<f64> {
        Ok(match ty {
            Scalar::F32 => f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()),
            _ => unreachable!("coordinate properties are floating point"),
        })
    }

    fn read_int(&mut self, ty: Scalar, what: &str) -> Result<i64> {
        let at = self.pos as u64;
        let v = match ty {
            Scalar::I8 => self.take(1, what)?[0] as i8 as i64,
            Scalar::U8 => self.take(1, what)?[0] as i64,
            Scalar::I32 => i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as i64,
            Scalar::U32 => u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as i64,
            _ => {
                return Err(Error::parse(
                    self.path,
                    at,
                    format!("{what} must be an integer property"),
                ))
            }
        };
        Ok(v)
    }
}

/// Reads a binary little-endian PLY with `x`/`y`/`z` vertex coordinates
/// (float32 or float64) and a triangle list (integer indices).
pub fn load_ply(path: &Path) -> Result<TriMesh> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;

    // --- header -----------------------------------------------------------
    let mut pos = 0usize;
    let mut line = |what: &str| -> Result<(String, u64)> {
        let start = pos;
        let rel = data[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| {
            Error::parse(path, start as u64, format!("unterminated header line ({what})"))
        })?;
        let raw = &data[pos..pos + rel];
        pos += rel + 1;
        let text = std::str::from_utf8(raw)
            .map_err(|_| Error::parse(path, start as u64, "header line is not UTF-8"))?;
        Ok((text.trim_end_matches('\r').to_string(), start as u64))
    };

    let (magic, at) = line("magic")?;
    if magic != "ply" {
        return Err(Error::parse(path, at, "missing ply magic"));
    }
    let (format, at) = line("format")?;
    if format != "format binary_little_endian 1.0" {
        return Err(Error::parse(
            path,
            at,
            format!("unsupported format {format:?} (binary_little_endian 1.0 only)"),
        ));
    }

    let mut vertex_count: Option<usize> = None;
    let mut face_count: Option<usize> = None;
    let mut coord_types: Vec<Scalar> = Vec::new();
    let mut coord_names: Vec<String> = Vec::new();
    let mut list_types: Option<(Scalar, Scalar)> = None;
    #[derive(PartialEq)]
    enum Section {
        None,
        Vertex,
        Face,
    }
    let mut section = Section::None;

    loop {
        let (text, at) = line("header")?;
        let mut tokens = text.split_whitespace();
        match tokens.next() {
            Some("comment") => {}
            Some("element") => {
                let name = tokens.next().unwrap_or("");
                let count: usize = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(path, at, "element line needs a count"))?;
                section = match name {
                    "vertex" => {
                        vertex_count = Some(count);
                        Section::Vertex
                    }
                    "face" => {
                        face_count = Some(count);
                        Section::Face
                    }
                    other => {
                        return Err(Error::parse(
                            path,
                            at,
                            format!("unsupported element {other:?}"),
                        ))
                    }
                };
            }
            Some("property") => match section {
                Section::Vertex => {
                    let ty = tokens.next().unwrap_or("");
                    let name = tokens.next().unwrap_or("");
                    let scalar = Scalar::parse(ty).ok_or_else(|| {
                        Error::parse(path, at, format!("unknown property type {ty:?}"))
                    })?;
                    if !matches!(scalar, Scalar::F32 | Scalar::F64) {
                        return Err(Error::parse(
                            path,
                            at,
                            format!("vertex property {name:?} must be float32 or float64"),
                        ));
                    }
                    coord_types.push(scalar);
                    coord_names.push(name.to_string());
                }
                Section::Face => {
                    if tokens.next() != Some("list") {
                        return Err(Error::parse(path, at, "face property must be a list"));
                    }
                    let count_ty = tokens.next().and_then(Scalar::parse).ok_or_else(|| {
                        Error::parse(path, at, "unknown list count type")
                    })?;
                    let index_ty = tokens.next().and_then(Scalar::parse).ok_or_else(|| {
                        Error::parse(path, at, "unknown list index type")
                    })?;
                    if matches!(index_ty, Scalar::F32 | Scalar::F64) {
                        return Err(Error::parse(path, at, "face indices must be integers"));
                    }
                    list_types = Some((count_ty, index_ty));
                }
                Section::None => {
                    return Err(Error::parse(path, at, "property before any element"))
                }
            },
            Some("end_header") => break,
            other => {
                return Err(Error::parse(
                    path,
                    at,
                    format!("unexpected header line {other:?}"),
                ))
            }
        }
    }

    let vertex_count =
        vertex_count.ok_or_else(|| Error::parse(path, pos as u64, "missing vertex element"))?;
    let face_count =
        face_count.ok_or_else(|| Error::parse(path, pos as u64, "missing face element"))?;
    if coord_names != ["x", "y", "z"] {
        return Err(Error::parse(
            path,
            pos as u64,
            format!("vertex properties must be exactly x, y, z (got {coord_names:?})"),
        ));
    }
    let (count_ty, index_ty) =
        list_types.ok_or_else(|| Error::parse(path, pos as u64, "missing face list property"))?;

    // --- body -------------------------------------------------------------
    let mut cur = PlyCursor { path, data: &data, pos };
    let mut vertices = Vec::with_capacity(vertex_count);
    for _ in 0..vertex_count {
        let x = cur.read_f64(coord_types[0], "vertex x")?;
        let y = cur.read_f64(coord_types[1], "vertex y")?;
        let z = cur.read_f64(coord_types[2], "vertex z")?;
        vertices.push(Point3::new(x, y, z));
    }
    let mut faces = Vec::with_capacity(face_count);
    for _ in 0..face_count {
        let at = cur.pos as u64;
        let n = cur.read_int(count_ty, "face vertex count")?;
        if n != 3 {
            return Err(Error::parse(
                path,
                at,
                format!("face with {n} vertices (triangles only)"),
            ));
        }
        let mut idx = [0usize; 3];
        for slot in &mut idx {
            let at = cur.pos as u64;
            let i = cur.read_int(index_ty, "face index")?;
            if i < 0 || i as usize >= vertex_count {
                return Err(Error::parse(
                    path,
                    at,
                    format!("face index {i} out of range 0..{vertex_count}"),
                ));
            }
            *slot = i as usize;
        }
        faces.push(idx);
    }
    if cur.pos != data.len() {
        return Err(Error::parse(
            path,
            cur.pos as u64,
            format!("{} trailing bytes after the last face", data.len() - cur.pos),
        ));
    }
    TriMesh::new(vertices, faces)
}

/// Writes a binary little-endian PLY with float64 coordinates and int32
/// triangle indices. Round-trips coordinates bit-exactly.
pub fn save_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    );
    buf.extend_from_slice(header.as_bytes());
    for v in mesh.vertices() {
        for c in [v.x, v.y, v.z] {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    for f in mesh.faces() {
        buf.push(3u8);
        for &i in f {
            let i: i32 = i.try_into().map_err(|_| {
                Error::Structural(format!("vertex index {i} exceeds the int32 range"))
            })?;
            buf.extend_from_slice(&i.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
