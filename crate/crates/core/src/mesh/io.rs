//! ASCII OBJ and PLY readers and writers.

use std::fmt::Write as _;
use std::path::Path;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::Vec3;

/// Loads an ASCII OBJ or PLY, chosen by extension. Polygons are fan-triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ply") => parse_ply(&text),
        _ => parse_obj(&text),
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_floats<'a>(it: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec3> {
    let v: Vec<f64> = it
        .take(3)
        .map(|s| s.parse::<f64>().map_err(|e| parse_err(line, format!("bad number `{s}`: {e}"))))
        .collect::<Result<_>>()?;
    if v.len() != 3 {
        return Err(parse_err(line, "expected three coordinates"));
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

/// Resolves a 1-based (or negative, relative) OBJ index.
fn obj_index(s: &str, count: usize, face: usize, line: usize) -> Result<u32> {
    let i: i64 = s
        .parse()
        .map_err(|e| parse_err(line, format!("bad index `{s}`: {e}")))?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(Error::IndexOutOfRange {
            face,
            index: i,
            count,
        });
    }
    Ok(resolved as u32)
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    // (vertex index, optional normal index) per polygon corner
    let mut polys: Vec<(usize, Vec<(&str, Option<&str>)>)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut it = content.split_whitespace();
        match it.next() {
            Some("v") => vertices.push(parse_floats(it, line)?),
            Some("vn") => normals.push(parse_floats(it, line)?),
            Some("f") => {
                let corners: Vec<_> = it
                    .map(|tok| {
                        let mut parts = tok.split('/');
                        let v = parts.next().unwrap_or("");
                        let _vt = parts.next();
                        let vn = parts.next().filter(|s| !s.is_empty());
                        (v, vn)
                    })
                    .collect();
                if corners.len() < 3 {
                    return Err(parse_err(line, "face with fewer than three corners"));
                }
                polys.push((line, corners));
            }
            _ => {}
        }
    }
    let mut faces = Vec::new();
    let mut normal_faces = Vec::new();
    let all_have_normals = !normals.is_empty() && polys.iter().all(|(_, c)| c.iter().all(|(_, n)| n.is_some()));
    for (line, corners) in &polys {
        let face = faces.len();
        let vi: Vec<u32> = corners
            .iter()
            .map(|(v, _)| obj_index(v, vertices.len(), face, *line))
            .collect::<Result<_>>()?;
        let ni: Vec<u32> = if all_have_normals {
            corners
                .iter()
                .map(|(_, n)| obj_index(n.unwrap_or(""), normals.len(), face, *line))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        for k in 1..vi.len() - 1 {
            faces.push([vi[0], vi[k], vi[k + 1]]);
            if all_have_normals {
                normal_faces.push([ni[0], ni[k], ni[k + 1]]);
            }
        }
    }
    if all_have_normals {
        TriangleMesh::with_normals(vertices, faces, normals, normal_faces)
    } else {
        TriangleMesh::new(vertices, faces)
    }
}

pub fn parse_ply(text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing `ply` magic")),
    }
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (line, l) = lines.next().ok_or_else(|| parse_err(0, "unterminated header"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(parse_err(line, format!("unsupported PLY format `{fmt}`")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|e| parse_err(line, format!("bad element count: {e}")))?,
                props: Vec::new(),
            }),
            ["property", .., name] => {
                if let Some(e) = elements.last_mut() {
                    e.props.push(name.to_string());
                }
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let mut vertices = Vec::new();
    let mut vnormals = Vec::new();
    let mut faces = Vec::new();
    for e in &elements {
        for _ in 0..e.count {
            let (line, l) = lines.next().ok_or_else(|| parse_err(0, format!("truncated `{}` data", e.name)))?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|err| parse_err(line, format!("bad value `{s}`: {err}"))))
                .collect::<Result<_>>()?;
            match e.name.as_str() {
                "vertex" => {
                    let get = |name: &str| e.props.iter().position(|p| p == name).and_then(|i| vals.get(i).copied());
                    let (Some(x), Some(y), Some(z)) = (get("x"), get("y"), get("z")) else {
                        return Err(parse_err(line, "vertex without x/y/z"));
                    };
                    vertices.push(Vec3::new(x, y, z));
                    if let (Some(nx), Some(ny), Some(nz)) = (get("nx"), get("ny"), get("nz")) {
                        vnormals.push(Vec3::new(nx, ny, nz));
                    }
                }
                "face" => {
                    let n = *vals.first().ok_or_else(|| parse_err(line, "empty face record"))? as usize;
                    if n < 3 || vals.len() < n + 1 {
                        return Err(parse_err(line, "face with fewer than three corners"));
                    }
                    let face = faces.len();
                    let idx: Vec<u32> = vals[1..=n]
                        .iter()
                        .map(|&v| {
                            if v < 0.0 || v as usize >= vertices.len() {
                                Err(Error::IndexOutOfRange {
                                    face,
                                    index: v as i64,
                                    count: vertices.len(),
                                })
                            } else {
                                Ok(v as u32)
                            }
                        })
                        .collect::<Result<_>>()?;
                    for k in 1..n - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    if !vnormals.is_empty() && vnormals.len() == vertices.len() {
        let ni = faces.clone();
        TriangleMesh::with_normals(vertices, faces, vnormals, ni)
    } else {
        TriangleMesh::new(vertices, faces)
    }
}

/// OBJ text with `v`, `vn` and `f v//vn` records.
pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 30);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for n in &mesh.normals {
        let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
    }
    for (f, n) in mesh.faces.iter().zip(&mesh.normal_indices) {
        let _ = writeln!(
            s,
            "f {}//{} {}//{} {}//{}",
            f[0] + 1,
            n[0] + 1,
            f[1] + 1,
            n[1] + 1,
            f[2] + 1,
            n[2] + 1
        );
    }
    s
}

pub fn write_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}

/// ASCII PLY with positions and faces only.
pub fn ply_string(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn write_ply(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ply_string(mesh)).map_err(|e| Error::io(path, e))
}
