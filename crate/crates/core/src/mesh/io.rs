//! OFF / ASCII PLY / OBJ readers, OFF and colored-PLY writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::{check_genus0, Face, TriangleMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    PlyAscii,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(Self::Off),
            "ply" => Some(Self::PlyAscii),
            "obj" => Some(Self::Obj),
            _ => None,
        }
    }
}

/// Loads and validates a closed genus-0 mesh, re-orienting it outward.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path)?;
    let mesh = read_mesh(&text, format)?;
    check_genus0(&mesh)?;
    Ok(mesh.oriented_outward())
}

/// Parses mesh text without topology validation. Polygons are fan-triangulated.
pub fn read_mesh(text: &str, format: MeshFormat) -> Result<TriangleMesh> {
    let (vertices, faces) = match format {
        MeshFormat::Off => parse_off(text)?,
        MeshFormat::PlyAscii => parse_ply(text)?,
        MeshFormat::Obj => parse_obj(text)?,
    };
    TriangleMesh::new(vertices, faces)
}

fn perr(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn parse_f64(tok: Option<&str>, what: &str) -> Result<f64> {
    tok.ok_or_else(|| perr(format!("missing {what}")))?
        .parse::<f64>()
        .map_err(|e| perr(format!("bad {what}: {e}")))
}

fn parse_usize(tok: Option<&str>, what: &str) -> Result<usize> {
    tok.ok_or_else(|| perr(format!("missing {what}")))?
        .parse::<usize>()
        .map_err(|e| perr(format!("bad {what}: {e}")))
}

fn fan(poly: &[usize], faces: &mut Vec<Face>) -> Result<()> {
    if poly.len() < 3 {
        return Err(perr(format!("polygon with {} vertices", poly.len())));
    }
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
    Ok(())
}

fn parse_off(text: &str) -> Result<(Vec<Vector3<f64>>, Vec<Face>)> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let header = tokens.next().ok_or_else(|| perr("empty OFF file"))?;
    if header != "OFF" {
        return Err(perr(format!("expected OFF header, found {header:?}")));
    }
    let nv = parse_usize(tokens.next(), "vertex count")?;
    let nf = parse_usize(tokens.next(), "face count")?;
    let _ne = parse_usize(tokens.next(), "edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let what = format!("coordinate of vertex {i}");
        let x = parse_f64(tokens.next(), &what)?;
        let y = parse_f64(tokens.next(), &what)?;
        let z = parse_f64(tokens.next(), &what)?;
        vertices.push(Vector3::new(x, y, z));
    }
    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let k = parse_usize(tokens.next(), &format!("arity of face {i}"))?;
        let poly = (0..k)
            .map(|_| parse_usize(tokens.next(), &format!("index of face {i}")))
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut faces)?;
    }
    Ok((vertices, faces))
}

fn parse_ply(text: &str) -> Result<(Vec<Vector3<f64>>, Vec<Face>)> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(perr("missing ply magic"));
    }
    let mut nv = None;
    let mut nf = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = String::new();
    for line in lines.by_ref() {
        let mut t = line.split_whitespace();
        match t.next() {
            Some("format") => {
                if t.next() != Some("ascii") {
                    return Err(perr("only ASCII PLY is supported"));
                }
            }
            Some("element") => {
                current = t.next().unwrap_or("").to_string();
                let count = parse_usize(t.next(), "element count")?;
                match current.as_str() {
                    "vertex" => nv = Some(count),
                    "face" => nf = Some(count),
                    _ => {}
                }
            }
            Some("property") if current == "vertex" => {
                vertex_props.push(t.last().unwrap_or("").to_string());
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let nv = nv.ok_or_else(|| perr("no vertex element"))?;
    let nf = nf.ok_or_else(|| perr("no face element"))?;
    let pos = |name: &str| {
        vertex_props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| perr(format!("vertex property {name} missing")))
    };
    let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
    let mut body = lines.filter(|l| !l.trim().is_empty());
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let line = body.next().ok_or_else(|| perr(format!("missing vertex {i}")))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        let get = |k: usize| parse_f64(vals.get(k).copied(), "vertex coordinate");
        vertices.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
    }
    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let line = body.next().ok_or_else(|| perr(format!("missing face {i}")))?;
        let mut t = line.split_whitespace();
        let k = parse_usize(t.next(), "face arity")?;
        let poly = (0..k)
            .map(|_| parse_usize(t.next(), "face index"))
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut faces)?;
    }
    Ok((vertices, faces))
}

fn parse_obj(text: &str) -> Result<(Vec<Vector3<f64>>, Vec<Face>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut t = line.split_whitespace();
        match t.next() {
            Some("v") => {
                let x = parse_f64(t.next(), "x")?;
                let y = parse_f64(t.next(), "y")?;
                let z = parse_f64(t.next(), "z")?;
                vertices.push(Vector3::new(x, y, z));
            }
            Some("f") => {
                let poly = t
                    .map(|tok| {
                        let idx = tok.split('/').next().unwrap_or("");
                        let i: i64 = idx
                            .parse()
                            .map_err(|e| perr(format!("line {}: bad face index: {e}", ln + 1)))?;
                        let n = vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(perr(format!("line {}: face index {i}", ln + 1)));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                fan(&poly, &mut faces)?;
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// OFF text with shortest round-trip float formatting, so a reload is
/// bit-identical.
pub fn write_off(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 60 + mesh.faces.len() * 20);
    let _ = writeln!(s, "OFF");
    let _ = writeln!(s, "{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn save_off(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    fs::write(path, write_off(mesh))?;
    Ok(())
}

/// ASCII PLY with an 8-bit RGB color per vertex.
pub fn write_colored_ply(mesh: &TriangleMesh, colors: &[[u8; 3]]) -> Result<String> {
    if colors.len() != mesh.vertices.len() {
        return Err(Error::LengthMismatch(colors.len(), mesh.vertices.len()));
    }
    let mut s = String::new();
    let _ = writeln!(s, "ply\nformat ascii 1.0");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    let _ = writeln!(s, "property double x\nproperty double y\nproperty double z");
    let _ = writeln!(s, "property uchar red\nproperty uchar green\nproperty uchar blue");
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    let _ = writeln!(s, "property list uchar int vertex_indices\nend_header");
    for (v, c) in mesh.vertices.iter().zip(colors) {
        let _ = writeln!(s, "{:?} {:?} {:?} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    Ok(s)
}
