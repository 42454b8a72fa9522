//! Readers and writers for the three interchange formats the toolkit
//! speaks: XYZ text clouds, binary little-endian PLY clouds, and ASCII OBJ
//! meshes.
//!
//! Writers format floats with Rust's shortest-round-trip notation, so
//! XYZ/OBJ files reproduce the in-memory `f64` values exactly and writing
//! the same data twice yields byte-identical files. PLY stores positions
//! as `f32` (the conventional scanner format); reading one back rounds to
//! the nearest `f32`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;
use thiserror::Error;

use crate::geometry::{PointCloud, TriMesh};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Reads a whitespace-separated `x y z` text file, one point per line.
/// Blank lines and `#` comments are permitted.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud, IoError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                lineno + 1,
                format!("expected 3 coordinates, found {}", fields.len()),
            ));
        }
        let mut coords = [0.0f64; 3];
        for (slot, field) in coords.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| {
                parse_err(path, lineno + 1, format!("bad float {field:?}"))
            })?;
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud::new(points))
}

/// Writes a cloud as `x y z` lines with exact (shortest round-trip) float
/// formatting.
pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for p in &cloud.points {
        writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a binary little-endian PLY containing a vertex element with
/// `float x`, `float y`, `float z` as its leading properties.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud, IoError> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);

    let mut line = String::new();
    let mut lineno = 0;
    let read_line = |reader: &mut BufReader<File>, line: &mut String| -> Result<usize, IoError> {
        line.clear();
        let n = reader.read_line(line)?;
        Ok(n)
    };

    read_line(&mut reader, &mut line)?;
    lineno += 1;
    if line.trim_end() != "ply" {
        return Err(parse_err(path, lineno, "missing `ply` magic"));
    }

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    loop {
        if read_line(&mut reader, &mut line)? == 0 {
            return Err(parse_err(path, lineno, "header ended before end_header"));
        }
        lineno += 1;
        let text = line.trim_end();
        let fields: Vec<&str> = text.split_whitespace().collect();
        match fields.as_slice() {
            ["format", kind, "1.0"] => {
                if *kind != "binary_little_endian" {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("unsupported format {kind:?}, expected binary_little_endian"),
                    ));
                }
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                in_vertex_element = true;
                vertex_count = Some(n.parse().map_err(|_| {
                    parse_err(path, lineno, format!("bad vertex count {n:?}"))
                })?);
            }
            ["element", ..] => {
                return Err(parse_err(
                    path,
                    lineno,
                    "only a single vertex element is supported",
                ));
            }
            ["property", "float", name] if in_vertex_element => {
                properties.push((*name).to_string());
            }
            ["property", ..] => {
                return Err(parse_err(path, lineno, "unsupported property type"));
            }
            ["end_header"] => break,
            _ => {
                return Err(parse_err(path, lineno, format!("unrecognised header line {text:?}")));
            }
        }
    }

    let count = vertex_count.ok_or_else(|| format_err(path, "no vertex element in header"))?;
    if properties != ["x", "y", "z"] {
        return Err(format_err(
            path,
            format!("expected float properties x, y, z; found {properties:?}"),
        ));
    }

    let mut buf = vec![0u8; count * 12];
    reader.read_exact(&mut buf)?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after vertex data"));
    }

    let mut points = Vec::with_capacity(count);
    for chunk in buf.chunks_exact(12) {
        let x = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let y = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
        let z = f32::from_le_bytes(chunk[8..12].try_into().unwrap());
        points.push(Point3::new(x as f64, y as f64, z as f64));
    }
    Ok(PointCloud::new(points))
}

/// Writes a cloud as binary little-endian PLY with `f32` positions.
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.points.len()
    )?;
    for p in &cloud.points {
        for c in [p.x, p.y, p.z] {
            out.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads an ASCII OBJ consisting of `v` and triangular `f` statements
/// (1-based indices). Comment lines and unrelated statements are skipped.
pub fn read_obj(path: impl AsRef<Path>) -> Result<TriMesh, IoError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut vertices = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        match fields[0] {
            "v" => {
                if fields.len() != 4 {
                    return Err(parse_err(path, lineno + 1, "expected `v x y z`"));
                }
                let mut coords = [0.0f64; 3];
                for (slot, field) in coords.iter_mut().zip(&fields[1..]) {
                    *slot = field.parse().map_err(|_| {
                        parse_err(path, lineno + 1, format!("bad float {field:?}"))
                    })?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                if fields.len() != 4 {
                    return Err(parse_err(
                        path,
                        lineno + 1,
                        "only triangular faces are supported",
                    ));
                }
                let mut idx = [0usize; 3];
                for (slot, field) in idx.iter_mut().zip(&fields[1..]) {
                    // Accept bare indices only; `v/vt/vn` forms are not used
                    // by cage dumps.
                    let one_based: usize = field.parse().map_err(|_| {
                        parse_err(path, lineno + 1, format!("bad face index {field:?}"))
                    })?;
                    if one_based == 0 {
                        return Err(parse_err(path, lineno + 1, "face indices are 1-based"));
                    }
                    *slot = one_based - 1;
                }
                faces.push(idx);
            }
            _ => {}
        }
    }
    for f in &faces {
        if f.iter().any(|&v| v >= vertices.len()) {
            return Err(format_err(path, "face references missing vertex"));
        }
    }
    Ok(TriMesh::new(vertices, faces))
}

/// Writes a mesh as ASCII OBJ (`v`/`f`, 1-based, exact float formatting).
pub fn write_obj(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}
