//! ASCII PLY reading and writing for point clouds and triangle meshes.
//!
//! Floats are printed with the shortest representation that round-trips, so
//! writing and re-reading a cloud reproduces it bit for bit. Colors are
//! stored as `uchar` 0-255; in memory they live in `[0, 1]`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{GbrError, Result};

/// Contents of a PLY file: vertices, optional per-vertex attributes, and
/// (possibly empty) triangle faces.
#[derive(Clone, Debug, Default)]
pub struct PlyData {
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub faces: Vec<[usize; 3]>,
}

fn color_to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a point cloud (no faces).
pub fn write_cloud_ply(
    path: &Path,
    points: &[Vector3<f64>],
    normals: Option<&[Vector3<f64>]>,
    colors: Option<&[[f64; 3]]>,
) -> Result<()> {
    if let Some(n) = normals {
        if n.len() != points.len() {
            return Err(GbrError::Dimension(format!(
                "{} normals for {} points",
                n.len(),
                points.len()
            )));
        }
    }
    if let Some(c) = colors {
        if c.len() != points.len() {
            return Err(GbrError::Dimension(format!(
                "{} colors for {} points",
                c.len(),
                points.len()
            )));
        }
    }
    write_ply_impl(path, points, normals, colors, &[])
}

/// Write a triangle mesh with optional per-vertex normals.
pub fn write_mesh_ply(
    path: &Path,
    vertices: &[Vector3<f64>],
    normals: Option<&[Vector3<f64>]>,
    faces: &[[usize; 3]],
) -> Result<()> {
    if let Some(n) = normals {
        if n.len() != vertices.len() {
            return Err(GbrError::Dimension(format!(
                "{} normals for {} vertices",
                n.len(),
                vertices.len()
            )));
        }
    }
    for f in faces {
        if f.iter().any(|&i| i >= vertices.len()) {
            return Err(GbrError::Invalid(format!(
                "face {f:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
    }
    write_ply_impl(path, vertices, normals, None, faces)
}

fn write_ply_impl(
    path: &Path,
    vertices: &[Vector3<f64>],
    normals: Option<&[Vector3<f64>]>,
    colors: Option<&[[f64; 3]]>,
    faces: &[[usize; 3]],
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| GbrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| GbrError::io(path, e);

    writeln!(w, "ply").map_err(io)?;
    writeln!(w, "format ascii 1.0").map_err(io)?;
    writeln!(w, "element vertex {}", vertices.len()).map_err(io)?;
    writeln!(w, "property double x").map_err(io)?;
    writeln!(w, "property double y").map_err(io)?;
    writeln!(w, "property double z").map_err(io)?;
    if normals.is_some() {
        writeln!(w, "property double nx").map_err(io)?;
        writeln!(w, "property double ny").map_err(io)?;
        writeln!(w, "property double nz").map_err(io)?;
    }
    if colors.is_some() {
        writeln!(w, "property uchar red").map_err(io)?;
        writeln!(w, "property uchar green").map_err(io)?;
        writeln!(w, "property uchar blue").map_err(io)?;
    }
    if !faces.is_empty() {
        writeln!(w, "element face {}", faces.len()).map_err(io)?;
        writeln!(w, "property list uchar int vertex_indices").map_err(io)?;
    }
    writeln!(w, "end_header").map_err(io)?;

    for (i, v) in vertices.iter().enumerate() {
        write!(w, "{} {} {}", v.x, v.y, v.z).map_err(io)?;
        if let Some(n) = normals {
            write!(w, " {} {} {}", n[i].x, n[i].y, n[i].z).map_err(io)?;
        }
        if let Some(c) = colors {
            write!(
                w,
                " {} {} {}",
                color_to_u8(c[i][0]),
                color_to_u8(c[i][1]),
                color_to_u8(c[i][2])
            )
            .map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    for f in faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2]).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Read an ASCII PLY file. Handles the property layouts this crate writes
/// plus arbitrary orderings of x/y/z, nx/ny/nz, and red/green/blue.
pub fn read_ply(path: &Path) -> Result<PlyData> {
    let text = fs::read_to_string(path).map_err(|e| GbrError::io(path, e))?;
    let name = path.display().to_string();
    let fail = |reason: String| GbrError::load(name.clone(), reason);

    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(fail("missing 'ply' signature".into()));
    }

    let mut vertex_count = 0usize;
    let mut face_count = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for line in lines.by_ref() {
        let line = line.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(fail(format!("unsupported format line '{line}'")));
                }
            }
            Some("comment") => {}
            Some("element") => match (tok.next(), tok.next()) {
                (Some("vertex"), Some(n)) => {
                    in_vertex = true;
                    vertex_count = n
                        .parse()
                        .map_err(|_| fail(format!("bad vertex count '{n}'")))?;
                }
                (Some("face"), Some(n)) => {
                    in_vertex = false;
                    face_count = n
                        .parse()
                        .map_err(|_| fail(format!("bad face count '{n}'")))?;
                }
                _ => return Err(fail(format!("unsupported element '{line}'"))),
            },
            Some("property") => {
                if in_vertex {
                    let prop_name = line
                        .split_whitespace()
                        .last()
                        .ok_or_else(|| fail(format!("bad property line '{line}'")))?;
                    vertex_props.push(prop_name.to_string());
                }
            }
            Some("end_header") => break,
            other => return Err(fail(format!("unexpected header token {other:?}"))),
        }
    }

    let col = |n: &str| vertex_props.iter().position(|p| p == n);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(fail("vertex element lacks x/y/z properties".into()));
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let color_cols = match (col("red"), col("green"), col("blue")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };

    let mut data = PlyData {
        vertices: Vec::with_capacity(vertex_count),
        normals: normal_cols.map(|_| Vec::with_capacity(vertex_count)),
        colors: color_cols.map(|_| Vec::with_capacity(vertex_count)),
        faces: Vec::with_capacity(face_count),
    };

    for i in 0..vertex_count {
        let line = lines
            .next()
            .ok_or_else(|| fail(format!("file ends before vertex {i} of {vertex_count}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fail(format!("non-numeric vertex line '{line}'")))?;
        if vals.len() < vertex_props.len() {
            return Err(fail(format!(
                "vertex {i} has {} values, expected {}",
                vals.len(),
                vertex_props.len()
            )));
        }
        data.vertices.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
        if let (Some(cols), Some(out)) = (normal_cols, data.normals.as_mut()) {
            out.push(Vector3::new(vals[cols[0]], vals[cols[1]], vals[cols[2]]));
        }
        if let (Some(cols), Some(out)) = (color_cols, data.colors.as_mut()) {
            out.push([
                vals[cols[0]] / 255.0,
                vals[cols[1]] / 255.0,
                vals[cols[2]] / 255.0,
            ]);
        }
    }

    for i in 0..face_count {
        let line = lines
            .next()
            .ok_or_else(|| fail(format!("file ends before face {i} of {face_count}")))?;
        let vals: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fail(format!("non-numeric face line '{line}'")))?;
        if vals.first() != Some(&3) || vals.len() != 4 {
            return Err(fail(format!(
                "face {i} is not a triangle (line '{line}')"
            )));
        }
        let f = [vals[1], vals[2], vals[3]];
        if f.iter().any(|&v| v >= vertex_count) {
            return Err(fail(format!(
                "face {i} references vertex beyond {vertex_count}"
            )));
        }
        data.faces.push(f);
    }

    Ok(data)
}
