//! Structured-text camera files: intrinsics plus a 3x4 world-to-camera pose
//! per view.
//!
//! Each non-comment line holds one view:
//!
//! ```text
//! view fx fy cx cy width height r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz
//! ```
//!
//! where the twelve pose values are the rows of `[R | t]` mapping world
//! points to camera coordinates. Lines starting with `#` are comments.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{GbrError, Result};
use crate::geometry::{CameraIntrinsics, CameraPose};

/// Write one file with all views' intrinsics and poses, ordered by view.
pub fn write_cameras(
    path: &Path,
    intrinsics: &[CameraIntrinsics],
    poses: &[CameraPose],
) -> Result<()> {
    if intrinsics.len() != poses.len() {
        return Err(GbrError::Dimension(format!(
            "{} intrinsics for {} poses",
            intrinsics.len(),
            poses.len()
        )));
    }
    let file = fs::File::create(path).map_err(|e| GbrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| GbrError::io(path, e);
    writeln!(
        w,
        "# view fx fy cx cy width height r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz"
    )
    .map_err(io)?;
    for (view, (k, pose)) in intrinsics.iter().zip(poses).enumerate() {
        let r = pose.rotation.matrix();
        let t = pose.translation;
        write!(
            w,
            "{view} {} {} {} {} {} {}",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        )
        .map_err(io)?;
        for row in 0..3 {
            write!(w, " {} {} {} {}", r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Read a camera file; views must be numbered 0..n in order.
pub fn read_cameras(path: &Path) -> Result<(Vec<CameraIntrinsics>, Vec<CameraPose>)> {
    let text = fs::read_to_string(path).map_err(|e| GbrError::io(path, e))?;
    let name = path.display().to_string();
    let mut intrinsics = Vec::new();
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                GbrError::load(
                    name.clone(),
                    format!("non-numeric camera line {} ('{line}')", lineno + 1),
                )
            })?;
        if vals.len() != 19 {
            return Err(GbrError::load(
                name.clone(),
                format!(
                    "camera line {} has {} fields, expected 19",
                    lineno + 1,
                    vals.len()
                ),
            ));
        }
        let view = vals[0] as usize;
        if view != intrinsics.len() {
            return Err(GbrError::load(
                name.clone(),
                format!(
                    "camera line {}: view index {view}, expected {}",
                    lineno + 1,
                    intrinsics.len()
                ),
            ));
        }
        let k = CameraIntrinsics::new(
            vals[1],
            vals[2],
            vals[3],
            vals[4],
            vals[5] as usize,
            vals[6] as usize,
        )?;
        let r = Matrix3::new(
            vals[7], vals[8], vals[9], vals[11], vals[12], vals[13], vals[15], vals[16], vals[17],
        );
        let t = Vector3::new(vals[10], vals[14], vals[18]);
        let pose = CameraPose::new(r, t)?;
        intrinsics.push(k);
        poses.push(pose);
    }
    if intrinsics.is_empty() {
        return Err(GbrError::load(name, "no camera lines found".to_string()));
    }
    Ok((intrinsics, poses))
}
