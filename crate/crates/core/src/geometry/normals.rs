use nalgebra::Vector3;

use crate::geometry::camera::CameraIntrinsics;
use crate::geometry::maps::{DepthMap, NormalMap};
use crate::geometry::raster::Raster;

/// Cross products shorter than this are treated as degenerate geometry.
const DEGENERATE_CROSS_NORM: f64 = 1e-12;

/// Estimate camera-frame surface normals from a depth map by central
/// differences of the unprojected neighbours:
///
/// ```text
/// n(x, y) = normalize((p(x, y+1) - p(x, y-1)) x (p(x+1, y) - p(x-1, y)))
/// ```
///
/// The result is flipped so that it faces the camera (`n . ray < 0` for the
/// back-projected pixel ray). Cells on the raster border, cells whose 4-
/// neighbourhood contains an invalid depth, and cells with a degenerate cross
/// product are marked invalid.
pub fn normals_from_depth(depth: &DepthMap, intrinsics: &CameraIntrinsics) -> NormalMap {
    let (w, h) = (depth.width(), depth.height());
    let mut normals = Raster::filled(w, h, Vector3::zeros());
    let mut valid = Raster::filled(w, h, false);
    if w < 3 || h < 3 {
        return NormalMap::all_invalid(w, h);
    }

    let point_at = |x: usize, y: usize| -> Option<Vector3<f64>> {
        let d = depth.at(x, y)?;
        Some(intrinsics.back_ray(nalgebra::Vector2::new(x as f64, y as f64)) * d)
    };

    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !depth.is_valid(x, y) {
                continue;
            }
            let (Some(up), Some(down), Some(left), Some(right)) = (
                point_at(x, y - 1),
                point_at(x, y + 1),
                point_at(x - 1, y),
                point_at(x + 1, y),
            ) else {
                continue;
            };
            let cross = (down - up).cross(&(right - left));
            let norm = cross.norm();
            if norm < DEGENERATE_CROSS_NORM {
                continue;
            }
            let mut n = cross / norm;
            let ray = intrinsics.back_ray(nalgebra::Vector2::new(x as f64, y as f64));
            if n.dot(&ray) > 0.0 {
                n = -n;
            }
            normals.set(x, y, n);
            valid.set(x, y, true);
        }
    }

    NormalMap::new(normals, valid).expect("constructed normals are unit length")
}
