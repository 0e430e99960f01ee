//! Rasterization of a point cloud into a per-view depth map.
//!
//! Points are projected with the view's pinhole model, rounded to the nearest
//! pixel, and z-buffered: when several points land on one pixel the smallest
//! camera-frame depth wins. Small holes surrounded by hits can optionally be
//! filled with the median of the original (pre-fill) neighborhood so that
//! downstream window statistics see a mostly-dense reference.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{GbrError, Result};
use crate::geometry::{project_camera_point, CameraIntrinsics, CameraPose, DepthMap, Raster};

/// Options for [`project_cloud_depth`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    /// Fill small holes with a neighborhood median after z-buffering.
    pub fill_holes: bool,
    /// Neighborhood radius (in pixels, Euclidean) used for hole filling.
    pub fill_radius: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            fill_holes: true,
            fill_radius: 3,
        }
    }
}

/// Result of rasterizing a cloud into one view.
#[derive(Clone, Debug)]
pub struct ProjectedDepth {
    /// Z-buffered (and optionally hole-filled) depth.
    pub depth: DepthMap,
    /// Cells whose value came from hole filling rather than a projected point.
    pub filled: Raster<bool>,
    /// Number of cells covered by at least one projected point.
    pub hits: usize,
}

/// Rasterizes `cloud` into the view described by `intrinsics` and `pose`.
///
/// Each point is projected, rounded to the nearest pixel center, and kept if
/// it falls inside the image with positive camera-frame depth; per pixel the
/// minimum depth survives. With `fill_holes`, empty cells that have at least
/// one hit within `fill_radius` are assigned the median of the hit depths in
/// that disc (median of an even count averages the central pair) and flagged
/// in `filled`. Filling only reads original hits, so fill order cannot chain.
///
/// An empty cloud is an error; a cloud with no visible point yields an
/// all-invalid map and a warning.
pub fn project_cloud_depth(
    cloud: &[Vector3<f64>],
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    config: &ProjectionConfig,
) -> Result<ProjectedDepth> {
    if cloud.is_empty() {
        return Err(GbrError::Empty(
            "cannot project an empty point cloud into a depth map".into(),
        ));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut depth = Raster::filled(w, h, 0.0f64);
    let mut hit = Raster::filled(w, h, false);
    let mut hits = 0usize;

    for point in cloud {
        let cam = pose.to_camera(point);
        let Some(pixel) = project_camera_point(&cam, intrinsics) else {
            continue;
        };
        let x = pixel.x.round();
        let y = pixel.y.round();
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        let (xi, yi) = (x as usize, y as usize);
        if *hit.get(xi, yi) {
            if cam.z < *depth.get(xi, yi) {
                *depth.get_mut(xi, yi) = cam.z;
            }
        } else {
            *hit.get_mut(xi, yi) = true;
            *depth.get_mut(xi, yi) = cam.z;
            hits += 1;
        }
    }

    if hits == 0 {
        log::warn!("no cloud point projects into the {w}x{h} view; depth map is all-invalid");
        return Ok(ProjectedDepth {
            depth: DepthMap::all_invalid(w, h),
            filled: Raster::filled(w, h, false),
            hits: 0,
        });
    }

    let mut valid = hit.clone();
    let mut filled = Raster::filled(w, h, false);
    if config.fill_holes && config.fill_radius > 0 {
        let r = config.fill_radius as i64;
        let r2 = r * r;
        let mut neighborhood = Vec::new();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if *hit.get(x as usize, y as usize) {
                    continue;
                }
                neighborhood.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r2 || !hit.in_bounds(x + dx, y + dy) {
                            continue;
                        }
                        let (nx, ny) = ((x + dx) as usize, (y + dy) as usize);
                        if *hit.get(nx, ny) {
                            neighborhood.push(*depth.get(nx, ny));
                        }
                    }
                }
                if !neighborhood.is_empty() {
                    let (xi, yi) = (x as usize, y as usize);
                    *depth.get_mut(xi, yi) = median(&mut neighborhood);
                    *valid.get_mut(xi, yi) = true;
                    *filled.get_mut(xi, yi) = true;
                }
            }
        }
    }

    Ok(ProjectedDepth {
        depth: DepthMap::new(depth, valid)?,
        filled,
        hits,
    })
}

/// Median with the average-central-two convention for even counts.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
