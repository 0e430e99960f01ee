//! Pseudo-view synthesis between adjacent real cameras.

use nalgebra::{UnitQuaternion, Vector2, Vector3};

use crate::depth::{project_cloud_depth, ProjectionConfig};
use crate::error::{GbrError, Result};
use crate::geometry::{
    normals_from_depth, unproject, CameraIntrinsics, CameraPose, DepthMap, NormalMap, Raster,
    RgbImage,
};
use crate::splat::{render, RenderConfig, SplatScene};

use super::SupervisionConfig;

/// A synthesized supervision view between two real cameras.
#[derive(Clone, Debug)]
pub struct PseudoView {
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
    /// Consensus depth from the warped neighbour depths and the cloud
    /// projection (Eq. 23).
    pub depth: DepthMap,
    /// Normals derived from the consensus depth (Eq. 19).
    pub normals: NormalMap,
    /// RGB rendered from the current splat scene.
    pub rgb: RgbImage,
    /// Loss multiplier, below the real-view weight of 1.
    pub weight: f64,
    /// Indices of the adjacent real views this pose interpolates.
    pub between: (usize, usize),
}

/// Synthesize `pseudo_view_count` views between each adjacent real pair.
///
/// Poses interpolate rotations spherically and translations linearly. Each
/// pseudo depth pixel averages up to three sources: the two neighbours'
/// refined depths forward-warped (unproject, reproject, z-buffer) and the
/// cloud projection `d_w`, which anchors the consensus — warped depths
/// deviating from it by more than `pseudo_epsilon` (relative) are excluded,
/// and pixels without a cloud depth stay invalid. A pseudo view whose
/// consensus is empty is dropped with a warning. Views inherit the intrinsics
/// of their pair's first camera.
pub fn synthesize_pseudo_views(
    views: &[(CameraIntrinsics, CameraPose)],
    depths: &[DepthMap],
    cloud: &[Vector3<f64>],
    scene: &SplatScene,
    render_config: &RenderConfig,
    config: &SupervisionConfig,
) -> Result<Vec<PseudoView>> {
    config.validate()?;
    if views.len() < 2 {
        return Err(GbrError::Invalid(
            "pseudo-view synthesis needs at least two real views".into(),
        ));
    }
    if depths.len() != views.len() {
        return Err(GbrError::Dimension(format!(
            "{} depth maps for {} views",
            depths.len(),
            views.len()
        )));
    }
    for (i, ((intr, _), depth)) in views.iter().zip(depths).enumerate() {
        if depth.width() != intr.width || depth.height() != intr.height {
            return Err(GbrError::Dimension(format!(
                "view {i} depth {}x{} does not match its {}x{} camera",
                depth.width(),
                depth.height(),
                intr.width,
                intr.height
            )));
        }
    }

    let count = config.pseudo_view_count;
    let mut out = Vec::new();
    for pair in 0..views.len() - 1 {
        let (intr_a, pose_a) = &views[pair];
        let (intr_b, pose_b) = &views[pair + 1];
        for k in 1..=count {
            let s = k as f64 / (count as f64 + 1.0);
            let pose = interpolate_pose(pose_a, pose_b, s);
            let intr = *intr_a;
            let anchored = project_cloud_depth(cloud, &intr, &pose, &ProjectionConfig::default())?;
            let warped_a = warp_depth(&depths[pair], intr_a, pose_a, &intr, &pose);
            let warped_b = warp_depth(&depths[pair + 1], intr_b, pose_b, &intr, &pose);

            let mut depth = Raster::filled(intr.width, intr.height, 1.0);
            let mut valid = Raster::filled(intr.width, intr.height, false);
            for y in 0..intr.height {
                for x in 0..intr.width {
                    let Some(anchor) = anchored.depth.at(x, y) else {
                        continue;
                    };
                    let mut sum = anchor;
                    let mut retained = 1.0;
                    for warped in [&warped_a, &warped_b] {
                        if let Some(d) = warped.at(x, y) {
                            if (d - anchor).abs() / anchor <= config.pseudo_epsilon {
                                sum += d;
                                retained += 1.0;
                            }
                        }
                    }
                    depth.set(x, y, sum / retained);
                    valid.set(x, y, true);
                }
            }
            let depth = DepthMap::new(depth, valid).expect("consensus of positive depths");
            if depth.valid_count() == 0 {
                log::warn!(
                    "pseudo view {k}/{count} between views {pair} and {} has no \
                     depth consensus; dropped",
                    pair + 1
                );
                continue;
            }
            let normals = normals_from_depth(&depth, &intr);
            let rgb = render(scene, &intr, &pose, render_config)?.color;
            out.push(PseudoView {
                pose,
                intrinsics: intr,
                depth,
                normals,
                rgb,
                weight: config.pseudo_weight,
                between: (pair, pair + 1),
            });
        }
    }
    Ok(out)
}

/// Spherical rotation interpolation and linear translation interpolation.
fn interpolate_pose(a: &CameraPose, b: &CameraPose, s: f64) -> CameraPose {
    let qa = UnitQuaternion::from_rotation_matrix(a.rotation());
    let mut qb = UnitQuaternion::from_rotation_matrix(b.rotation());
    // Keep the pair on one hemisphere so slerp takes the short arc.
    if qa.coords.dot(&qb.coords) < 0.0 {
        qb = UnitQuaternion::new_unchecked(-qb.into_inner());
    }
    let q = qa
        .try_slerp(&qb, s, 1e-12)
        // Antipodal rotations have no unique geodesic; snap to an endpoint.
        .unwrap_or(if s < 0.5 { qa } else { qb });
    CameraPose::from_rotation(
        q.to_rotation_matrix(),
        a.translation().lerp(&b.translation(), s),
    )
}

/// Forward-warp a depth map into another camera: unproject every valid pixel,
/// then z-buffer the resulting points into the destination view (no hole
/// filling — warped evidence is left as-is).
fn warp_depth(
    src: &DepthMap,
    src_intrinsics: &CameraIntrinsics,
    src_pose: &CameraPose,
    dst_intrinsics: &CameraIntrinsics,
    dst_pose: &CameraPose,
) -> DepthMap {
    let mut points = Vec::with_capacity(src.valid_count());
    for y in 0..src.height() {
        for x in 0..src.width() {
            if let Some(d) = src.at(x, y) {
                points.push(unproject(
                    Vector2::new(x as f64, y as f64),
                    d,
                    src_intrinsics,
                    src_pose,
                ));
            }
        }
    }
    if points.is_empty() {
        return DepthMap::all_invalid(dst_intrinsics.width, dst_intrinsics.height);
    }
    let config = ProjectionConfig {
        fill_holes: false,
        fill_radius: 0,
    };
    match project_cloud_depth(&points, dst_intrinsics, dst_pose, &config) {
        Ok(projected) => projected.depth,
        Err(_) => DepthMap::all_invalid(dst_intrinsics.width, dst_intrinsics.height),
    }
}
