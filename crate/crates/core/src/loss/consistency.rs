//! Geometric consistency: single-view normal-depth agreement and multi-view
//! cycle projection, plus the partner-selection policy the pipeline uses.

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::UnitSphere;

use crate::error::{GbrError, Result};
use crate::geometry::{
    normals_from_depth, project, unproject, CameraIntrinsics, CameraPose, DepthMap, NormalMap,
};

use super::par_rows;

/// Normal-depth consistency loss (Eq. 24).
///
/// The central-difference depth-gradient magnitude, min-max normalized to
/// [0, 1] over the image, weights the per-pixel L1 gap between the rendered
/// normal and the normal derived from the rendered depth (Eq. 19); the sum is
/// divided by the full raster area `W * H`. Pixels without a gradient (border
/// or invalid neighbours) or without both normals contribute zero. A
/// degenerate gradient range (constant depth) defines the whole loss as 0.
pub fn ndc_loss(
    depth: &DepthMap,
    normal: &NormalMap,
    intrinsics: &CameraIntrinsics,
) -> Result<f64> {
    if !depth.depth().same_dims(normal.normals()) {
        return Err(GbrError::Dimension(format!(
            "ndc rasters disagree: depth {}x{}, normal {}x{}",
            depth.width(),
            depth.height(),
            normal.width(),
            normal.height()
        )));
    }
    if depth.width() != intrinsics.width || depth.height() != intrinsics.height {
        return Err(GbrError::Dimension(format!(
            "depth {}x{} does not match the {}x{} camera",
            depth.width(),
            depth.height(),
            intrinsics.width,
            intrinsics.height
        )));
    }
    let (w, h) = (depth.width(), depth.height());
    if w == 0 || h == 0 {
        return Err(GbrError::Empty("ndc loss on an empty raster".into()));
    }

    let derived = normals_from_depth(depth, intrinsics);
    let gradient_rows: Vec<Vec<Option<f64>>> = par_rows(h, |y| {
        (0..w)
            .map(|x| {
                if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
                    return None;
                }
                let (l, r) = (depth.at(x - 1, y)?, depth.at(x + 1, y)?);
                let (u, d) = (depth.at(x, y - 1)?, depth.at(x, y + 1)?);
                let gx = (r - l) / 2.0;
                let gy = (d - u) / 2.0;
                Some((gx * gx + gy * gy).sqrt())
            })
            .collect()
    });

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in &gradient_rows {
        for g in row.iter().flatten() {
            lo = lo.min(*g);
            hi = hi.max(*g);
        }
    }
    if !(hi > lo) {
        // No gradients at all, or all gradients equal: the normalization is
        // degenerate and the weights are defined as zero.
        return Ok(0.0);
    }
    let range = hi - lo;

    let sums = par_rows(h, |y| {
        let mut sum = 0.0;
        for x in 0..w {
            let Some(g) = gradient_rows[y][x] else { continue };
            let (Some(n_ren), Some(n_der)) = (normal.at(x, y), derived.at(x, y)) else {
                continue;
            };
            let weight = (g - lo) / range;
            sum += weight
                * ((n_der.x - n_ren.x).abs()
                    + (n_der.y - n_ren.y).abs()
                    + (n_der.z - n_ren.z).abs());
        }
        sum
    });
    Ok(sums.into_iter().sum::<f64>() / (w * h) as f64)
}

/// Cycle-projection loss (Eq. 25).
///
/// Every valid pixel of view `a` is lifted to 3D through `depth_a`, projected
/// into view `b`, back-projected through the bilinearly sampled `depth_b`,
/// and returned to `a` as `(x', y')`; the loss is the mean squared pixel
/// displacement over round trips that stay inside both images.
pub fn cycle_loss(
    depth_a: &DepthMap,
    intrinsics_a: &CameraIntrinsics,
    pose_a: &CameraPose,
    depth_b: &DepthMap,
    intrinsics_b: &CameraIntrinsics,
    pose_b: &CameraPose,
) -> Result<f64> {
    for (depth, intrinsics, tag) in [
        (depth_a, intrinsics_a, "a"),
        (depth_b, intrinsics_b, "b"),
    ] {
        if depth.width() != intrinsics.width || depth.height() != intrinsics.height {
            return Err(GbrError::Dimension(format!(
                "depth {}x{} does not match the {}x{} camera of view {tag}",
                depth.width(),
                depth.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
    }

    let rows = par_rows(depth_a.height(), |y| {
        let mut sum = 0.0;
        let mut count = 0usize;
        for x in 0..depth_a.width() {
            let Some(da) = depth_a.at(x, y) else { continue };
            let pixel_a = Vector2::new(x as f64, y as f64);
            let world = unproject(pixel_a, da, intrinsics_a, pose_a);
            let Some(pixel_b) = project(&world, intrinsics_b, pose_b) else {
                continue;
            };
            let Some(db) = depth_b.sample_bilinear(pixel_b.x, pixel_b.y) else {
                continue;
            };
            let back = unproject(pixel_b, db, intrinsics_b, pose_b);
            let Some(returned) = project(&back, intrinsics_a, pose_a) else {
                continue;
            };
            if !intrinsics_a.contains_pixel(returned) {
                continue;
            }
            let dx = pixel_a.x - returned.x;
            let dy = pixel_a.y - returned.y;
            sum += dx * dx + dy * dy;
            count += 1;
        }
        (sum, count)
    });
    let (sum, count) = rows
        .into_iter()
        .fold((0.0, 0usize), |acc, row| (acc.0 + row.0, acc.1 + row.1));
    if count == 0 {
        return Err(GbrError::Empty(
            "no cycle projection stayed inside both views".into(),
        ));
    }
    Ok(sum / count as f64)
}

/// Index of the candidate whose camera center is closest to `target`,
/// skipping `exclude`; ties keep the lowest index. `None` when no candidate
/// remains. Pseudo views pick their cycle partner with this directly.
pub fn nearest_view_index(
    target: &CameraPose,
    candidates: &[CameraPose],
    exclude: Option<usize>,
) -> Option<usize> {
    let center = target.center();
    let mut best: Option<(usize, f64)> = None;
    for (i, pose) in candidates.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let d = (pose.center() - center).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// The multi-view partner chosen for a real view's cycle loss.
#[derive(Clone, Debug)]
pub enum CyclePartner {
    /// Pair with another real view's render.
    RealView(usize),
    /// Render a jittered copy of the view's own pose and pair with that.
    Jittered(CameraPose),
}

/// Translation jitter as a fraction of the nearest-neighbour baseline.
const JITTER_TRANSLATION_SCALE: f64 = 0.05;
/// Rotation jitter half-range in radians.
const JITTER_ROTATION_RAD: f64 = 0.01;

/// Seeded partner policy for real views: a fair coin picks between the
/// nearest real view and a small jitter of the view's own pose (rotation
/// perturbed by up to ~0.6 degrees, camera nudged by 5% of the nearest
/// baseline). The same `(seed, view)` always returns the same partner.
pub fn select_cycle_partner(
    poses: &[CameraPose],
    view: usize,
    seed: u64,
) -> Result<CyclePartner> {
    if poses.len() < 2 {
        return Err(GbrError::Invalid(
            "cycle partner selection needs at least two views".into(),
        ));
    }
    if view >= poses.len() {
        return Err(GbrError::Invalid(format!(
            "view {view} out of range for {} poses",
            poses.len()
        )));
    }
    let nearest =
        nearest_view_index(&poses[view], poses, Some(view)).expect("at least one other view");
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (view as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    if rng.random_bool(0.5) {
        return Ok(CyclePartner::RealView(nearest));
    }
    let baseline = (poses[view].center() - poses[nearest].center()).norm();
    let shift: [f64; 3] = rng.sample(UnitSphere);
    let axis: [f64; 3] = rng.sample(UnitSphere);
    let angle = rng.random_range(-JITTER_ROTATION_RAD..=JITTER_ROTATION_RAD);
    let tweak = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
    // Perturb about the optical center so the viewpoint itself only moves by
    // the translation nudge, wherever the camera sits in the world.
    let rotation = tweak * poses[view].rotation();
    let center =
        poses[view].center() + Vector3::from(shift) * (JITTER_TRANSLATION_SCALE * baseline);
    let pose = CameraPose::from_rotation(rotation, -(rotation * center));
    Ok(CyclePartner::Jittered(pose))
}
