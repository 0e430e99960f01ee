//! Local refinement of misaligned cloud regions.
//!
//! Points whose alignment residual exceeds the 95th percentile are clustered
//! with DBSCAN; each cluster is projected into the views that see it and the
//! dilated convex hull of the projections defines a refinement region. Within
//! those regions matching is re-run at a lowered confidence threshold without
//! the per-view cap, and the recovered tracks are refined by a points-only
//! bundle adjustment with the cameras held fixed.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::bundle::{bundle_adjust, BAConfig, BAMode, BAReport};
use super::matching::{extract_matches, MatchConfig};
use super::CameraRig;
use crate::error::{GbrError, Result};
use crate::geometry::{project, PointMapFrame, Raster};
use crate::spatial::{median_nn_spacing, PointGrid};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LocalRefineConfig {
    /// Residual percentile above which points are flagged (nearest rank).
    pub residual_percentile: f64,
    /// DBSCAN radius as a multiple of the cloud's median NN spacing.
    pub eps_factor: f64,
    /// DBSCAN core-point neighbour count.
    pub min_pts: usize,
    /// Dilation of the projected cluster hulls, pixels.
    pub dilation_px: f64,
    /// Lowered primary confidence threshold for in-region matching.
    pub conf_primary: f64,
    pub conf_secondary: f64,
    pub ba: BAConfig,
}

impl Default for LocalRefineConfig {
    fn default() -> Self {
        LocalRefineConfig {
            residual_percentile: 95.0,
            eps_factor: 2.0,
            min_pts: 10,
            dilation_px: 5.0,
            conf_primary: 2.0,
            conf_secondary: 0.05,
            ba: BAConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalRefineReport {
    /// Residual value of the percentile rank; points strictly above it are
    /// flagged.
    pub threshold: f64,
    pub n_flagged: usize,
    pub n_clusters: usize,
    pub n_new_tracks: usize,
    /// Set when the pass degenerated to a no-op (and why).
    pub note: Option<String>,
    pub ba: Option<BAReport>,
}

/// Nearest-rank percentile of `values` (p in [0, 100]).
fn percentile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Plain DBSCAN; returns a cluster id per point (`None` = noise).
fn dbscan(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    const UNSEEN: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let grid = PointGrid::build(points.to_vec(), eps.max(1e-12));
    let mut label = vec![UNSEEN; points.len()];
    let mut next_cluster = 0usize;
    for seed in 0..points.len() {
        if label[seed] != UNSEEN {
            continue;
        }
        let neighbours = grid.within_radius(&points[seed], eps);
        if neighbours.len() < min_pts {
            label[seed] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        label[seed] = cluster;
        let mut queue: Vec<usize> = neighbours;
        let mut head = 0;
        while head < queue.len() {
            let q = queue[head];
            head += 1;
            if label[q] == NOISE {
                label[q] = cluster; // border point
            }
            if label[q] != UNSEEN {
                continue;
            }
            label[q] = cluster;
            let nn = grid.within_radius(&points[q], eps);
            if nn.len() >= min_pts {
                queue.extend(nn);
            }
        }
    }
    label
        .into_iter()
        .map(|l| match l {
            UNSEEN | NOISE => None,
            c => Some(c),
        })
        .collect()
}

/// Andrew's monotone chain; returns the CCW hull (1 or 2 points when
/// degenerate).
fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    let n = pts.len();
    if n <= 2 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * n);
    for p in pts.iter().chain(pts.iter().rev().skip(1)) {
        while hull.len() >= 2
            && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop(); // last point repeats the first
    if hull.len() < 2 {
        // Fully collinear input collapses; keep the extremes.
        return vec![pts[0], pts[n - 1]];
    }
    hull
}

fn dist_to_segment(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn inside_convex(p: &Vector2<f64>, hull: &[Vector2<f64>]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    for k in 0..hull.len() {
        let a = &hull[k];
        let b = &hull[(k + 1) % hull.len()];
        if (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < -1e-12 {
            return false;
        }
    }
    true
}

/// Mark every pixel inside the hull or within `dilation` of its boundary.
fn stamp_region(mask: &mut Raster<bool>, hull: &[Vector2<f64>], dilation: f64) {
    if hull.is_empty() {
        return;
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in hull {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let x0 = ((min_x - dilation).floor().max(0.0)) as usize;
    let y0 = ((min_y - dilation).floor().max(0.0)) as usize;
    let x1 = ((max_x + dilation).ceil()).min(mask.width() as f64 - 1.0) as usize;
    let y1 = ((max_y + dilation).ceil()).min(mask.height() as f64 - 1.0) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if *mask.get(x, y) {
                continue;
            }
            let p = Vector2::new(x as f64, y as f64);
            let hit = if inside_convex(&p, hull) {
                true
            } else if hull.len() == 1 {
                (p - hull[0]).norm() <= dilation
            } else {
                (0..hull.len()).any(|k| {
                    let a = &hull[k];
                    let b = &hull[(k + 1) % hull.len()];
                    dist_to_segment(&p, a, b) <= dilation
                })
            };
            if hit {
                *mask.get_mut(x, y) = true;
            }
        }
    }
}

fn noop(report_base: LocalRefineReport, note: &str) -> (Vec<Vector3<f64>>, LocalRefineReport) {
    let mut report = report_base;
    report.note = Some(note.to_string());
    (Vec::new(), report)
}

/// Densify poorly aligned regions of `cloud`.
///
/// `residuals` holds the per-point rigid-alignment error (same order as
/// `cloud`); `frames` are the unified point maps the cloud was matched from.
/// Returns the refined patch points (to be merged with the main cloud) and a
/// report.
pub fn local_refine(
    cloud: &[Vector3<f64>],
    residuals: &[f64],
    frames: &[PointMapFrame],
    match_conf: &[Raster<f64>],
    pairs: &[(usize, usize)],
    rig: &CameraRig,
    config: &LocalRefineConfig,
) -> Result<(Vec<Vector3<f64>>, LocalRefineReport)> {
    if cloud.len() != residuals.len() {
        return Err(GbrError::Dimension(format!(
            "{} residuals for {} cloud points",
            residuals.len(),
            cloud.len()
        )));
    }
    if frames.len() != rig.len() {
        return Err(GbrError::Dimension(format!(
            "{} frames for a {}-view rig",
            frames.len(),
            rig.len()
        )));
    }
    let report = LocalRefineReport {
        threshold: 0.0,
        n_flagged: 0,
        n_clusters: 0,
        n_new_tracks: 0,
        note: None,
        ba: None,
    };
    if cloud.is_empty() {
        return Ok(noop(report, "empty cloud"));
    }

    let threshold = percentile(residuals, config.residual_percentile);
    let mut report = LocalRefineReport {
        threshold,
        ..report
    };
    let flagged: Vec<Vector3<f64>> = cloud
        .iter()
        .zip(residuals)
        .filter(|(_, d)| **d > threshold)
        .map(|(p, _)| *p)
        .collect();
    report.n_flagged = flagged.len();
    if flagged.is_empty() {
        return Ok(noop(report, "no residuals above the percentile threshold"));
    }

    let spacing = median_nn_spacing(cloud).unwrap_or(0.0);
    if !(spacing > 0.0) {
        return Ok(noop(report, "cloud spacing is degenerate"));
    }
    let labels = dbscan(&flagged, config.eps_factor * spacing, config.min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    report.n_clusters = n_clusters;
    if n_clusters == 0 {
        return Ok(noop(report, "flagged points form no dense cluster"));
    }

    // One refinement mask per view, union over clusters.
    let mut masks: Vec<Raster<bool>> = frames
        .iter()
        .map(|f| Raster::filled(f.width(), f.height(), false))
        .collect();
    for cluster in 0..n_clusters {
        for (view, mask) in masks.iter_mut().enumerate() {
            let intr = &rig.intrinsics[view];
            let pose = &rig.poses[view];
            let projected: Vec<Vector2<f64>> = flagged
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == Some(cluster))
                .filter_map(|(p, _)| project(p, intr, pose))
                .filter(|px| intr.contains_pixel(*px))
                .collect();
            if projected.is_empty() {
                continue;
            }
            let hull = convex_hull(projected);
            stamp_region(mask, &hull, config.dilation_px);
        }
    }

    let match_cfg = MatchConfig {
        conf_primary: config.conf_primary,
        conf_secondary: config.conf_secondary,
        cap_per_view: usize::MAX,
    };
    let set = match extract_matches(frames, match_conf, pairs, Some(&masks), &match_cfg) {
        Ok(set) => set,
        Err(GbrError::Empty(_)) => {
            return Ok(noop(report, "no matches found inside refinement regions"));
        }
        Err(e) => return Err(e),
    };
    report.n_new_tracks = set.len();
    let points: Vec<Vector3<f64>> = set.tracks.iter().map(|t| t.point).collect();
    if set.len() < 6 {
        report.note = Some("too few new tracks for refinement; returning raw matches".into());
        return Ok((points, report));
    }
    let (_, refined, ba_report) =
        bundle_adjust(&set, rig, &points, BAMode::PointsOnly, &config.ba)?;
    report.ba = Some(ba_report);
    Ok((refined, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, CameraPose, ReferenceFrame};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn spread_cloud(rng: &mut StdRng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random::<f64>() * 10.0,
                    rng.random::<f64>() * 10.0,
                    rng.random::<f64>() * 10.0,
                )
            })
            .collect()
    }

    fn blob(center: Vector3<f64>, n: usize, spread: f64, rng: &mut StdRng) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                center
                    + Vector3::new(
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                    ) * spread
            })
            .collect()
    }

    fn tiny_rig(n: usize) -> CameraRig {
        let intr = CameraIntrinsics::centered(30.0, 40, 30).unwrap();
        // Baseline of exactly four pixel steps at the z = 2 test plane, so
        // the views sample a common world lattice.
        let baseline = 4.0 * (2.0 / 30.0);
        let poses = (0..n)
            .map(|v| {
                CameraPose::from_rotation(
                    nalgebra::Rotation3::identity(),
                    Vector3::new(-baseline * v as f64, 0.0, 0.0),
                )
            })
            .collect();
        CameraRig::new(vec![intr; n], poses).unwrap()
    }

    fn zero_conf_frame(w: usize, h: usize) -> PointMapFrame {
        PointMapFrame::new(
            Raster::filled(w, h, Vector3::new(0.0, 0.0, 2.0)),
            Raster::filled(w, h, 0.0),
            0,
            ReferenceFrame::Unified,
        )
        .unwrap()
    }

    #[test]
    fn two_separated_blobs_give_two_clusters() {
        let mut rng = StdRng::seed_from_u64(31);
        // Many calm points keep the flagged blobs inside the top 5%.
        let mut cloud = spread_cloud(&mut rng, 900);
        let mut residuals = vec![0.0; cloud.len()];
        let blob_a = blob(Vector3::new(2.0, 2.0, 2.0), 15, 0.1, &mut rng);
        let blob_b = blob(Vector3::new(8.0, 8.0, 8.0), 12, 0.1, &mut rng);
        for p in blob_a.into_iter().chain(blob_b) {
            cloud.push(p);
            residuals.push(0.5);
        }
        let rig = tiny_rig(2);
        let frames = vec![zero_conf_frame(40, 30), zero_conf_frame(40, 30)];
        let conf = vec![Raster::filled(40, 30, 1.0); 2];
        let (patches, report) = local_refine(
            &cloud,
            &residuals,
            &frames,
            &conf,
            &[(0, 1)],
            &rig,
            &LocalRefineConfig::default(),
        )
        .unwrap();
        assert_eq!(report.n_clusters, 2);
        assert_eq!(report.n_flagged, 27);
        // Zero-confidence frames yield no matches: graceful no-op.
        assert!(patches.is_empty());
        assert!(report.note.is_some());
    }

    #[test]
    fn all_residuals_below_threshold_is_noop() {
        let mut rng = StdRng::seed_from_u64(32);
        let cloud = spread_cloud(&mut rng, 50);
        let residuals = vec![0.25; 50];
        let rig = tiny_rig(2);
        let frames = vec![zero_conf_frame(40, 30), zero_conf_frame(40, 30)];
        let conf = vec![Raster::filled(40, 30, 1.0); 2];
        let (patches, report) = local_refine(
            &cloud,
            &residuals,
            &frames,
            &conf,
            &[(0, 1)],
            &rig,
            &LocalRefineConfig::default(),
        )
        .unwrap();
        assert!(patches.is_empty());
        assert_eq!(report.n_flagged, 0);
        assert_eq!(report.n_clusters, 0);
        assert!(report.note.as_deref().unwrap().contains("threshold"));
    }

    /// Pinhole frames of the plane z = 2 with a low-confidence region.
    fn plane_frame(
        rig: &CameraRig,
        view: usize,
        region: &dyn Fn(&Vector3<f64>) -> bool,
        region_conf: f64,
    ) -> PointMapFrame {
        let intr = &rig.intrinsics[view];
        let pose = &rig.poses[view];
        let (w, h) = (intr.width, intr.height);
        let mut pts = Raster::filled(w, h, Vector3::zeros());
        let mut conf = Raster::filled(w, h, 5.0);
        let center = pose.center();
        for y in 0..h {
            for x in 0..w {
                let dir = intr.back_ray(Vector2::new(x as f64, y as f64));
                // Camera axes equal world axes here; hit the z = 2 plane.
                let s = (2.0 - center.z) / dir.z;
                let p = center + dir * s;
                *pts.get_mut(x, y) = p;
                if region(&p) {
                    *conf.get_mut(x, y) = region_conf;
                }
            }
        }
        PointMapFrame::new(pts, conf, view, ReferenceFrame::Unified).unwrap()
    }

    #[test]
    fn corrupted_region_chamfer_improves_at_least_twofold() {
        let rig = tiny_rig(2);
        let region_center = Vector2::new(0.35, 0.25);
        let in_region = |p: &Vector3<f64>| {
            (p.x - region_center.x).abs() < 0.25 && (p.y - region_center.y).abs() < 0.25
        };
        let frames: Vec<PointMapFrame> = (0..2)
            .map(|v| plane_frame(&rig, v, &in_region, 2.5))
            .collect();
        let conf = vec![Raster::filled(40, 30, 1.0); 2];

        // First round at the standard threshold misses the region entirely.
        let first = extract_matches(
            &frames,
            &conf,
            &[(0, 1)],
            None,
            &MatchConfig::default(),
        )
        .unwrap();
        let mut cloud: Vec<Vector3<f64>> = first.tracks.iter().map(|t| t.point).collect();
        assert!(cloud.iter().all(|p| !in_region(p)));
        let mut residuals = vec![0.0; cloud.len()];

        // Simulated bad first-round output inside the region: offset in z.
        let mut corrupted = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let p = Vector3::new(
                    region_center.x - 0.15 + 0.06 * i as f64,
                    region_center.y - 0.15 + 0.06 * j as f64,
                    2.0 + 0.3,
                );
                corrupted.push(p);
                cloud.push(p);
                residuals.push(0.3);
            }
        }

        let (patches, report) = local_refine(
            &cloud,
            &residuals,
            &frames,
            &conf,
            &[(0, 1)],
            &rig,
            &LocalRefineConfig::default(),
        )
        .unwrap();
        assert_eq!(report.n_clusters, 1);
        assert!(report.n_new_tracks >= 36, "tracks {}", report.n_new_tracks);

        // Region Chamfer against the true surface is the mean |z - 2|.
        let pre: f64 =
            corrupted.iter().map(|p| (p.z - 2.0).abs()).sum::<f64>() / corrupted.len() as f64;
        let post_pts: Vec<&Vector3<f64>> = patches.iter().filter(|p| in_region(p)).collect();
        assert!(!post_pts.is_empty());
        let post: f64 =
            post_pts.iter().map(|p| (p.z - 2.0).abs()).sum::<f64>() / post_pts.len() as f64;
        assert!(
            post * 2.0 <= pre,
            "post {post} not at least twice better than pre {pre}"
        );
    }

    #[test]
    fn hull_and_stamp_cover_dilated_triangle() {
        let hull = convex_hull(vec![
            Vector2::new(5.0, 5.0),
            Vector2::new(15.0, 5.0),
            Vector2::new(10.0, 12.0),
            Vector2::new(10.0, 7.0), // interior point must vanish
        ]);
        assert_eq!(hull.len(), 3);
        let mut mask = Raster::filled(32, 24, false);
        stamp_region(&mut mask, &hull, 5.0);
        assert!(*mask.get(10, 8)); // inside
        assert!(*mask.get(10, 16)); // within 5 px of the apex
        assert!(!*mask.get(0, 23)); // far corner stays clear
        assert!(!*mask.get(31, 0));
    }

    #[test]
    fn mismatched_lengths_error() {
        let rig = tiny_rig(2);
        let frames = vec![zero_conf_frame(40, 30), zero_conf_frame(40, 30)];
        let conf = vec![Raster::filled(40, 30, 1.0); 2];
        let err = local_refine(
            &[Vector3::zeros()],
            &[0.0, 1.0],
            &frames,
            &conf,
            &[(0, 1)],
            &rig,
            &LocalRefineConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
