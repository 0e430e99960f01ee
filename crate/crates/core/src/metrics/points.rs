//! Point-set reconstruction metrics: Chamfer distance and F1 score.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{GbrError, Result};
use crate::geometry::{project, CameraIntrinsics, CameraPose};
use crate::mesh::point_bounds;
use crate::spatial::PointGrid;

/// One-directional nearest-neighbour distances from each query to `grid`.
fn nn_distances(queries: &[Vector3<f64>], grid: &PointGrid) -> Vec<f64> {
    queries
        .par_iter()
        .map(|q| grid.nearest(q).expect("grid is non-empty").1)
        .collect()
}

/// Chamfer distance between two point sets (mean-of-means form):
/// `0.5 * (mean_a min_b ||a-b|| + mean_b min_a ||a-b||)` with exact nearest
/// neighbours. Symmetric in its arguments.
pub fn chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(GbrError::Empty(
            "chamfer distance needs two non-empty point sets".into(),
        ));
    }
    let grid_a = PointGrid::with_auto_cell(a.to_vec());
    let grid_b = PointGrid::with_auto_cell(b.to_vec());
    let a_to_b = nn_distances(a, &grid_b).iter().sum::<f64>() / a.len() as f64;
    let b_to_a = nn_distances(b, &grid_a).iter().sum::<f64>() / b.len() as f64;
    Ok(0.5 * (a_to_b + b_to_a))
}

/// Precision, recall, and F1 of a predicted point set against ground truth
/// at distance threshold `tau`.
///
/// Precision is the fraction of predicted points within `tau` of the ground
/// truth; recall the fraction of ground-truth points within `tau` of the
/// prediction; F1 their harmonic mean (0 when both are 0). Exchanging the
/// arguments swaps precision and recall.
pub fn f1_score(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    tau: f64,
) -> Result<(f64, f64, f64)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GbrError::Config(format!(
            "f1 threshold must be positive and finite, got {tau}"
        )));
    }
    if pred.is_empty() || gt.is_empty() {
        return Err(GbrError::Empty(
            "f1 score needs two non-empty point sets".into(),
        ));
    }
    let grid_pred = PointGrid::with_auto_cell(pred.to_vec());
    let grid_gt = PointGrid::with_auto_cell(gt.to_vec());
    let within = |dists: &[f64]| dists.iter().filter(|&&d| d <= tau).count();
    let precision = within(&nn_distances(pred, &grid_gt)) as f64 / pred.len() as f64;
    let recall = within(&nn_distances(gt, &grid_pred)) as f64 / gt.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

/// Default F1 threshold: 1% of the ground-truth bounding-box diagonal.
pub fn default_f1_threshold(gt: &[Vector3<f64>]) -> Result<f64> {
    let (min, max) = point_bounds(gt).ok_or_else(|| {
        GbrError::Empty("cannot derive an f1 threshold from an empty point set".into())
    })?;
    let diag = (max - min).norm();
    if !(diag > 0.0) {
        return Err(GbrError::Invalid(
            "ground-truth bounding box is degenerate".into(),
        ));
    }
    Ok(0.01 * diag)
}

/// Keep only points seen by at least `min_views` cameras (inside the image
/// and in front of the camera). Used to restrict ground-truth samples to the
/// region the rig can actually observe.
pub fn filter_visible(
    points: &[Vector3<f64>],
    cameras: &[(CameraIntrinsics, CameraPose)],
    min_views: usize,
) -> Vec<Vector3<f64>> {
    points
        .iter()
        .filter(|p| {
            let seen = cameras
                .iter()
                .filter(|(intr, pose)| {
                    project(p, intr, pose).is_some_and(|px| intr.contains_pixel(px))
                })
                .count();
            seen >= min_views
        })
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    /// O(N^2) reference: same arithmetic as the production path (min of
    /// squared norms, then sqrt), so agreement is exact.
    fn brute_chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        let one_way = |from: &[Vector3<f64>], to: &[Vector3<f64>]| {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| (p - q).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                        .sqrt()
                })
                .sum::<f64>()
                / from.len() as f64
        };
        0.5 * (one_way(a, b) + one_way(b, a))
    }

    #[test]
    fn identical_sets_have_zero_chamfer() {
        let a = random_cloud(50, 1);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn two_singletons_measure_their_distance() {
        let a = [Vector3::zeros()];
        let b = [Vector3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn matches_the_brute_force_oracle_exactly() {
        let a = random_cloud(100, 2);
        let b = random_cloud(100, 3);
        let fast = chamfer(&a, &b).unwrap();
        assert_eq!(fast, brute_chamfer(&a, &b));
        // Symmetry is exact as well.
        assert_eq!(fast, chamfer(&b, &a).unwrap());
    }

    #[test]
    fn perfect_prediction_scores_ones() {
        let gt = random_cloud(40, 4);
        assert_eq!(f1_score(&gt, &gt, 0.05).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn far_sets_score_zeros() {
        let gt = random_cloud(20, 5);
        let pred: Vec<_> = gt
            .iter()
            .map(|p| p + Vector3::new(100.0, 0.0, 0.0))
            .collect();
        assert_eq!(f1_score(&pred, &gt, 0.05).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_covered_prediction_gives_two_thirds_f1() {
        let gt = vec![Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)];
        // Two predictions sit on ground truth (covering all of it), two far.
        let pred = vec![
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(50.0, 0.0, 0.0),
            Vector3::new(0.0, 50.0, 0.0),
        ];
        let (p, r, f1) = f1_score(&pred, &gt, 0.01).unwrap();
        assert_eq!(p, 0.5);
        assert_eq!(r, 1.0);
        assert_eq!(f1, 2.0 / 3.0);
    }

    #[test]
    fn argument_exchange_swaps_precision_and_recall() {
        let a = random_cloud(60, 6);
        let b = random_cloud(80, 7);
        let tau = 0.2;
        let (pa, ra, _) = f1_score(&a, &b, tau).unwrap();
        let (pb, rb, _) = f1_score(&b, &a, tau).unwrap();
        assert_eq!(pa, rb);
        assert_eq!(ra, pb);
    }

    #[test]
    fn f1_matches_a_brute_force_count() {
        let pred = random_cloud(120, 8);
        let gt = random_cloud(90, 9);
        let tau = 0.25;
        let (p, r, _) = f1_score(&pred, &gt, tau).unwrap();
        let count = |from: &[Vector3<f64>], to: &[Vector3<f64>]| {
            from.iter()
                .filter(|a| {
                    to.iter()
                        .map(|b| (*a - b).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                        .sqrt()
                        <= tau
                })
                .count()
        };
        assert_eq!(p, count(&pred, &gt) as f64 / pred.len() as f64);
        assert_eq!(r, count(&gt, &pred) as f64 / gt.len() as f64);
    }

    #[test]
    fn default_threshold_is_one_percent_of_the_diagonal() {
        let gt = vec![Vector3::zeros(), Vector3::new(3.0, 4.0, 0.0)];
        assert!((default_f1_threshold(&gt).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(default_f1_threshold(&[]).unwrap_err().exit_code(), 5);
        assert_eq!(
            default_f1_threshold(&[Vector3::zeros()])
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn rejects_empty_sets_and_bad_thresholds() {
        let a = random_cloud(5, 10);
        assert_eq!(chamfer(&a, &[]).unwrap_err().exit_code(), 5);
        assert_eq!(chamfer(&[], &a).unwrap_err().exit_code(), 5);
        assert_eq!(f1_score(&a, &[], 0.1).unwrap_err().exit_code(), 5);
        assert_eq!(f1_score(&a, &a, 0.0).unwrap_err().exit_code(), 2);
        assert_eq!(f1_score(&a, &a, f64::NAN).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn visibility_filter_keeps_multiply_seen_points() {
        let intr = CameraIntrinsics::centered(30.0, 32, 24).unwrap();
        // Two cameras at the origin looking +z, one looking -z.
        let forward = CameraPose::identity();
        let shifted = CameraPose::new(
            nalgebra::Matrix3::identity(),
            Vector3::new(0.1, 0.0, 0.0),
        )
        .unwrap();
        let backward = CameraPose::look_at(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        let cams = vec![(intr, forward), (intr, shifted), (intr, backward)];

        let front = Vector3::new(0.0, 0.0, 2.0); // seen by the two +z cameras
        let back = Vector3::new(0.0, 0.0, -2.0); // seen only by the -z camera
        let kept = filter_visible(&[front, back], &cams, 2);
        assert_eq!(kept, vec![front]);
        // Lowering the requirement keeps both.
        assert_eq!(filter_visible(&[front, back], &cams, 1).len(), 2);
    }
}
