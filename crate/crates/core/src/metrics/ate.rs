//! Absolute trajectory error of estimated camera poses.

use crate::error::{GbrError, Result};
use crate::geometry::{umeyama_weighted, CameraPose};

/// RMSE of camera-center distances after similarity alignment.
///
/// The estimated trajectory is aligned to the ground truth with a
/// closed-form Umeyama fit including scale — reconstruction fixes its gauge
/// arbitrarily, so any global similarity of the estimate is absorbed and
/// scores zero. The returned value is the root-mean-square distance between
/// aligned estimated centers and ground-truth centers.
pub fn ate(estimated: &[CameraPose], ground_truth: &[CameraPose]) -> Result<f64> {
    if estimated.len() != ground_truth.len() {
        return Err(GbrError::Dimension(format!(
            "{} estimated poses vs {} ground-truth poses",
            estimated.len(),
            ground_truth.len()
        )));
    }
    if estimated.len() < 2 {
        return Err(GbrError::Invalid(format!(
            "trajectory alignment needs at least 2 poses, got {}",
            estimated.len()
        )));
    }
    let est: Vec<_> = estimated.iter().map(|p| p.center()).collect();
    let gt: Vec<_> = ground_truth.iter().map(|p| p.center()).collect();
    let align = umeyama_weighted(&est, &gt, None, true)?;
    let sum_sq: f64 = est
        .iter()
        .zip(&gt)
        .map(|(e, g)| (align.apply(e) - g).norm_squared())
        .sum();
    Ok((sum_sq / est.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3, Vector3};

    fn ring_poses(n: usize) -> Vec<CameraPose> {
        (0..n)
            .map(|i| {
                let angle = std::f64::consts::TAU * i as f64 / n as f64;
                let eye = Vector3::new(3.0 * angle.cos(), 1.0 + 0.2 * (i as f64), 3.0 * angle.sin());
                CameraPose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0)).unwrap()
            })
            .collect()
    }

    fn transform_pose(pose: &CameraPose, s: f64, rot: &Rotation3<f64>, t: &Vector3<f64>) -> CameraPose {
        // World maps as x -> s R x + t, so the new center is s R c + t and
        // the camera rotation picks up R^T on the right.
        let center = s * (rot * pose.center()) + t;
        let rotation = pose.rotation().matrix() * rot.matrix().transpose();
        CameraPose::new(rotation, -(rotation * center)).unwrap()
    }

    #[test]
    fn perfect_trajectory_scores_zero() {
        let poses = ring_poses(6);
        assert!(ate(&poses, &poses).unwrap() < 1e-12);
    }

    #[test]
    fn global_similarity_is_absorbed() {
        let gt = ring_poses(8);
        let rot = Rotation3::from_euler_angles(0.3, -0.5, 0.9);
        let t = Vector3::new(4.0, -2.0, 7.0);
        let est: Vec<_> = gt.iter().map(|p| transform_pose(p, 2.5, &rot, &t)).collect();
        assert!(ate(&est, &gt).unwrap() < 1e-9);

        let shrunk: Vec<_> = gt.iter().map(|p| transform_pose(p, 0.1, &rot, &t)).collect();
        assert!(ate(&shrunk, &gt).unwrap() < 1e-9);
    }

    #[test]
    fn displaced_camera_matches_an_independent_alignment() {
        let gt = ring_poses(5);
        let mut est = gt.clone();
        // Push one camera 0.3 units along x.
        let moved = est[2].center() + Vector3::new(0.3, 0.0, 0.0);
        let rot = *est[2].rotation().matrix();
        est[2] = CameraPose::new(rot, -(rot * moved)).unwrap();

        // Independent reference: textbook Umeyama written directly on top of
        // nalgebra's SVD, no shared code with the production path.
        let src: Vec<_> = est.iter().map(|p| p.center()).collect();
        let dst: Vec<_> = gt.iter().map(|p| p.center()).collect();
        let n = src.len() as f64;
        let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
        let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
        let mut cov = Matrix3::zeros();
        let mut var_s = 0.0;
        for (s, d) in src.iter().zip(&dst) {
            cov += (d - mu_d) * (s - mu_s).transpose();
            var_s += (s - mu_s).norm_squared();
        }
        cov /= n;
        var_s /= n;
        let svd = cov.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut sgn = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            sgn[(2, 2)] = -1.0;
        }
        let r = u * sgn * vt;
        let scale = (svd.singular_values.dot(&sgn.diagonal())) / var_s;
        let t = mu_d - scale * (r * mu_s);
        let rmse = (src
            .iter()
            .zip(&dst)
            .map(|(s, d)| (scale * (r * s) + t - d).norm_squared())
            .sum::<f64>()
            / n)
            .sqrt();

        let got = ate(&est, &gt).unwrap();
        assert!(got > 1e-3, "displacement must be visible, got {got}");
        assert!((got - rmse).abs() < 1e-12, "{got} vs oracle {rmse}");
    }

    #[test]
    fn rejects_short_or_mismatched_trajectories() {
        let poses = ring_poses(3);
        assert_eq!(ate(&poses[..1], &poses[..1]).unwrap_err().exit_code(), 2);
        assert_eq!(ate(&poses[..2], &poses[..3]).unwrap_err().exit_code(), 3);
    }
}
