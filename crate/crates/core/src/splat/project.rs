//! Perspective projection of a 3D Gaussian into a 2D image-plane Gaussian.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2};

use crate::geometry::{project_camera_point, CameraIntrinsics, CameraPose, GaussianPrimitive};

/// Primitives closer than this camera-frame depth are culled.
pub const MIN_SPLAT_DEPTH: f64 = 0.01;

/// A primitive's image-plane footprint.
#[derive(Clone, Copy, Debug)]
pub struct ProjectedGaussian {
    /// Projected center μ′ in pixels.
    pub mean: Vector2<f64>,
    /// Regularized 2×2 image-plane covariance Σ′ in px².
    pub cov: Matrix2<f64>,
    /// Camera-frame depth of the center.
    pub depth: f64,
}

/// Projects one Gaussian through the camera, or `None` when its center lies
/// behind (or closer than [`MIN_SPLAT_DEPTH`] to) the camera plane.
///
/// The world covariance Σ = R·S·Sᵀ·Rᵀ is pushed through the rigid transform W
/// and the projective Jacobian J, keeping the upper-left 2×2 block; a floor of
/// `cov_floor_px2·I` keeps the footprint invertible and at least a fraction of
/// a pixel wide.
pub fn project_gaussian(
    g: &GaussianPrimitive,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    cov_floor_px2: f64,
) -> Option<ProjectedGaussian> {
    let cam = pose.to_camera(&g.position);
    if cam.z <= MIN_SPLAT_DEPTH {
        return None;
    }
    let mean = project_camera_point(&cam, intrinsics)?;

    let rot = g.rotation.to_rotation_matrix();
    let scaled = rot * Matrix3::from_diagonal(&g.scale());
    let sigma = scaled * scaled.transpose();

    let w = pose.rotation.matrix();
    let (fx, fy) = (intrinsics.fx, intrinsics.fy);
    let inv_z = 1.0 / cam.z;
    let jac = Matrix2x3::new(
        fx * inv_z,
        0.0,
        -fx * cam.x * inv_z * inv_z,
        0.0,
        fy * inv_z,
        -fy * cam.y * inv_z * inv_z,
    );
    let jw = jac * w;
    let cov = jw * sigma * jw.transpose() + Matrix2::identity() * cov_floor_px2;

    Some(ProjectedGaussian {
        mean,
        cov,
        depth: cam.z,
    })
}
