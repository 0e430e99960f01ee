use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GbrError, Result};

/// Rotations must satisfy `max|R^T R - I| < ORTHONORMALITY_TOL` at construction.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Points with camera-frame z below this are treated as behind the camera.
pub const MIN_CAMERA_Z: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GbrError::Invalid(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GbrError::Invalid(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Centered pinhole: focal `f` for both axes, principal point at (W/2, H/2).
    pub fn centered(f: f64, width: usize, height: usize) -> Result<Self> {
        CameraIntrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Ray direction `K^-1 [u, v, 1]^T` in the camera frame (z component 1).
    pub fn back_ray(&self, pixel: Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    pub fn contains_pixel(&self, pixel: Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= self.width as f64 - 1.0
            && pixel.y <= self.height as f64 - 1.0
    }
}

fn check_rotation(m: &Matrix3<f64>) -> Result<Rotation3<f64>> {
    let gram = m.transpose() * m;
    let dev = (gram - Matrix3::identity()).abs().max();
    if dev >= ORTHONORMALITY_TOL {
        return Err(GbrError::Invalid(format!(
            "rotation is not orthonormal (max|R^T R - I| = {dev:.3e})"
        )));
    }
    if m.determinant() < 0.0 {
        return Err(GbrError::Invalid(
            "rotation has negative determinant".into(),
        ));
    }
    Ok(Rotation3::from_matrix_unchecked(*m))
}

/// Rigid camera pose mapping world to camera coordinates:
/// `x_cam = R x_world + t`. The camera looks along +z in its own frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    /// `Rotation3` guarantees a proper rotation by construction.
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        CameraPose {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality and determinant before accepting `rotation`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Ok(CameraPose {
            rotation: check_rotation(&rotation)?,
            translation,
        })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        CameraPose {
            rotation,
            translation,
        }
    }

    /// Pose with camera center `eye` looking at `target`, `up` roughly up.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GbrError::Invalid("look_at: eye equals target".into()))?;
        let x = up
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or_else(|| GbrError::Invalid("look_at: up parallel to view axis".into()))?;
        let y = z.cross(&x);
        // Rows of R are the camera axes expressed in world coordinates.
        let rotation = Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[
            x.transpose(),
            y.transpose(),
            z.transpose(),
        ]));
        Ok(CameraPose {
            rotation,
            translation: -(rotation * eye),
        })
    }

    #[inline]
    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    #[inline]
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    #[inline]
    pub fn to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (cam - self.translation)
    }

    /// Camera center in world coordinates: `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// World-frame unit vector of the camera's viewing axis (+z).
    pub fn view_axis(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    /// Map a world-frame direction into the camera frame.
    #[inline]
    pub fn rotate_to_camera(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * dir
    }
}

/// Perspective projection of a world point. `None` signals a point at or
/// behind the camera plane, which downstream code treats as non-visible.
pub fn project(
    point: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> Option<Vector2<f64>> {
    project_camera_point(&pose.to_camera(point), intrinsics)
}

/// Projection of a point already in camera coordinates.
pub fn project_camera_point(
    cam: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    if cam.z <= MIN_CAMERA_Z {
        return None;
    }
    Some(Vector2::new(
        intrinsics.fx * cam.x / cam.z + intrinsics.cx,
        intrinsics.fy * cam.y / cam.z + intrinsics.cy,
    ))
}

/// Inverse of [`project`] at a given z-depth. Depth must be positive.
pub fn unproject(
    pixel: Vector2<f64>,
    depth: f64,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> Vector3<f64> {
    assert!(depth > 0.0, "unproject requires positive depth");
    pose.to_world(&(intrinsics.back_ray(pixel) * depth))
}
