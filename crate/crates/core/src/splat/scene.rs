//! Seeding a splat scene from a reconstructed point cloud.
//!
//! Each point becomes one disk-shaped primitive: radius from the cloud's
//! median nearest-neighbor spacing, orientation from a local PCA of the
//! neighborhood (smallest principal axis = surface normal), color either
//! supplied per point or a uniform default.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GbrError, Result};
use crate::geometry::GaussianPrimitive;
use crate::spatial::{median_nn_spacing, PointGrid};
use crate::splat::render::SplatScene;

/// Options for [`SplatScene::from_cloud`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SplatInitConfig {
    /// Disk radius as a multiple of the median nearest-neighbor spacing.
    pub radius_scale: f64,
    /// Thickness of each disk relative to its radius.
    pub flatten: f64,
    /// Opacity assigned to every primitive.
    pub opacity: f64,
    /// Color used when no per-point colors are supplied.
    pub default_color: [f64; 3],
    /// Neighborhood radius for normal estimation, as a multiple of the
    /// median nearest-neighbor spacing.
    pub normal_radius_scale: f64,
    pub background: [f64; 3],
}

impl Default for SplatInitConfig {
    fn default() -> Self {
        SplatInitConfig {
            radius_scale: 1.5,
            flatten: 0.15,
            opacity: 0.85,
            default_color: [0.7, 0.7, 0.7],
            normal_radius_scale: 2.5,
            background: [0.0, 0.0, 0.0],
        }
    }
}

impl SplatScene {
    /// Builds one disk primitive per cloud point.
    ///
    /// Normals come from the smallest principal axis of each point's
    /// neighborhood; points with fewer than 4 neighbors in range keep an
    /// axis-aligned orientation. Signs are fixed deterministically (largest
    /// normal component made positive) — the renderer re-flips toward the
    /// camera per view, so only consistency matters here.
    pub fn from_cloud(
        cloud: &[Vector3<f64>],
        colors: Option<&[[f64; 3]]>,
        config: &SplatInitConfig,
    ) -> Result<SplatScene> {
        if cloud.is_empty() {
            return Err(GbrError::Empty(
                "cannot build a splat scene from an empty cloud".into(),
            ));
        }
        if let Some(cols) = colors {
            if cols.len() != cloud.len() {
                return Err(GbrError::Dimension(format!(
                    "{} colors supplied for {} points",
                    cols.len(),
                    cloud.len()
                )));
            }
        }
        if !(config.radius_scale > 0.0 && config.flatten > 0.0) {
            return Err(GbrError::Config(
                "radius_scale and flatten must be positive".into(),
            ));
        }
        let spacing = median_nn_spacing(cloud).ok_or_else(|| {
            GbrError::Invalid("need at least two distinct points to infer a splat radius".into())
        })?;
        if !(spacing > 0.0) {
            return Err(GbrError::Invalid(
                "cloud points are all coincident; cannot infer a splat radius".into(),
            ));
        }
        let radius = config.radius_scale * spacing;
        let reach = config.normal_radius_scale * spacing;
        let grid = PointGrid::build(cloud.to_vec(), reach.max(f64::MIN_POSITIVE));

        let mut primitives = Vec::with_capacity(cloud.len());
        for (i, p) in cloud.iter().enumerate() {
            let neighbors = grid.within_radius(p, reach);
            let rotation = if neighbors.len() >= 4 {
                let mut centroid = Vector3::zeros();
                for &j in &neighbors {
                    centroid += cloud[j];
                }
                centroid /= neighbors.len() as f64;
                let mut cov = Matrix3::zeros();
                for &j in &neighbors {
                    let d = cloud[j] - centroid;
                    cov += d * d.transpose();
                }
                normal_to_rotation(smallest_axis(&cov))
            } else {
                UnitQuaternion::identity()
            };
            let color = colors.map_or(config.default_color, |c| c[i]);
            primitives.push(GaussianPrimitive::new(
                *p,
                rotation,
                Vector3::new(radius, radius, radius * config.flatten),
                config.opacity,
                color,
            )?);
        }
        SplatScene::new(primitives, config.background)
    }
}

/// Unit eigenvector of the smallest eigenvalue, with a deterministic sign
/// (largest-magnitude component positive).
fn smallest_axis(cov: &Matrix3<f64>) -> Vector3<f64> {
    let eig = cov.symmetric_eigen();
    let mut k = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[k] {
            k = i;
        }
    }
    let mut axis: Vector3<f64> = eig.eigenvectors.column(k).into();
    let lead = (0..3).max_by(|&a, &b| axis[a].abs().total_cmp(&axis[b].abs())).unwrap();
    if axis[lead] < 0.0 {
        axis = -axis;
    }
    axis.normalize()
}

/// Rotation carrying the z-axis onto the given unit normal.
fn normal_to_rotation(normal: Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&Vector3::z(), &normal).unwrap_or_else(|| {
        // Antipodal case: any half-turn perpendicular to z works.
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quasi-uniform points on a sphere.
    fn sphere_cloud(n: usize, radius: f64, center: Vector3<f64>) -> Vec<Vector3<f64>> {
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let rho = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                center + radius * Vector3::new(rho * th.cos(), rho * th.sin(), z)
            })
            .collect()
    }

    #[test]
    fn sphere_cloud_gets_radial_normals() {
        let center = Vector3::new(0.1, -0.2, 3.0);
        let cloud = sphere_cloud(2000, 1.0, center);
        let scene = SplatScene::from_cloud(&cloud, None, &SplatInitConfig::default()).unwrap();
        assert_eq!(scene.primitives.len(), cloud.len());
        let mut good = 0usize;
        for g in &scene.primitives {
            let normal = g.min_scale_axis();
            let radial = (g.position - center).normalize();
            // Sign is unconstrained; compare the unsigned angle.
            let cos = normal.dot(&radial).abs().clamp(0.0, 1.0);
            if cos.acos().to_degrees() < 10.0 {
                good += 1;
            }
        }
        assert!(
            good as f64 > 0.95 * cloud.len() as f64,
            "only {good} of {} normals near radial",
            cloud.len()
        );
    }

    #[test]
    fn scales_follow_cloud_spacing() {
        let cloud = sphere_cloud(500, 1.0, Vector3::zeros());
        let spacing = median_nn_spacing(&cloud).unwrap();
        let cfg = SplatInitConfig::default();
        let scene = SplatScene::from_cloud(&cloud, None, &cfg).unwrap();
        let s = scene.primitives[0].scale();
        assert!((s.x - cfg.radius_scale * spacing).abs() < 1e-12);
        assert!((s.z - s.x * cfg.flatten).abs() < 1e-12);
    }

    #[test]
    fn per_point_colors_are_kept() {
        let cloud = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.1, 0.0, 1.0),
            Vector3::new(0.0, 0.1, 1.0),
        ];
        let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let scene =
            SplatScene::from_cloud(&cloud, Some(&colors), &SplatInitConfig::default()).unwrap();
        for (g, c) in scene.primitives.iter().zip(&colors) {
            assert_eq!(g.color(), *c);
        }
        let err = SplatScene::from_cloud(&cloud, Some(&colors[..2]), &SplatInitConfig::default())
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn rejects_degenerate_clouds() {
        let err =
            SplatScene::from_cloud(&[], None, &SplatInitConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 5);
        let coincident = vec![Vector3::new(1.0, 1.0, 1.0); 5];
        assert!(SplatScene::from_cloud(&coincident, None, &SplatInitConfig::default()).is_err());
    }
}
