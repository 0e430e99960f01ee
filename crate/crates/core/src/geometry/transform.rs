use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{GbrError, Result};
use crate::geometry::camera::ORTHONORMALITY_TOL;

/// Similarity transform `x -> scale * R * x + t`. Rigid transforms are the
/// `scale = 1` special case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(GbrError::Invalid(format!(
                "similarity scale must be positive, got {scale}"
            )));
        }
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev >= ORTHONORMALITY_TOL || rotation.determinant() < 0.0 {
            return Err(GbrError::Invalid(
                "similarity rotation is not a proper rotation".into(),
            ));
        }
        Ok(SimilarityTransform {
            scale,
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_parts(scale: f64, rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        debug_assert!(scale > 0.0);
        SimilarityTransform {
            scale,
            rotation,
            translation,
        }
    }

    pub fn rigid(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self::from_parts(1.0, rotation, translation)
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.scale
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
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_rot = self.rotation.inverse();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: inv_rot,
            translation: -(inv_rot * self.translation) / self.scale,
        }
    }
}

/// Weighted Umeyama alignment: the closed-form minimizer of
/// `sum_i w_i ||dst_i - (s R src_i + t)||^2` over similarity (or, with
/// `with_scale = false`, rigid) transforms.
///
/// Zero-weight correspondences are ignored entirely; binary weights therefore
/// reduce to unweighted Umeyama on the kept subset.
pub fn umeyama_weighted(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: Option<&[f64]>,
    with_scale: bool,
) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(GbrError::Dimension(format!(
            "umeyama: {} source vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != src.len() {
            return Err(GbrError::Dimension(
                "umeyama: weight count does not match points".into(),
            ));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);

    let mut w_sum = 0.0;
    let mut effective = 0usize;
    let mut mu_s = Vector3::zeros();
    let mut mu_d = Vector3::zeros();
    for i in 0..src.len() {
        let w = weight(i);
        if w <= 0.0 {
            continue;
        }
        effective += 1;
        w_sum += w;
        mu_s += w * src[i];
        mu_d += w * dst[i];
    }
    if effective < 3 {
        return Err(GbrError::Empty(format!(
            "umeyama needs at least 3 positively weighted correspondences, got {effective}"
        )));
    }
    mu_s /= w_sum;
    mu_d /= w_sum;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for i in 0..src.len() {
        let w = weight(i);
        if w <= 0.0 {
            continue;
        }
        let ds = src[i] - mu_s;
        let dd = dst[i] - mu_d;
        cov += w * dd * ds.transpose();
        var_s += w * ds.norm_squared();
    }
    cov /= w_sum;
    var_s /= w_sum;
    if var_s < 1e-18 {
        return Err(GbrError::Numerical(
            "umeyama: degenerate source distribution (zero variance)".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| GbrError::Numerical("umeyama: SVD failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| GbrError::Numerical("umeyama: SVD failed".into()))?;
    let mut s_fix = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        s_fix.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s_fix) * v_t;
    let rotation = Rotation3::from_matrix_unchecked(rotation);

    let scale = if with_scale {
        let d = svd.singular_values;
        (d.x * s_fix.x + d.y * s_fix.y + d.z * s_fix.z) / var_s
    } else {
        1.0
    };
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GbrError::Numerical(format!(
            "umeyama produced non-positive scale {scale}"
        )));
    }

    let translation = mu_d - scale * (rotation * mu_s);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}
