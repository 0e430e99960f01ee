//! Photometric supervision mixing pixel and structural errors.

use crate::error::{GbrError, Result};
use crate::geometry::RgbImage;
use crate::metrics::ssim;

use super::par_rows;

/// Photometric loss (Eq. 26): `(1 - lambda) * L1 + lambda * (1 - SSIM)`.
///
/// The L1 term is the mean absolute difference over every pixel and channel;
/// the SSIM term uses the standard 11x11 Gaussian window (sigma 1.5).
/// Identical images score exactly 0 for any `lambda`.
pub fn photometric_loss(rendered: &RgbImage, reference: &RgbImage, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
        return Err(GbrError::Config(format!(
            "photometric lambda {lambda} outside [0, 1]"
        )));
    }
    if !rendered.same_dims(reference) {
        return Err(GbrError::Dimension(format!(
            "photometric images {}x{} vs {}x{}",
            rendered.width(),
            rendered.height(),
            reference.width(),
            reference.height()
        )));
    }
    if rendered.is_empty() {
        return Err(GbrError::Empty("photometric loss on empty images".into()));
    }
    let l1 = l1_mean(rendered, reference);
    let structural = ssim(rendered, reference)?;
    Ok((1.0 - lambda) * l1 + lambda * (1.0 - structural))
}

/// Mean absolute channel difference.
fn l1_mean(a: &RgbImage, b: &RgbImage) -> f64 {
    let w = a.width();
    let rows = par_rows(a.height(), |y| {
        let mut sum = 0.0;
        for x in 0..w {
            let (pa, pb) = (a.get(x, y), b.get(x, y));
            sum += (pa[0] - pb[0]).abs() + (pa[1] - pb[1]).abs() + (pa[2] - pb[2]).abs();
        }
        sum
    });
    rows.into_iter().sum::<f64>() / (3 * a.len()) as f64
}
