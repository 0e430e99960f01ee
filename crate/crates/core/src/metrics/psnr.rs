//! Peak signal-to-noise ratio for unit-range images.

use crate::error::{GbrError, Result};
use crate::geometry::RgbImage;

/// Mean squared error below which two images count as exactly equal.
pub const PSNR_EXACT_MSE: f64 = 1e-12;

/// PSNR in decibels: `10 * log10(1 / MSE)` over all pixels and channels,
/// for values in `[0, 1]`. Pairs with `MSE < 1e-12` return positive
/// infinity, the "exact" sentinel.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(GbrError::Dimension(format!(
            "psnr images {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.is_empty() {
        return Err(GbrError::Empty("psnr of empty images".into()));
    }
    let sum_sq: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(pa, pb)| {
            (0..3)
                .map(|c| {
                    let d = pa[c] - pb[c];
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    let mse = sum_sq / (3 * a.len()) as f64;
    if mse < PSNR_EXACT_MSE {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
