//! Structural similarity of image pairs.

use crate::error::{GbrError, Result};
use crate::geometry::RgbImage;

/// Stabilization constants for unit dynamic range: (k1*L)^2 and (k2*L)^2 with
/// k1 = 0.01, k2 = 0.03, L = 1.
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Gaussian window: 11x11 taps, sigma 1.5.
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

/// Mean structural similarity between two images with values in [0, 1].
///
/// Standard formulation: per-channel SSIM maps under a normalized Gaussian
/// window (11x11, sigma 1.5), with weighted (population) moments, averaged
/// over the region where the window fits entirely inside the image, then
/// averaged across the three channels. Identical images score exactly 1.
///
/// Images smaller than the window use the largest odd window that fits, with
/// the same sigma.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(GbrError::Dimension(format!(
            "ssim images {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.is_empty() {
        return Err(GbrError::Empty("ssim of empty images".into()));
    }
    let win = fitted_window(a.width().min(a.height()));
    let kernel = gaussian_kernel(win);
    let mut total = 0.0;
    for channel in 0..3 {
        let x: Vec<f64> = a.data().iter().map(|p| p[channel]).collect();
        let y: Vec<f64> = b.data().iter().map(|p| p[channel]).collect();
        total += ssim_plane(&x, &y, a.width(), a.height(), &kernel);
    }
    Ok(total / 3.0)
}

/// Largest odd window size that fits a `min_dim`-pixel extent, capped at the
/// standard 11 taps.
fn fitted_window(min_dim: usize) -> usize {
    let cap = min_dim.min(WINDOW);
    if cap % 2 == 0 {
        cap - 1
    } else {
        cap
    }
}

/// 1-D Gaussian taps normalized to sum 1; the 2-D window is their product.
fn gaussian_kernel(win: usize) -> Vec<f64> {
    let r = (win / 2) as f64;
    let mut taps: Vec<f64> = (0..win)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Mean SSIM of one channel plane over the fully-covered interior.
fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize, kernel: &[f64]) -> f64 {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();

    let mu_x = filter_valid(x, w, h, kernel);
    let mu_y = filter_valid(y, w, h, kernel);
    let m_xx = filter_valid(&xx, w, h, kernel);
    let m_yy = filter_valid(&yy, w, h, kernel);
    let m_xy = filter_valid(&xy, w, h, kernel);

    let r = kernel.len() / 2;
    let mut sum = 0.0;
    let mut count = 0usize;
    for py in r..h - r {
        for px in r..w - r {
            let i = py * w + px;
            let (ux, uy) = (mu_x[i], mu_y[i]);
            let var_x = m_xx[i] - ux * ux;
            let var_y = m_yy[i] - uy * uy;
            let cov = m_xy[i] - ux * uy;
            let num = (2.0 * ux * uy + C1) * (2.0 * cov + C2);
            let den = (ux * ux + uy * uy + C1) * (var_x + var_y + C2);
            sum += num / den;
            count += 1;
        }
    }
    sum / count as f64
}

/// Separable Gaussian filtering, computed only where the window fits; cells
/// outside that interior are left zero and never read.
fn filter_valid(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let win = kernel.len();
    let r = win / 2;
    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        for x in r..w - r {
            let mut s = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                s += tap * src[y * w + x + k - r];
            }
            horizontal[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in r..h - r {
        for x in r..w - r {
            let mut s = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                s += tap * horizontal[(y + k - r) * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}
