//! Structure-aware normal supervision.

use nalgebra::Vector3;

use crate::error::{GbrError, Result};
use crate::geometry::{NormalMap, Raster};

use super::{par_rows, SupervisionConfig};

/// Window mean normals shorter than this are degenerate (antipodal content).
const DEGENERATE_MEAN_NORM: f64 = 1e-12;

/// Per-pixel structure weights `w_nor = (1 + C) / 2` (Eqs. 20-21).
///
/// `C` is the mean cosine between the window's valid normals and their mean
/// normal. Only in-bounds valid cells enter the statistic, so windows at the
/// border renormalize over what they cover instead of shrinking toward zero;
/// a window whose mean normal collapses (antipodal normals) gets `C = 0`.
/// Planar regions score exactly 1; weights always lie in [0, 1].
pub fn normal_consistency_weights(derived: &NormalMap, window: usize) -> Raster<f64> {
    let radius = window / 2;
    let (w, h) = (derived.width(), derived.height());
    if w == 0 || h == 0 {
        return Raster::filled(w, h, 0.0);
    }
    let rows = par_rows(h, |y| {
        (0..w).map(|x| weight_at(derived, x, y, radius)).collect::<Vec<f64>>()
    });
    Raster::from_vec(w, h, rows.concat()).expect("rows tile the raster")
}

fn weight_at(derived: &NormalMap, x: usize, y: usize, radius: usize) -> f64 {
    let x_lo = x.saturating_sub(radius);
    let y_lo = y.saturating_sub(radius);
    let x_hi = (x + radius).min(derived.width() - 1);
    let y_hi = (y + radius).min(derived.height() - 1);

    let mut sum = Vector3::zeros();
    let mut count = 0usize;
    for yy in y_lo..=y_hi {
        for xx in x_lo..=x_hi {
            if let Some(n) = derived.at(xx, yy) {
                sum += n;
                count += 1;
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    let mean = sum / count as f64;
    let mean_norm = mean.norm();
    let consistency = if mean_norm < DEGENERATE_MEAN_NORM {
        0.0
    } else {
        let mut acc = 0.0;
        for yy in y_lo..=y_hi {
            for xx in x_lo..=x_hi {
                if let Some(n) = derived.at(xx, yy) {
                    acc += (n.dot(&mean) / mean_norm).clamp(-1.0, 1.0);
                }
            }
        }
        acc / count as f64
    };
    (1.0 + consistency) / 2.0
}

/// Structure-aware normal loss (Eq. 22): the `w_nor`-weighted mean of the
/// per-pixel L1 gap (over the three components) between the rendered normals
/// and the depth-derived normals, over pixels valid in both maps.
pub fn normal_loss(
    rendered: &NormalMap,
    derived: &NormalMap,
    config: &SupervisionConfig,
) -> Result<f64> {
    config.validate()?;
    if !rendered.normals().same_dims(derived.normals()) {
        return Err(GbrError::Dimension(format!(
            "normal loss maps disagree: rendered {}x{}, derived {}x{}",
            rendered.width(),
            rendered.height(),
            derived.width(),
            derived.height()
        )));
    }
    if rendered.normals().is_empty() {
        return Err(GbrError::Empty("normal loss on an empty raster".into()));
    }

    let weights = normal_consistency_weights(derived, config.normal_window);
    let rows = par_rows(rendered.height(), |y| {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut contributing = 0usize;
        for x in 0..rendered.width() {
            let (Some(n_ren), Some(n_der)) = (rendered.at(x, y), derived.at(x, y)) else {
                continue;
            };
            let weight = *weights.get(x, y);
            let gap = (n_ren.x - n_der.x).abs()
                + (n_ren.y - n_der.y).abs()
                + (n_ren.z - n_der.z).abs();
            num += weight * gap;
            den += weight;
            contributing += 1;
        }
        (num, den, contributing)
    });
    let (num, den, contributing) = rows
        .into_iter()
        .fold((0.0, 0.0, 0usize), |acc, row| {
            (acc.0 + row.0, acc.1 + row.1, acc.2 + row.2)
        });
    if contributing == 0 {
        return Err(GbrError::Empty(
            "normal loss has no contributing pixels".into(),
        ));
    }
    debug_assert!(den > 0.0, "valid windows always carry positive weight");
    Ok(num / den)
}
