//! Focal length recovery from a single point map.
//!
//! With the principal point at the image center, a camera-frame point
//! (x, y, z) lands at pixel offset f * (x/z, y/z). The focal is the
//! confidence-weighted robust fit of that proportionality over all
//! confident cells, solved by iteratively reweighted least squares on the
//! unsquared residual norm.

use nalgebra::Vector2;

use crate::error::{GbrError, Result};
use crate::geometry::PointMapFrame;

/// Minimum number of usable cells before an estimate is attempted.
pub const MIN_FOCAL_CELLS: usize = 10;

const IRLS_ITERATIONS: usize = 60;

/// Outcome of a focal estimate.
#[derive(Clone, Copy, Debug)]
pub struct FocalEstimate {
    pub focal: f64,
    /// Robust relative dispersion of per-cell implied focals; large values
    /// mean the map does not agree on a single focal.
    pub dispersion: f64,
    /// Set when the dispersion suggests conflicting focal populations.
    pub bimodal: bool,
}

/// Threshold on relative dispersion above which the estimate is flagged.
pub const BIMODAL_DISPERSION: f64 = 0.1;

/// Estimate the focal length of the camera that produced `frame`.
/// `frame` must be in its own camera frame.
pub fn estimate_focal(frame: &PointMapFrame) -> Result<FocalEstimate> {
    let cx = frame.width() as f64 / 2.0;
    let cy = frame.height() as f64 / 2.0;

    // (pixel offset, normalized image point, confidence)
    let mut cells: Vec<(Vector2<f64>, Vector2<f64>, f64)> = Vec::new();
    for (x, y, p, c) in frame.confident_cells(0.0) {
        if p.z <= 0.0 {
            continue;
        }
        let offset = Vector2::new(x as f64 - cx, y as f64 - cy);
        let dir = Vector2::new(p.x / p.z, p.y / p.z);
        cells.push((offset, dir, c));
    }
    if cells.len() < MIN_FOCAL_CELLS {
        return Err(GbrError::Empty(format!(
            "focal estimation needs at least {MIN_FOCAL_CELLS} confident cells with positive \
             depth, found {}",
            cells.len()
        )));
    }

    let denom_total: f64 = cells.iter().map(|(_, d, c)| c * d.norm_squared()).sum();
    if denom_total < 1e-12 {
        return Err(GbrError::Numerical(
            "focal estimation degenerate: all confident points lie on the optical axis".into(),
        ));
    }

    // Residual floor keeps IRLS weights finite on exact data.
    let scale: f64 = cells.iter().map(|(o, _, _)| o.norm()).sum::<f64>() / cells.len() as f64;
    let floor = (1e-8 * scale).max(1e-12);

    // Initialize from the squared objective, then reweight by 1/residual to
    // descend the unsquared one.
    let mut f = cells.iter().map(|(o, d, c)| c * o.dot(d)).sum::<f64>() / denom_total;
    for _ in 0..IRLS_ITERATIONS {
        let mut num = 0.0;
        let mut den = 0.0;
        for (o, d, c) in &cells {
            let r = (o - d * f).norm().max(floor);
            let w = c / r;
            num += w * o.dot(d);
            den += w * d.norm_squared();
        }
        if den < 1e-15 {
            return Err(GbrError::Numerical(
                "focal estimation degenerate: reweighted system collapsed".into(),
            ));
        }
        let next = num / den;
        let done = (next - f).abs() <= 1e-12 * f.abs().max(1.0);
        f = next;
        if done {
            break;
        }
    }
    if !(f.is_finite() && f > 0.0) {
        return Err(GbrError::Numerical(format!(
            "focal estimation produced non-positive focal {f}"
        )));
    }

    // Per-cell implied focals for the dispersion diagnostic.
    let mut implied: Vec<f64> = cells
        .iter()
        .filter(|(_, d, _)| d.norm_squared() > 1e-6)
        .map(|(o, d, _)| o.dot(d) / d.norm_squared())
        .collect();
    implied.sort_by(|a, b| a.total_cmp(b));
    let dispersion = if implied.len() >= 4 {
        let q1 = implied[implied.len() / 4];
        let q3 = implied[3 * implied.len() / 4];
        (q3 - q1).abs() / f.abs()
    } else {
        0.0
    };

    Ok(FocalEstimate {
        focal: f,
        dispersion,
        bimodal: dispersion > BIMODAL_DISPERSION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Raster, ReferenceFrame};
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Map whose cells unproject pixel (x, y) at the given focal and a
    /// varying depth.
    fn frame_with_focal(f: f64, w: usize, h: usize) -> PointMapFrame {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let points = Raster::from_fn(w, h, |x, y| {
            let z = 2.0 + 0.01 * ((x * 7 + y * 3) % 13) as f64;
            Vector3::new((x as f64 - cx) / f * z, (y as f64 - cy) / f * z, z)
        });
        let conf = Raster::filled(w, h, 5.0);
        PointMapFrame::new(points, conf, 0, ReferenceFrame::View(0)).unwrap()
    }

    #[test]
    fn exact_frame_recovers_focal() {
        let est = estimate_focal(&frame_with_focal(500.0, 40, 30)).unwrap();
        assert!((est.focal - 500.0).abs() < 1e-3, "got {}", est.focal);
        assert!(!est.bimodal);
    }

    #[test]
    fn zero_confidence_outliers_are_ignored() {
        let frame = frame_with_focal(500.0, 40, 30);
        let mut rng = StdRng::seed_from_u64(1);
        let mut points = frame.points().clone();
        let mut conf = frame.confidence().clone();
        let n = points.len();
        for _ in 0..n / 10 {
            let i = rng.random_range(0..n);
            let (x, y) = (i % 40, i / 40);
            points.set(x, y, Vector3::new(rng.random(), rng.random(), 1.0));
            conf.set(x, y, 0.0);
        }
        let corrupted = PointMapFrame::new(points, conf, 0, ReferenceFrame::View(0)).unwrap();
        let est = estimate_focal(&corrupted).unwrap();
        assert!((est.focal - 500.0).abs() < 1e-3, "got {}", est.focal);
    }

    /// Two mixed focal populations: the result must stay inside their span,
    /// agree with a brute-force scan of the 1-D objective, and be flagged.
    #[test]
    fn mixed_focals_land_between_and_flag() {
        let (w, h) = (40, 30);
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let points = Raster::from_fn(w, h, |x, y| {
            let f = if x % 5 < 3 { 400.0 } else { 600.0 };
            let z = 2.5;
            Vector3::new((x as f64 - cx) / f * z, (y as f64 - cy) / f * z, z)
        });
        let conf = Raster::filled(w, h, 5.0);
        let frame = PointMapFrame::new(points, conf, 0, ReferenceFrame::View(0)).unwrap();
        let est = estimate_focal(&frame).unwrap();
        assert!(
            (399.0..=601.0).contains(&est.focal),
            "got {}",
            est.focal
        );
        assert!(est.bimodal, "dispersion {}", est.dispersion);

        // Brute-force the 1-D objective on a fine grid.
        let objective = |f: f64| -> f64 {
            let mut total = 0.0;
            for (x, y, p) in frame.points().iter_cells() {
                let o = Vector2::new(x as f64 - cx, y as f64 - cy);
                let d = Vector2::new(p.x / p.z, p.y / p.z);
                total += 5.0 * (o - d * f).norm();
            }
            total
        };
        let mut best = (0.0, f64::INFINITY);
        let mut fc = 380.0;
        while fc <= 620.0 {
            let v = objective(fc);
            if v < best.1 {
                best = (fc, v);
            }
            fc += 0.25;
        }
        assert!(
            (est.focal - best.0).abs() <= 1.0,
            "irls {} vs grid {}",
            est.focal,
            best.0
        );
    }

    #[test]
    fn too_few_cells_is_an_error() {
        let points = Raster::filled(2, 2, Vector3::new(0.1, 0.1, 1.0));
        let conf = Raster::filled(2, 2, 5.0);
        let frame = PointMapFrame::new(points, conf, 0, ReferenceFrame::View(0)).unwrap();
        assert!(estimate_focal(&frame).is_err());
    }

    #[test]
    fn optical_axis_degenerate_is_an_error() {
        let points = Raster::filled(5, 4, Vector3::new(0.0, 0.0, 2.0));
        let conf = Raster::filled(5, 4, 5.0);
        let frame = PointMapFrame::new(points, conf, 0, ReferenceFrame::View(0)).unwrap();
        let err = estimate_focal(&frame).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
