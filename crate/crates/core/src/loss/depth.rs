//! Confidence-aware depth supervision.

use crate::error::{GbrError, Result};
use crate::geometry::{DepthMap, Raster};

use super::{par_rows, SupervisionConfig};

/// Confidence-aware depth loss (Eq. 18).
///
/// Weighted mean of `|reference - rendered|` where the weight
/// `w = 1 / (1 + beta * |reference - initial| / |initial|)` down-ranks pixels
/// whose depth moved a lot during refinement. A pixel contributes only when
/// all three maps are valid there and it is not flagged in `sky`
/// (`true` = sky); the result is the contribution sum divided by the weight
/// sum, so adding sky or invalid pixels cannot change the value.
pub fn depth_loss(
    reference: &DepthMap,
    initial: &DepthMap,
    rendered: &DepthMap,
    sky: Option<&Raster<bool>>,
    config: &SupervisionConfig,
) -> Result<f64> {
    config.validate()?;
    let same = reference.depth().same_dims(initial.depth())
        && reference.depth().same_dims(rendered.depth())
        && sky.is_none_or(|s| reference.depth().same_dims(s));
    if !same {
        return Err(GbrError::Dimension(format!(
            "depth loss rasters disagree: reference {}x{}, initial {}x{}, rendered {}x{}",
            reference.width(),
            reference.height(),
            initial.width(),
            initial.height(),
            rendered.width(),
            rendered.height()
        )));
    }

    let beta = config.beta;
    let rows = par_rows(reference.height(), |y| {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut contributing = 0usize;
        for x in 0..reference.width() {
            if sky.is_some_and(|s| *s.get(x, y)) {
                continue;
            }
            let (Some(d_ref), Some(d_init), Some(d_ren)) =
                (reference.at(x, y), initial.at(x, y), rendered.at(x, y))
            else {
                continue;
            };
            let weight = 1.0 / (1.0 + beta * ((d_ref - d_init).abs() / d_init.abs()));
            debug_assert!(weight > 0.0 && weight <= 1.0);
            num += weight * (d_ref - d_ren).abs();
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
            "depth loss has no contributing pixels".into(),
        ));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hash01(x: usize, y: usize, salt: u32) -> f64 {
        let mut v = (x as u32)
            .wrapping_mul(73_856_093)
            .wrapping_add((y as u32).wrapping_mul(19_349_663))
            .wrapping_add(salt.wrapping_mul(83_492_791));
        v ^= v >> 13;
        v = v.wrapping_mul(0x5bd1_e995);
        v ^= v >> 15;
        v as f64 / u32::MAX as f64
    }

    fn map_from(w: usize, h: usize, f: impl Fn(usize, usize) -> Option<f64>) -> DepthMap {
        let mut depth = Raster::filled(w, h, 1.0);
        let mut valid = Raster::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                if let Some(d) = f(x, y) {
                    depth.set(x, y, d);
                    valid.set(x, y, true);
                }
            }
        }
        DepthMap::new(depth, valid).unwrap()
    }

    #[test]
    fn zero_when_rendered_matches_reference() {
        let reference = map_from(6, 5, |x, y| Some(1.5 + hash01(x, y, 1)));
        let initial = map_from(6, 5, |x, y| Some(2.0 + hash01(x, y, 2)));
        let loss = depth_loss(
            &reference,
            &initial,
            &reference,
            None,
            &SupervisionConfig::default(),
        )
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_offset_with_unit_weights_returns_the_offset() {
        // reference == initial makes every weight exactly 1, and the dyadic
        // offset survives the averaging untouched.
        let reference = map_from(8, 7, |_, _| Some(2.0));
        let rendered = map_from(8, 7, |_, _| Some(2.25));
        let loss = depth_loss(
            &reference,
            &reference,
            &rendered,
            None,
            &SupervisionConfig::default(),
        )
        .unwrap();
        assert_eq!(loss, 0.25);
    }

    #[test]
    fn mixed_weights_match_a_direct_evaluation() {
        let w = 4;
        let h = 4;
        let reference = map_from(w, h, |x, y| {
            (hash01(x, y, 10) > 0.15).then(|| 1.5 + 1.5 * hash01(x, y, 11))
        });
        let initial = map_from(w, h, |x, y| {
            (hash01(x, y, 12) > 0.1).then(|| (1.5 + 1.5 * hash01(x, y, 11)) * (1.0 + 0.4 * hash01(x, y, 13)))
        });
        let rendered = map_from(w, h, |x, y| {
            (hash01(x, y, 14) > 0.1).then(|| 1.2 + 1.6 * hash01(x, y, 15))
        });
        let config = SupervisionConfig::default();
        let got = depth_loss(&reference, &initial, &rendered, None, &config).unwrap();

        // Straight-line re-evaluation of the formula.
        let mut num = 0.0;
        let mut den = 0.0;
        for y in 0..h {
            for x in 0..w {
                if let (Some(dr), Some(d0), Some(ds)) =
                    (reference.at(x, y), initial.at(x, y), rendered.at(x, y))
                {
                    let wgt = 1.0 / (1.0 + config.beta * (dr - d0).abs() / d0.abs());
                    num += wgt * (dr - ds).abs();
                    den += wgt;
                }
            }
        }
        assert!(den > 0.0);
        let want = num / den;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        assert!(got > 0.0);
    }

    #[test]
    fn sky_and_invalid_pixels_do_not_contribute() {
        let w = 10;
        let h = 6;
        let reference = map_from(w, h, |_, _| Some(2.0));
        let initial = map_from(w, h, |x, y| Some(2.0 + 0.3 * hash01(x, y, 3)));
        // Huge error on the right half, which the sky mask removes; an
        // invalid stripe in the rendered map removes another column.
        let rendered = map_from(w, h, |x, y| {
            if x == 2 {
                None
            } else if x >= 5 {
                Some(50.0)
            } else {
                Some(2.0 + 0.1 * hash01(x, y, 4))
            }
        });
        let sky = Raster::from_fn(w, h, |x, _| x >= 5);
        let config = SupervisionConfig::default();
        let masked = depth_loss(&reference, &initial, &rendered, Some(&sky), &config).unwrap();

        // The same scene cropped to the clean columns.
        let crop = |m: &DepthMap| {
            map_from(5, h, |x, y| if x == 2 { None } else { m.at(x, y) })
        };
        let cropped = depth_loss(
            &crop(&reference),
            &crop(&initial),
            &crop(&rendered),
            None,
            &config,
        )
        .unwrap();
        assert!((masked - cropped).abs() < 1e-15);
        assert!(masked < 0.2, "sky pixels leaked into the loss: {masked}");
    }

    #[test]
    fn rejects_empty_selections_and_bad_inputs() {
        let a = map_from(4, 4, |_, _| Some(2.0));
        let none = DepthMap::all_invalid(4, 4);
        let config = SupervisionConfig::default();
        assert_eq!(
            depth_loss(&a, &a, &none, None, &config)
                .unwrap_err()
                .exit_code(),
            5
        );
        let all_sky = Raster::filled(4, 4, true);
        assert_eq!(
            depth_loss(&a, &a, &a, Some(&all_sky), &config)
                .unwrap_err()
                .exit_code(),
            5
        );
        let small = map_from(3, 4, |_, _| Some(2.0));
        assert_eq!(
            depth_loss(&a, &small, &a, None, &config)
                .unwrap_err()
                .exit_code(),
            3
        );
        let bad = SupervisionConfig {
            beta: f64::NAN,
            ..SupervisionConfig::default()
        };
        assert_eq!(
            depth_loss(&a, &a, &a, None, &bad).unwrap_err().exit_code(),
            2
        );
    }
}
