//! Windowed affine alignment of a candidate depth map against a reference.
//!
//! For each window ω the closed-form minimizer of Σ (a·D_i + b − D⁰_i)² + ε·a²
//! is a = cov_ω(D, D⁰) / (var_ω(D) + ε/|ω|), b = mean_ω(D⁰) − a·mean_ω(D).
//! Per-pixel coefficients come from all covering windows (averaged when the
//! stride is 1, bilinearly interpolated between window centers otherwise) and
//! the corrected map is D*_i = a_i·D_i + b_i.
//!
//! Window statistics use integral images over globally shifted values (shift =
//! the first jointly valid sample) so a constant reference yields an exactly
//! zero covariance and the corrected map reproduces the constant bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{GbrError, Result};
use crate::geometry::{DepthMap, Raster};

/// Options for [`scale_correct`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleCorrectionConfig {
    /// Window side length in pixels; odd and ≥ 3.
    pub window: usize,
    /// Window step in pixels; 1 averages covering windows, larger strides
    /// interpolate bilinearly between window centers.
    pub stride: usize,
    /// Regularizer applied in windows whose center sits on a depth edge.
    pub eps_edge: f64,
    /// Regularizer applied in smooth windows.
    pub eps_smooth: f64,
    /// Edge threshold on the central-difference gradient magnitude of the
    /// reference depth, normalized by the window's mean reference depth.
    pub tau_e: f64,
}

impl Default for ScaleCorrectionConfig {
    fn default() -> Self {
        ScaleCorrectionConfig {
            window: 25,
            stride: 1,
            eps_edge: 1e-7,
            eps_smooth: 1e-7,
            tau_e: 0.5,
        }
    }
}

impl ScaleCorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(GbrError::Config(format!(
                "correction window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if self.stride == 0 {
            return Err(GbrError::Config("correction stride must be positive".into()));
        }
        for (name, v) in [("eps_edge", self.eps_edge), ("eps_smooth", self.eps_smooth)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GbrError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.tau_e.is_finite() && self.tau_e > 0.0) {
            return Err(GbrError::Config(format!(
                "tau_e must be finite and positive, got {}",
                self.tau_e
            )));
        }
        Ok(())
    }
}

/// Summed-area table with exclusive-end rectangle queries.
struct Integral {
    w1: usize,
    data: Vec<f64>,
}

impl Integral {
    fn build(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let w1 = w + 1;
        let mut data = vec![0.0; w1 * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(x, y);
                data[(y + 1) * w1 + x + 1] = data[y * w1 + x + 1] + row;
            }
        }
        Integral { w1, data }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    #[inline]
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        self.data[y1 * self.w1 + x1] - self.data[y0 * self.w1 + x1]
            - self.data[y1 * self.w1 + x0]
            + self.data[y0 * self.w1 + x0]
    }
}

/// Window start offsets covering `0..total` with the final window flush with
/// the end so every pixel is covered.
fn window_positions(total: usize, win: usize, stride: usize) -> Vec<usize> {
    let last = total - win;
    let mut xs: Vec<usize> = (0..=last).step_by(stride).collect();
    if *xs.last().unwrap() != last {
        xs.push(last);
    }
    xs
}

/// Index pair and fraction for piecewise-linear interpolation over sorted,
/// strictly increasing sample coordinates, clamped at the ends.
fn bilin_axis(centers: &[f64], x: f64) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if x <= centers[0] || last == 0 {
        return (0, 0, 0.0);
    }
    if x >= centers[last] {
        return (last, last, 0.0);
    }
    let k = centers.partition_point(|c| *c <= x) - 1;
    let t = (x - centers[k]) / (centers[k + 1] - centers[k]);
    (k, k + 1, t)
}

/// Aligns candidate depth `d` to reference `d0` by per-window affine fits.
///
/// Cells where `d0` is invalid are excluded from the window statistics;
/// windows with fewer than 4 jointly valid cells inherit the coefficients of
/// the nearest valid window (by center distance, earlier window on ties).
/// The output is valid wherever `d` is valid and the corrected depth stays
/// positive and finite.
pub fn scale_correct(d: &DepthMap, d0: &DepthMap, config: &ScaleCorrectionConfig) -> Result<DepthMap> {
    config.validate()?;
    if d.width() != d0.width() || d.height() != d0.height() {
        return Err(GbrError::Dimension(format!(
            "candidate depth is {}x{} but reference is {}x{}",
            d.width(),
            d.height(),
            d0.width(),
            d0.height()
        )));
    }
    let (w, h) = (d.width(), d.height());
    if w == 0 || h == 0 {
        return Err(GbrError::Dimension("depth maps must be non-empty".into()));
    }
    let win_x = config.window.min(w);
    let win_y = config.window.min(h);

    let joint = Raster::from_fn(w, h, |x, y| d.is_valid(x, y) && d0.is_valid(x, y));
    let n_joint = joint.data().iter().filter(|v| **v).count();
    let required = win_x * win_y;
    if n_joint < required {
        return Err(GbrError::Invalid(format!(
            "scale correction needs at least {required} jointly valid pixels, found {n_joint}"
        )));
    }

    // Global shifts taken from the first jointly valid sample: window moments
    // of the shifted values are far better conditioned, and a constant
    // reference produces an exactly zero covariance.
    let first = joint
        .data()
        .iter()
        .position(|v| *v)
        .expect("joint count checked above");
    let (sx, sy) = (first % w, first / w);
    let shift_d = *d.depth().get(sx, sy);
    let shift_d0 = *d0.depth().get(sx, sy);

    let masked = |x: usize, y: usize, v: f64| if *joint.get(x, y) { v } else { 0.0 };
    let i_n = Integral::build(w, h, |x, y| masked(x, y, 1.0));
    let i_d = Integral::build(w, h, |x, y| masked(x, y, d.depth().get(x, y) - shift_d));
    let i_d0 = Integral::build(w, h, |x, y| masked(x, y, d0.depth().get(x, y) - shift_d0));
    let i_dd = Integral::build(w, h, |x, y| {
        let v = d.depth().get(x, y) - shift_d;
        masked(x, y, v * v)
    });
    let i_dd0 = Integral::build(w, h, |x, y| {
        masked(x, y, (d.depth().get(x, y) - shift_d) * (d0.depth().get(x, y) - shift_d0))
    });

    let xs = window_positions(w, win_x, config.stride);
    let ys = window_positions(h, win_y, config.stride);
    let (gx, gy) = (xs.len(), ys.len());

    let mut coeff_a = vec![0.0f64; gx * gy];
    let mut coeff_b = vec![0.0f64; gx * gy];
    let mut coeff_ok = vec![false; gx * gy];

    for (ky, &y0) in ys.iter().enumerate() {
        for (kx, &x0) in xs.iter().enumerate() {
            let (x1, y1) = (x0 + win_x, y0 + win_y);
            let n = i_n.rect(x0, y0, x1, y1);
            if n < 4.0 {
                continue;
            }
            let sd = i_d.rect(x0, y0, x1, y1);
            let sd0 = i_d0.rect(x0, y0, x1, y1);
            let sdd = i_dd.rect(x0, y0, x1, y1);
            let sdd0 = i_dd0.rect(x0, y0, x1, y1);
            let mean_d = sd / n + shift_d;
            let mean_d0 = sd0 / n + shift_d0;
            // n²·var(D) and n²·cov(D, D⁰); shifts cancel algebraically.
            let var_num = (n * sdd - sd * sd).max(0.0);
            let cov_num = n * sdd0 - sd * sd0;
            let eps = window_eps(d0, x0 + (win_x - 1) / 2, y0 + (win_y - 1) / 2, mean_d0, config);
            let den = var_num + n * eps;
            let a = if den > 0.0 { cov_num / den } else { 0.0 };
            let idx = ky * gx + kx;
            coeff_a[idx] = a;
            coeff_b[idx] = mean_d0 - a * mean_d;
            coeff_ok[idx] = true;
        }
    }

    inherit_coefficients(&xs, &ys, win_x, win_y, &mut coeff_a, &mut coeff_b, &coeff_ok)?;

    // Combine per-pixel coefficients relative to the first window's values:
    // identical window coefficients then average (or interpolate) without any
    // rounding, which keeps the constant-reference case exact.
    let (ref_a, ref_b) = (coeff_a[0], coeff_b[0]);
    for v in coeff_a.iter_mut() {
        *v -= ref_a;
    }
    for v in coeff_b.iter_mut() {
        *v -= ref_b;
    }

    let mut out_depth = Raster::filled(w, h, 0.0f64);
    let mut out_valid = Raster::filled(w, h, false);
    if config.stride == 1 {
        // Average of all covering windows, O(1) per pixel via summed grids.
        let ga = Integral::build(gx, gy, |kx, ky| coeff_a[ky * gx + kx]);
        let gb = Integral::build(gx, gy, |kx, ky| coeff_b[ky * gx + kx]);
        for y in 0..h {
            let ky_lo = y.saturating_sub(win_y - 1).min(gy - 1);
            let ky_hi = y.min(gy - 1);
            for x in 0..w {
                let Some(dv) = d.at(x, y) else { continue };
                let kx_lo = x.saturating_sub(win_x - 1).min(gx - 1);
                let kx_hi = x.min(gx - 1);
                let cnt = ((kx_hi - kx_lo + 1) * (ky_hi - ky_lo + 1)) as f64;
                let a = ga.rect(kx_lo, ky_lo, kx_hi + 1, ky_hi + 1) / cnt + ref_a;
                let b = gb.rect(kx_lo, ky_lo, kx_hi + 1, ky_hi + 1) / cnt + ref_b;
                store(&mut out_depth, &mut out_valid, x, y, a * dv + b);
            }
        }
    } else {
        let cxs: Vec<f64> = xs.iter().map(|&x0| x0 as f64 + (win_x - 1) as f64 / 2.0).collect();
        let cys: Vec<f64> = ys.iter().map(|&y0| y0 as f64 + (win_y - 1) as f64 / 2.0).collect();
        for y in 0..h {
            let (ky0, ky1, ty) = bilin_axis(&cys, y as f64);
            for x in 0..w {
                let Some(dv) = d.at(x, y) else { continue };
                let (kx0, kx1, tx) = bilin_axis(&cxs, x as f64);
                let lerp = |grid: &[f64]| {
                    let g00 = grid[ky0 * gx + kx0];
                    let g10 = grid[ky0 * gx + kx1];
                    let g01 = grid[ky1 * gx + kx0];
                    let g11 = grid[ky1 * gx + kx1];
                    (g00 * (1.0 - tx) + g10 * tx) * (1.0 - ty) + (g01 * (1.0 - tx) + g11 * tx) * ty
                };
                let a = lerp(&coeff_a) + ref_a;
                let b = lerp(&coeff_b) + ref_b;
                store(&mut out_depth, &mut out_valid, x, y, a * dv + b);
            }
        }
    }

    DepthMap::new(out_depth, out_valid)
}

#[inline]
fn store(depth: &mut Raster<f64>, valid: &mut Raster<bool>, x: usize, y: usize, v: f64) {
    if v.is_finite() && v > 0.0 {
        *depth.get_mut(x, y) = v;
        *valid.get_mut(x, y) = true;
    }
}

/// Chooses the regularizer from the reference-depth gradient at the window
/// center: central differences (zero where a neighbor is missing or invalid),
/// normalized by the window's mean reference depth.
fn window_eps(d0: &DepthMap, cx: usize, cy: usize, mean_d0: f64, config: &ScaleCorrectionConfig) -> f64 {
    let diff = |xa: i64, ya: i64, xb: i64, yb: i64| -> f64 {
        if !d0.depth().in_bounds(xa, ya) || !d0.depth().in_bounds(xb, yb) {
            return 0.0;
        }
        match (
            d0.at(xa as usize, ya as usize),
            d0.at(xb as usize, yb as usize),
        ) {
            (Some(a), Some(b)) => 0.5 * (a - b),
            _ => 0.0,
        }
    };
    let (cx, cy) = (cx as i64, cy as i64);
    let gx = diff(cx + 1, cy, cx - 1, cy);
    let gy = diff(cx, cy + 1, cx, cy - 1);
    let grad = gx.hypot(gy);
    if mean_d0 > 0.0 && grad / mean_d0 >= config.tau_e {
        config.eps_edge
    } else {
        config.eps_smooth
    }
}

/// Fills windows that had too few valid cells with the coefficients of the
/// nearest valid window by center distance; ties keep the earlier window in
/// row-major grid order.
fn inherit_coefficients(
    xs: &[usize],
    ys: &[usize],
    win_x: usize,
    win_y: usize,
    coeff_a: &mut [f64],
    coeff_b: &mut [f64],
    coeff_ok: &[bool],
) -> Result<()> {
    if coeff_ok.iter().all(|ok| *ok) {
        return Ok(());
    }
    let gx = xs.len();
    let valid_list: Vec<usize> = (0..coeff_ok.len()).filter(|i| coeff_ok[*i]).collect();
    if valid_list.is_empty() {
        return Err(GbrError::Invalid(
            "no correction window has enough jointly valid pixels".into(),
        ));
    }
    let center = |idx: usize| -> (f64, f64) {
        let (kx, ky) = (idx % gx, idx / gx);
        (
            xs[kx] as f64 + (win_x - 1) as f64 / 2.0,
            ys[ky] as f64 + (win_y - 1) as f64 / 2.0,
        )
    };
    for idx in 0..coeff_ok.len() {
        if coeff_ok[idx] {
            continue;
        }
        let (px, py) = center(idx);
        let mut best = valid_list[0];
        let mut best_d2 = f64::INFINITY;
        for &v in &valid_list {
            let (vx, vy) = center(v);
            let d2 = (vx - px) * (vx - px) + (vy - py) * (vy - py);
            if d2 < best_d2 {
                best_d2 = d2;
                best = v;
            }
        }
        coeff_a[idx] = coeff_a[best];
        coeff_b[idx] = coeff_b[best];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> DepthMap {
        DepthMap::new(Raster::from_fn(w, h, |x, y| f(x, y)), Raster::filled(w, h, true)).unwrap()
    }

    fn masked_map(
        w: usize,
        h: usize,
        f: impl Fn(usize, usize) -> f64,
        m: impl Fn(usize, usize) -> bool,
    ) -> DepthMap {
        DepthMap::new(
            Raster::from_fn(w, h, |x, y| if m(x, y) { f(x, y) } else { 0.0 }),
            Raster::from_fn(w, h, &m),
        )
        .unwrap()
    }

    fn reference(x: usize, y: usize) -> f64 {
        2.0 + 0.01 * x as f64 + 0.02 * y as f64
            + 0.3 * (x as f64 / 7.0).sin() * (y as f64 / 5.0).cos()
    }

    fn max_rel_err(got: &DepthMap, want: impl Fn(usize, usize) -> f64) -> f64 {
        let mut worst = 0.0f64;
        for y in 0..got.height() {
            for x in 0..got.width() {
                if let Some(v) = got.at(x, y) {
                    let w = want(x, y);
                    worst = worst.max((v - w).abs() / w.abs());
                }
            }
        }
        worst
    }

    #[test]
    fn cancels_global_affine_drift() {
        let (w, h) = (64, 48);
        let d0 = map_from(w, h, reference);
        for (a, b) in [(0.5, 0.0), (0.5, 1.0), (2.0, 0.0), (2.0, 1.0)] {
            let d = map_from(w, h, |x, y| a * reference(x, y) + b);
            let out = scale_correct(&d, &d0, &ScaleCorrectionConfig::default()).unwrap();
            assert_eq!(out.valid_count(), w * h);
            let err = max_rel_err(&out, reference);
            assert!(err < 1e-4, "a={a} b={b}: relative error {err}");
        }
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let (w, h) = (40, 30);
        let d0 = map_from(w, h, reference);
        let out = scale_correct(&d0, &d0, &ScaleCorrectionConfig::default()).unwrap();
        let err = max_rel_err(&out, reference);
        assert!(err < 1e-6, "identity drifted by {err}");
    }

    #[test]
    fn constant_reference_returns_the_constant_exactly() {
        let (w, h) = (30, 20);
        for c in [2.5, 2.7] {
            let d0 = map_from(w, h, |_, _| c);
            let d = map_from(w, h, |x, y| 1.0 + 0.13 * ((x * 31 + y * 17) % 7) as f64);
            let cfg = ScaleCorrectionConfig {
                window: 9,
                ..ScaleCorrectionConfig::default()
            };
            let out = scale_correct(&d, &d0, &cfg).unwrap();
            assert_eq!(out.valid_count(), w * h);
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(out.at(x, y), Some(c), "pixel ({x},{y}) not exactly {c}");
                }
            }
        }
    }

    #[test]
    fn starved_windows_inherit_neighbor_coefficients() {
        let (w, h) = (64, 25);
        // Reference valid only on the left half; candidate valid everywhere
        // with one global affine drift, so inherited coefficients must keep
        // correcting the right half.
        let d0 = masked_map(w, h, reference, |x, _| x < 32);
        let d = map_from(w, h, |x, y| 3.0 * reference(x, y) - 0.5);
        let cfg = ScaleCorrectionConfig {
            window: 9,
            ..ScaleCorrectionConfig::default()
        };
        let out = scale_correct(&d, &d0, &cfg).unwrap();
        assert_eq!(out.valid_count(), w * h);
        let err = max_rel_err(&out, reference);
        assert!(err < 1e-4, "inherited correction error {err}");
    }

    #[test]
    fn idempotent_within_tolerance() {
        let (w, h) = (64, 48);
        let d0 = map_from(w, h, reference);
        let d = map_from(w, h, |x, y| 2.0 * reference(x, y) + 1.0);
        let cfg = ScaleCorrectionConfig::default();
        let once = scale_correct(&d, &d0, &cfg).unwrap();
        let twice = scale_correct(&once, &d0, &cfg).unwrap();
        let mut worst = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let a = once.at(x, y).unwrap();
                let b = twice.at(x, y).unwrap();
                worst = worst.max((a - b).abs() / a.abs());
            }
        }
        assert!(worst < 1e-6, "second pass moved output by {worst}");
    }

    #[test]
    fn rejects_bad_configs_and_dimensions() {
        let d = map_from(10, 10, |_, _| 2.0);
        for bad in [
            ScaleCorrectionConfig { window: 4, ..ScaleCorrectionConfig::default() },
            ScaleCorrectionConfig { window: 1, ..ScaleCorrectionConfig::default() },
            ScaleCorrectionConfig { stride: 0, ..ScaleCorrectionConfig::default() },
            ScaleCorrectionConfig { tau_e: 0.0, ..ScaleCorrectionConfig::default() },
            ScaleCorrectionConfig { eps_edge: -1.0, ..ScaleCorrectionConfig::default() },
        ] {
            let err = scale_correct(&d, &d, &bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "config {bad:?}");
        }
        let other = map_from(11, 10, |_, _| 2.0);
        let err = scale_correct(&d, &other, &ScaleCorrectionConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn needs_enough_jointly_valid_pixels() {
        let (w, h) = (12, 12);
        let d0 = masked_map(w, h, |_, _| 2.0, |x, y| x < 3 && y < 3);
        let d = map_from(w, h, |_, _| 2.0);
        let cfg = ScaleCorrectionConfig {
            window: 5,
            ..ScaleCorrectionConfig::default()
        };
        let err = scale_correct(&d, &d0, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("jointly valid"));
    }

    /// Straight nested-loop re-implementation: two-pass centered moments per
    /// window, linear scans for inheritance and covering averages.
    fn oracle(d: &DepthMap, d0: &DepthMap, cfg: &ScaleCorrectionConfig) -> Vec<Option<f64>> {
        let (w, h) = (d.width(), d.height());
        let win_x = cfg.window.min(w);
        let win_y = cfg.window.min(h);
        let xs = window_positions(w, win_x, cfg.stride);
        let ys = window_positions(h, win_y, cfg.stride);
        let mut wins: Vec<(f64, f64, bool, f64, f64)> = Vec::new(); // a, b, ok, cx, cy
        for &y0 in &ys {
            for &x0 in &xs {
                let mut cells = Vec::new();
                for y in y0..y0 + win_y {
                    for x in x0..x0 + win_x {
                        if let (Some(a), Some(b)) = (d.at(x, y), d0.at(x, y)) {
                            cells.push((a, b));
                        }
                    }
                }
                let cx = x0 as f64 + (win_x - 1) as f64 / 2.0;
                let cy = y0 as f64 + (win_y - 1) as f64 / 2.0;
                if cells.len() < 4 {
                    wins.push((0.0, 0.0, false, cx, cy));
                    continue;
                }
                let n = cells.len() as f64;
                let md: f64 = cells.iter().map(|c| c.0).sum::<f64>() / n;
                let md0: f64 = cells.iter().map(|c| c.1).sum::<f64>() / n;
                let var: f64 = cells.iter().map(|c| (c.0 - md) * (c.0 - md)).sum::<f64>() / n;
                let cov: f64 =
                    cells.iter().map(|c| (c.0 - md) * (c.1 - md0)).sum::<f64>() / n;
                let eps = window_eps(
                    d0,
                    x0 + (win_x - 1) / 2,
                    y0 + (win_y - 1) / 2,
                    md0,
                    cfg,
                );
                let den = var + eps / n;
                let a = if den > 0.0 { cov / den } else { 0.0 };
                wins.push((a, md0 - a * md, true, cx, cy));
            }
        }
        // Inheritance by nearest valid center, first wins on ties.
        let fixed: Vec<(f64, f64)> = wins
            .iter()
            .map(|&(a, b, ok, cx, cy)| {
                if ok {
                    return (a, b);
                }
                let mut best = (0.0, 0.0);
                let mut best_d2 = f64::INFINITY;
                for &(va, vb, vok, vx, vy) in &wins {
                    if vok {
                        let d2 = (vx - cx) * (vx - cx) + (vy - cy) * (vy - cy);
                        if d2 < best_d2 {
                            best_d2 = d2;
                            best = (va, vb);
                        }
                    }
                }
                best
            })
            .collect();
        let gx = xs.len();
        let mut out = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                let Some(dv) = d.at(x, y) else { continue };
                let (a, b) = if cfg.stride == 1 {
                    let mut sa = 0.0;
                    let mut sb = 0.0;
                    let mut cnt = 0.0;
                    for k in 0..wins.len() {
                        let (kx, ky) = (k % gx, k / gx);
                        let (x0, y0) = (xs[kx], ys[ky]);
                        if x >= x0 && x < x0 + win_x && y >= y0 && y < y0 + win_y {
                            sa += fixed[k].0;
                            sb += fixed[k].1;
                            cnt += 1.0;
                        }
                    }
                    (sa / cnt, sb / cnt)
                } else {
                    let cxs: Vec<f64> = wins.iter().take(gx).map(|w| w.3).collect();
                    let cys: Vec<f64> = wins.iter().step_by(gx).map(|w| w.4).collect();
                    let (kx0, kx1, tx) = bilin_axis(&cxs, x as f64);
                    let (ky0, ky1, ty) = bilin_axis(&cys, y as f64);
                    let g = |kx: usize, ky: usize| fixed[ky * gx + kx];
                    let a = (g(kx0, ky0).0 * (1.0 - tx) + g(kx1, ky0).0 * tx) * (1.0 - ty)
                        + (g(kx0, ky1).0 * (1.0 - tx) + g(kx1, ky1).0 * tx) * ty;
                    let b = (g(kx0, ky0).1 * (1.0 - tx) + g(kx1, ky0).1 * tx) * (1.0 - ty)
                        + (g(kx0, ky1).1 * (1.0 - tx) + g(kx1, ky1).1 * tx) * ty;
                    (a, b)
                };
                let v = a * dv + b;
                if v.is_finite() && v > 0.0 {
                    out[y * w + x] = Some(v);
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_reference() {
        let (w, h) = (23, 19);
        // Deterministic pseudo-random texture plus a hole in the reference
        // mask large enough to starve several windows.
        let noise = |x: usize, y: usize, salt: usize| {
            let v = (x * 7919 + y * 104_729 + salt * 15_485_863) % 1000;
            v as f64 / 1000.0
        };
        let d0 = masked_map(
            w,
            h,
            |x, y| 2.0 + 0.05 * x as f64 + 0.4 * noise(x, y, 1),
            |x, y| {
                let in_hole = (8..16).contains(&x) && (6..14).contains(&y);
                !in_hole && noise(x, y, 2) < 0.85
            },
        );
        let d = masked_map(
            w,
            h,
            |x, y| 1.5 + 0.04 * x as f64 + 0.3 * noise(x, y, 1) + 0.05 * noise(x, y, 3),
            |x, y| noise(x, y, 4) < 0.9,
        );
        for stride in [1usize, 3] {
            let cfg = ScaleCorrectionConfig {
                window: 7,
                stride,
                ..ScaleCorrectionConfig::default()
            };
            let got = scale_correct(&d, &d0, &cfg).unwrap();
            let want = oracle(&d, &d0, &cfg);
            for y in 0..h {
                for x in 0..w {
                    match (got.at(x, y), want[y * w + x]) {
                        (None, None) => {}
                        (Some(a), Some(b)) => {
                            let rel = (a - b).abs() / (b.abs() + 1.0);
                            assert!(rel < 1e-9, "stride {stride} pixel ({x},{y}): {a} vs {b}");
                        }
                        (a, b) => panic!("stride {stride} pixel ({x},{y}): {a:?} vs {b:?}"),
                    }
                }
            }
        }
    }
}
