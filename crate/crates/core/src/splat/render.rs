//! Software rasterizer for Gaussian primitives.
//!
//! Primitives are projected, sorted front to back by center depth (ties
//! broken by full primitive content so storage order can never matter), and
//! alpha-blended per pixel with early termination once transmittance falls
//! below a cutoff. Color, normal, plane distance, plane-intersection depth
//! and accumulated opacity are produced in one pass.

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GbrError, Result};
use crate::geometry::{
    CameraIntrinsics, CameraPose, DepthMap, GaussianPrimitive, NormalMap, Raster, RgbImage,
};
use crate::splat::project::project_gaussian;

/// A set of Gaussian primitives plus the background they blend over.
#[derive(Clone, Debug)]
pub struct SplatScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub background: [f64; 3],
}

impl SplatScene {
    pub fn new(primitives: Vec<GaussianPrimitive>, background: [f64; 3]) -> Result<SplatScene> {
        if background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(GbrError::Invalid(format!(
                "background color must be in [0,1], got {background:?}"
            )));
        }
        Ok(SplatScene {
            primitives,
            background,
        })
    }
}

/// Options for [`render`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Isotropic floor added to every projected covariance, in px².
    pub cov_floor_px2: f64,
    /// Front-to-back blending stops once transmittance drops below this.
    pub transmittance_cutoff: f64,
    /// Footprint extent in standard deviations of the projected Gaussian.
    pub footprint_sigmas: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            cov_floor_px2: 0.3,
            transmittance_cutoff: 1e-4,
            footprint_sigmas: 3.5,
        }
    }
}

/// All channels produced by one render pass.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: RgbImage,
    /// Blended, renormalized camera-frame normals; valid where alpha > 0.5.
    pub normal: NormalMap,
    /// Blended signed plane distance Σ w_i·d_i (Eq. 7 accumulator).
    pub distance: Raster<f64>,
    /// Per-pixel plane-intersection depth; valid where alpha > 0.5.
    pub depth: DepthMap,
    /// Accumulated opacity 1 − Π(1−α_i) ∈ [0, 1].
    pub alpha: Raster<f64>,
}

/// One projected primitive prepared for blending.
struct Item {
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    /// Camera-frame plane normal, flipped toward the camera.
    normal: Vector3<f64>,
    /// Signed plane distance d = μ_cam · n_cam.
    dist: f64,
    color: [f64; 3],
    opacity: f64,
    x0: usize,
    x1: usize, // inclusive
    y0: usize,
    y1: usize, // inclusive
}

/// Renders the scene into the view given by `intrinsics` and `pose`.
///
/// Per pixel the plane-intersection depth is 𝒟 / (N · K⁻¹p̃) evaluated on the
/// *unnormalized* accumulators, so the blend weight cancels: a single planar
/// primitive yields exactly its ray-plane intersection depth. (This equals
/// renormalizing N first and rescaling 𝒟 by the same norm.) Depth and normal
/// are marked valid only where the accumulated alpha exceeds 0.5.
pub fn render(
    scene: &SplatScene,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    if scene.primitives.is_empty() {
        return Err(GbrError::Empty("cannot render an empty splat scene".into()));
    }
    if !(config.cov_floor_px2 > 0.0 && config.cov_floor_px2.is_finite()) {
        return Err(GbrError::Config(format!(
            "covariance floor must be positive, got {}",
            config.cov_floor_px2
        )));
    }
    if !(config.transmittance_cutoff >= 0.0 && config.transmittance_cutoff < 1.0) {
        return Err(GbrError::Config(format!(
            "transmittance cutoff must be in [0,1), got {}",
            config.transmittance_cutoff
        )));
    }
    if !(config.footprint_sigmas > 0.0) {
        return Err(GbrError::Config(format!(
            "footprint extent must be positive, got {}",
            config.footprint_sigmas
        )));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);

    // Project and cull; sorting canonicalizes storage order (depth, then full
    // content) so permuting `scene.primitives` cannot change any output bit.
    let mut order: Vec<usize> = (0..scene.primitives.len()).collect();
    let projected: Vec<Option<_>> = scene
        .primitives
        .iter()
        .map(|g| project_gaussian(g, intrinsics, pose, config.cov_floor_px2))
        .collect();
    order.retain(|&i| projected[i].is_some());
    order.sort_by(|&i, &j| {
        let (pi, pj) = (projected[i].as_ref().unwrap(), projected[j].as_ref().unwrap());
        pi.depth
            .total_cmp(&pj.depth)
            .then_with(|| content_key(&scene.primitives[i], &scene.primitives[j]))
    });

    let mut items: Vec<Item> = Vec::with_capacity(order.len());
    for &i in &order {
        let g = &scene.primitives[i];
        let p = projected[i].as_ref().unwrap();
        let det = p.cov[(0, 0)] * p.cov[(1, 1)] - p.cov[(0, 1)] * p.cov[(1, 0)];
        debug_assert!(det > 0.0, "regularized covariance must be invertible");
        let inv_cov = Matrix2::new(p.cov[(1, 1)], -p.cov[(0, 1)], -p.cov[(1, 0)], p.cov[(0, 0)])
            / det;
        // Largest eigenvalue of the 2×2 covariance bounds the footprint.
        let mid = 0.5 * (p.cov[(0, 0)] + p.cov[(1, 1)]);
        let disc = (0.5 * (p.cov[(0, 0)] - p.cov[(1, 1)])).hypot(p.cov[(0, 1)]);
        let radius = config.footprint_sigmas * (mid + disc).max(0.0).sqrt();
        let x0 = (p.mean.x - radius).floor().max(0.0);
        let x1 = (p.mean.x + radius).ceil().min(w as f64 - 1.0);
        let y0 = (p.mean.y - radius).floor().max(0.0);
        let y1 = (p.mean.y + radius).ceil().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let cam = pose.to_camera(&g.position);
        let mut normal = pose.rotate_to_camera(&g.min_scale_axis());
        if normal.dot(&cam) > 0.0 {
            normal = -normal;
        }
        items.push(Item {
            mean: p.mean,
            inv_cov,
            normal,
            dist: cam.dot(&normal),
            color: g.color(),
            opacity: g.opacity(),
            x0: x0 as usize,
            x1: x1 as usize,
            y0: y0 as usize,
            y1: y1 as usize,
        });
    }

    // Bucket the (already sorted) items by the rows they touch.
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (k, item) in items.iter().enumerate() {
        for row in rows.iter_mut().take(item.y1 + 1).skip(item.y0) {
            row.push(k as u32);
        }
    }

    struct Pixel {
        color: [f64; 3],
        n_acc: Vector3<f64>,
        dist_acc: f64,
        transmittance: f64,
    }

    let rendered: Vec<Vec<Pixel>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row_out = Vec::with_capacity(w);
            for x in 0..w {
                let px = Vector2::new(x as f64, y as f64);
                let mut color = [0.0f64; 3];
                let mut n_acc = Vector3::zeros();
                let mut dist_acc = 0.0f64;
                let mut t = 1.0f64;
                for &k in &rows[y] {
                    let item = &items[k as usize];
                    if x < item.x0 || x > item.x1 {
                        continue;
                    }
                    let delta = px - item.mean;
                    let q = delta.dot(&(item.inv_cov * delta));
                    let alpha = item.opacity * (-0.5 * q).exp();
                    let weight = alpha * t;
                    for c in 0..3 {
                        color[c] += weight * item.color[c];
                    }
                    n_acc += weight * item.normal;
                    dist_acc += weight * item.dist;
                    t *= 1.0 - alpha;
                    if t < config.transmittance_cutoff {
                        break;
                    }
                }
                row_out.push(Pixel {
                    color,
                    n_acc,
                    dist_acc,
                    transmittance: t,
                });
            }
            row_out
        })
        .collect();

    let mut color = Raster::filled(w, h, [0.0f64; 3]);
    let mut normals = Raster::filled(w, h, Vector3::zeros());
    let mut normal_valid = Raster::filled(w, h, false);
    let mut distance = Raster::filled(w, h, 0.0f64);
    let mut depth = Raster::filled(w, h, 0.0f64);
    let mut depth_valid = Raster::filled(w, h, false);
    let mut alpha = Raster::filled(w, h, 0.0f64);

    for (y, row) in rendered.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            let t = px.transmittance;
            let mut c = px.color;
            for ch in 0..3 {
                c[ch] += t * scene.background[ch];
            }
            *color.get_mut(x, y) = c;
            *distance.get_mut(x, y) = px.dist_acc;
            let a = 1.0 - t;
            *alpha.get_mut(x, y) = a;
            if a > 0.5 {
                let norm = px.n_acc.norm();
                if norm > 1e-12 {
                    *normals.get_mut(x, y) = px.n_acc / norm;
                    *normal_valid.get_mut(x, y) = true;
                }
                let ray = intrinsics.back_ray(Vector2::new(x as f64, y as f64));
                let denom = px.n_acc.dot(&ray);
                if denom.abs() > 1e-12 {
                    let d = px.dist_acc / denom;
                    if d.is_finite() && d > 0.0 {
                        *depth.get_mut(x, y) = d;
                        *depth_valid.get_mut(x, y) = true;
                    }
                }
            }
        }
    }

    Ok(RenderOutput {
        color,
        normal: NormalMap::new(normals, normal_valid)?,
        distance,
        depth: DepthMap::new(depth, depth_valid)?,
        alpha,
    })
}

/// Total order on primitive content; used to break depth ties so that any
/// storage permutation of the scene renders bit-identically.
fn content_key(a: &GaussianPrimitive, b: &GaussianPrimitive) -> std::cmp::Ordering {
    let fields = |g: &GaussianPrimitive| {
        let q = g.rotation.quaternion();
        let s = g.scale();
        let c = g.color();
        [
            g.position.x,
            g.position.y,
            g.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
            s.x,
            s.y,
            s.z,
            g.opacity(),
            c[0],
            c[1],
            c[2],
        ]
    };
    let (fa, fb) = (fields(a), fields(b));
    for (x, y) in fa.iter().zip(fb.iter()) {
        let ord = x.total_cmp(y);
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    std::cmp::Ordering::Equal
}
