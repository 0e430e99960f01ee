//! Truncated signed-distance volume and per-view depth integration.
//!
//! The volume samples a regular lattice: sample `(i, j, k)` sits at
//! `origin + (i, j, k) * voxel_size` in world coordinates. Each sample keeps
//! a truncated signed distance normalized to `[-1, 1]` (positive in front of
//! the surface, toward the camera) and a non-negative observation weight;
//! weight zero means the sample has never been observed.
//!
//! Storage is lazy: samples live in 8x8x8 bricks allocated on first write,
//! so large mostly-empty volumes only pay for the shell around the surface.
//! Integration parallelizes over bricks (each brick is touched by exactly
//! one worker), which keeps results bit-identical across thread counts.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{GbrError, Result};
use crate::geometry::{project_camera_point, CameraIntrinsics, CameraPose, DepthMap, Raster};

/// Bricks are cubes of `BRICK^3` samples.
const BRICK: usize = 8;

/// Default truncation band: five voxels on either side of the surface.
pub fn default_truncation(voxel_size: f64) -> f64 {
    5.0 * voxel_size
}

/// Default voxel size: scene bounding-box diagonal / 256.
pub fn default_voxel_size(bounds_min: &Vector3<f64>, bounds_max: &Vector3<f64>) -> f64 {
    (bounds_max - bounds_min).norm() / 256.0
}

/// Axis-aligned bounds of a point set, `None` when empty or non-finite.
pub fn point_bounds(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    (min.iter().all(|v| v.is_finite()) && max.iter().all(|v| v.is_finite())).then_some((min, max))
}

#[derive(Clone)]
struct Brick {
    tsdf: Vec<f64>,
    weight: Vec<f64>,
}

impl Brick {
    fn new() -> Brick {
        Brick {
            tsdf: vec![1.0; BRICK * BRICK * BRICK],
            weight: vec![0.0; BRICK * BRICK * BRICK],
        }
    }

    fn idx(lx: usize, ly: usize, lz: usize) -> usize {
        (lz * BRICK + ly) * BRICK + lx
    }
}

/// Truncated signed-distance volume over a regular lattice.
#[derive(Clone)]
pub struct TsdfVolume {
    origin: Vector3<f64>,
    voxel_size: f64,
    dims: [usize; 3],
    /// Brick grid dimensions (ceil of dims / BRICK).
    brick_dims: [usize; 3],
    /// Lazily allocated bricks, row-major over (bz, by, bx).
    bricks: Vec<Option<Box<Brick>>>,
}

impl TsdfVolume {
    /// Volume with `dims` lattice samples per axis starting at `origin`.
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3]) -> Result<TsdfVolume> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(GbrError::Config(format!(
                "voxel size must be positive and finite, got {voxel_size}"
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(GbrError::Config("volume origin must be finite".into()));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(GbrError::Config(format!(
                "volume needs at least 2 samples per axis, got {dims:?}"
            )));
        }
        let brick_dims = [
            dims[0].div_ceil(BRICK),
            dims[1].div_ceil(BRICK),
            dims[2].div_ceil(BRICK),
        ];
        let bricks = vec![None; brick_dims[0] * brick_dims[1] * brick_dims[2]];
        Ok(TsdfVolume {
            origin,
            voxel_size,
            dims,
            brick_dims,
            bricks,
        })
    }

    /// Volume covering `[min, max]` (inclusive) at the given voxel size.
    pub fn from_bounds(
        min: Vector3<f64>,
        max: Vector3<f64>,
        voxel_size: f64,
    ) -> Result<TsdfVolume> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(GbrError::Config(format!(
                "voxel size must be positive and finite, got {voxel_size}"
            )));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            if !(max[a] > min[a]) {
                return Err(GbrError::Config(format!(
                    "volume bounds must satisfy min < max per axis, got {min:?}..{max:?}"
                )));
            }
            dims[a] = ((max[a] - min[a]) / voxel_size).ceil() as usize + 1;
        }
        TsdfVolume::new(min, voxel_size, dims)
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// World position of lattice sample `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                i as f64 * self.voxel_size,
                j as f64 * self.voxel_size,
                k as f64 * self.voxel_size,
            )
    }

    fn split(&self, i: usize, j: usize, k: usize) -> (usize, usize) {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        let brick = ((k / BRICK) * self.brick_dims[1] + j / BRICK) * self.brick_dims[0] + i / BRICK;
        (brick, Brick::idx(i % BRICK, j % BRICK, k % BRICK))
    }

    /// Normalized truncated signed distance at a sample (1.0 where unobserved).
    pub fn tsdf(&self, i: usize, j: usize, k: usize) -> f64 {
        let (b, l) = self.split(i, j, k);
        self.bricks[b].as_ref().map_or(1.0, |br| br.tsdf[l])
    }

    /// Observation weight at a sample (0 where unobserved).
    pub fn weight(&self, i: usize, j: usize, k: usize) -> f64 {
        let (b, l) = self.split(i, j, k);
        self.bricks[b].as_ref().map_or(0.0, |br| br.weight[l])
    }

    /// Overwrite one sample; used to author analytic volumes.
    pub fn set_sample(&mut self, i: usize, j: usize, k: usize, tsdf: f64, weight: f64) {
        assert!(
            (-1.0..=1.0).contains(&tsdf) && weight >= 0.0,
            "tsdf must lie in [-1, 1] and weight must be non-negative"
        );
        let (b, l) = self.split(i, j, k);
        let brick = self.bricks[b].get_or_insert_with(|| Box::new(Brick::new()));
        brick.tsdf[l] = tsdf;
        brick.weight[l] = weight;
    }

    /// Number of samples with weight > 0.
    pub fn observed_count(&self) -> usize {
        let mut n = 0;
        self.for_each_observed(|_, _, _| n += 1);
        n
    }

    /// Visit every observed sample as `(index, tsdf, weight)` in lattice order.
    pub fn for_each_observed(&self, mut f: impl FnMut([usize; 3], f64, f64)) {
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let (b, l) = self.split(i, j, k);
                    if let Some(br) = self.bricks[b].as_ref() {
                        if br.weight[l] > 0.0 {
                            f([i, j, k], br.tsdf[l], br.weight[l]);
                        }
                    }
                }
            }
        }
    }

    /// Largest absolute tsdf/weight discrepancy against `other`.
    pub fn max_abs_difference(&self, other: &TsdfVolume) -> Result<f64> {
        if self.dims != other.dims {
            return Err(GbrError::Dimension(format!(
                "volume dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let mut worst = 0.0f64;
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    worst = worst
                        .max((self.tsdf(i, j, k) - other.tsdf(i, j, k)).abs())
                        .max((self.weight(i, j, k) - other.weight(i, j, k)).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Fuse one depth map into the volume.
///
/// Every voxel center is projected into the view with `intrinsics` and
/// `pose`; where it lands on a valid (and non-sky) pixel the signed distance
/// `depth(pixel) - voxel camera-z` is clamped to the truncation band,
/// normalized to `[-1, 1]`, and folded into the running per-voxel average
/// with observation weight 1. Voxels more than `truncation` behind the
/// observed surface are left untouched, so occluded space stays unobserved.
pub fn integrate(
    volume: &mut TsdfVolume,
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    sky: Option<&Raster<bool>>,
    truncation: f64,
) -> Result<()> {
    if !(truncation >= 2.0 * volume.voxel_size && truncation.is_finite()) {
        return Err(GbrError::Config(format!(
            "truncation {truncation} must be at least two voxels ({})",
            2.0 * volume.voxel_size
        )));
    }
    if depth.width() != intrinsics.width || depth.height() != intrinsics.height {
        return Err(GbrError::Dimension(format!(
            "depth {}x{} vs intrinsics {}x{}",
            depth.width(),
            depth.height(),
            intrinsics.width,
            intrinsics.height
        )));
    }
    if let Some(mask) = sky {
        if mask.width() != depth.width() || mask.height() != depth.height() {
            return Err(GbrError::Dimension(format!(
                "sky mask {}x{} vs depth {}x{}",
                mask.width(),
                mask.height(),
                depth.width(),
                depth.height()
            )));
        }
    }

    let dims = volume.dims;
    let brick_dims = volume.brick_dims;
    let origin = volume.origin;
    let voxel = volume.voxel_size;

    volume
        .bricks
        .par_iter_mut()
        .enumerate()
        .for_each(|(flat, slot)| {
            let bi = flat % brick_dims[0];
            let bj = (flat / brick_dims[0]) % brick_dims[1];
            let bk = flat / (brick_dims[0] * brick_dims[1]);
            let i0 = bi * BRICK;
            let j0 = bj * BRICK;
            let k0 = bk * BRICK;
            for lk in 0..BRICK.min(dims[2] - k0) {
                for lj in 0..BRICK.min(dims[1] - j0) {
                    for li in 0..BRICK.min(dims[0] - i0) {
                        let world = origin
                            + Vector3::new(
                                (i0 + li) as f64 * voxel,
                                (j0 + lj) as f64 * voxel,
                                (k0 + lk) as f64 * voxel,
                            );
                        let cam = pose.to_camera(&world);
                        let Some(pixel) = project_camera_point(&cam, intrinsics) else {
                            continue;
                        };
                        let u = pixel.x.round();
                        let v = pixel.y.round();
                        if u < 0.0
                            || v < 0.0
                            || u >= intrinsics.width as f64
                            || v >= intrinsics.height as f64
                        {
                            continue;
                        }
                        let (px, py) = (u as usize, v as usize);
                        if sky.is_some_and(|m| *m.get(px, py)) {
                            continue;
                        }
                        let Some(observed) = depth.at(px, py) else {
                            continue;
                        };
                        let sd = observed - cam.z;
                        if sd < -truncation {
                            continue;
                        }
                        let value = sd.min(truncation) / truncation;
                        let brick = slot.get_or_insert_with(|| Box::new(Brick::new()));
                        let l = Brick::idx(li, lj, lk);
                        let w = brick.weight[l];
                        brick.tsdf[l] = (brick.tsdf[l] * w + value) / (w + 1.0);
                        brick.weight[l] = w + 1.0;
                    }
                }
            }
        });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    const W: usize = 32;
    const H: usize = 24;
    const F: f64 = 40.0;

    fn camera() -> (CameraIntrinsics, CameraPose) {
        (
            CameraIntrinsics::centered(F, W, H).unwrap(),
            CameraPose::identity(),
        )
    }

    fn constant_depth(d: f64) -> DepthMap {
        DepthMap::new(Raster::filled(W, H, d), Raster::filled(W, H, true)).unwrap()
    }

    #[test]
    fn fronto_plane_crosses_zero_at_the_plane_depth() {
        let (intr, pose) = camera();
        let depth = constant_depth(2.0);
        let voxel = 0.05;
        let trunc = default_truncation(voxel);
        let mut vol =
            TsdfVolume::from_bounds(Vector3::new(-0.3, -0.2, 1.4), Vector3::new(0.3, 0.2, 2.6), voxel)
                .unwrap();
        integrate(&mut vol, &depth, &intr, &pose, None, trunc).unwrap();

        let dims = vol.dims();
        let mut crossings = 0;
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                for k in 0..dims[2] - 1 {
                    let (w0, w1) = (vol.weight(i, j, k), vol.weight(i, j, k + 1));
                    if w0 == 0.0 || w1 == 0.0 {
                        continue;
                    }
                    let (t0, t1) = (vol.tsdf(i, j, k), vol.tsdf(i, j, k + 1));
                    if !(t0 > 0.0 && t1 <= 0.0) {
                        continue;
                    }
                    crossings += 1;
                    // Linear interpolation along the view axis recovers the
                    // plane depth; the sample straddle is at most half a
                    // voxel on either side.
                    let z0 = vol.voxel_center(i, j, k).z;
                    let z_star = z0 + voxel * t0 / (t0 - t1);
                    assert!((z_star - 2.0).abs() < 1e-9, "crossing at {z_star}");
                    assert!((z0 + voxel / 2.0 - 2.0).abs() <= voxel / 2.0 + 1e-12);
                }
            }
        }
        assert!(crossings > 100, "only {crossings} zero crossings found");

        // Far behind the plane nothing was touched; in front the band is
        // clamped free space.
        let behind = vol.voxel_center(0, 0, 0).z + (dims[2] - 1) as f64 * voxel;
        assert!(behind > 2.0 + trunc);
        let mid_i = dims[0] / 2;
        let mid_j = dims[1] / 2;
        assert_eq!(vol.weight(mid_i, mid_j, dims[2] - 1), 0.0);
        assert_eq!(vol.tsdf(mid_i, mid_j, 0), 1.0);
        assert_eq!(vol.weight(mid_i, mid_j, 0), 1.0);
    }

    #[test]
    fn integrating_twice_doubles_weights_only() {
        let (intr, pose) = camera();
        let depth = constant_depth(1.8);
        let voxel = 0.05;
        let mut once = TsdfVolume::from_bounds(
            Vector3::new(-0.2, -0.2, 1.5),
            Vector3::new(0.2, 0.2, 2.1),
            voxel,
        )
        .unwrap();
        integrate(&mut once, &depth, &intr, &pose, None, default_truncation(voxel)).unwrap();
        let mut twice = once.clone();
        integrate(&mut twice, &depth, &intr, &pose, None, default_truncation(voxel)).unwrap();

        let dims = once.dims();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    assert_eq!(once.tsdf(i, j, k), twice.tsdf(i, j, k));
                    assert_eq!(once.weight(i, j, k) * 2.0, twice.weight(i, j, k));
                }
            }
        }
        assert!(twice.observed_count() > 0);
    }

    #[test]
    fn all_invalid_depths_change_nothing() {
        let (intr, pose) = camera();
        let depth = DepthMap::all_invalid(W, H);
        let mut vol = TsdfVolume::from_bounds(
            Vector3::new(-0.2, -0.2, 1.5),
            Vector3::new(0.2, 0.2, 2.1),
            0.05,
        )
        .unwrap();
        integrate(&mut vol, &depth, &intr, &pose, None, 0.25).unwrap();
        assert_eq!(vol.observed_count(), 0);
    }

    #[test]
    fn sky_pixels_are_skipped() {
        let (intr, pose) = camera();
        let depth = constant_depth(2.0);
        let sky = Raster::from_fn(W, H, |x, _| x < W / 2);
        let voxel = 0.05;
        let mut masked = TsdfVolume::from_bounds(
            Vector3::new(-0.4, -0.2, 1.6),
            Vector3::new(0.4, 0.2, 2.4),
            voxel,
        )
        .unwrap();
        let mut plain = masked.clone();
        integrate(&mut masked, &depth, &intr, &pose, Some(&sky), default_truncation(voxel)).unwrap();
        integrate(&mut plain, &depth, &intr, &pose, None, default_truncation(voxel)).unwrap();

        assert!(masked.observed_count() > 0);
        assert!(masked.observed_count() < plain.observed_count());
        let dims = masked.dims();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let world = masked.voxel_center(i, j, k);
                    let cam = pose.to_camera(&world);
                    let Some(pixel) = project_camera_point(&cam, &intr) else {
                        continue;
                    };
                    let u = pixel.x.round();
                    if (0.0..(W / 2) as f64).contains(&u) {
                        assert_eq!(masked.weight(i, j, k), 0.0, "sky voxel observed");
                    } else {
                        assert_eq!(masked.weight(i, j, k), plain.weight(i, j, k));
                        assert_eq!(masked.tsdf(i, j, k), plain.tsdf(i, j, k));
                    }
                }
            }
        }
    }

    #[test]
    fn integration_order_does_not_matter() {
        let intr = CameraIntrinsics::centered(F, W, H).unwrap();
        let poses: Vec<CameraPose> = (0..3)
            .map(|v| {
                let angle = 0.15 * v as f64;
                let c = angle.cos();
                let s = angle.sin();
                let rot = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
                let center = Vector3::new(0.4 * v as f64 - 0.4, 0.0, -0.2 * v as f64);
                CameraPose::new(rot, -(rot * center)).unwrap()
            })
            .collect();
        let depths: Vec<DepthMap> = (0..3)
            .map(|v| constant_depth(1.9 + 0.2 * v as f64))
            .collect();

        let fresh = || {
            TsdfVolume::from_bounds(
                Vector3::new(-0.6, -0.3, 1.4),
                Vector3::new(0.6, 0.3, 2.6),
                0.05,
            )
            .unwrap()
        };
        let mut forward = fresh();
        for v in 0..3 {
            integrate(&mut forward, &depths[v], &intr, &poses[v], None, 0.25).unwrap();
        }
        let mut backward = fresh();
        for v in (0..3).rev() {
            integrate(&mut backward, &depths[v], &intr, &poses[v], None, 0.25).unwrap();
        }
        assert!(forward.max_abs_difference(&backward).unwrap() < 1e-12);
        assert!(forward.observed_count() > 0);
    }

    #[test]
    fn rejects_bad_configuration() {
        let (intr, pose) = camera();
        let depth = constant_depth(2.0);
        let mut vol = TsdfVolume::from_bounds(
            Vector3::new(-0.2, -0.2, 1.5),
            Vector3::new(0.2, 0.2, 2.1),
            0.05,
        )
        .unwrap();

        // Truncation below two voxels.
        let err = integrate(&mut vol, &depth, &intr, &pose, None, 0.05).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        // Depth/intrinsics mismatch.
        let small =
            DepthMap::new(Raster::filled(W - 1, H, 2.0), Raster::filled(W - 1, H, true)).unwrap();
        let err = integrate(&mut vol, &small, &intr, &pose, None, 0.25).unwrap_err();
        assert_eq!(err.exit_code(), 3);

        // Sky mask mismatch.
        let sky = Raster::filled(W, H - 1, false);
        let err = integrate(&mut vol, &depth, &intr, &pose, Some(&sky), 0.25).unwrap_err();
        assert_eq!(err.exit_code(), 3);

        // Unusable volume shapes.
        assert!(TsdfVolume::new(Vector3::zeros(), 0.0, [4, 4, 4]).is_err());
        assert!(TsdfVolume::new(Vector3::zeros(), 0.1, [1, 4, 4]).is_err());
        assert!(
            TsdfVolume::from_bounds(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0), 0.1).is_err()
        );
    }

    #[test]
    fn bounds_and_defaults_cover_the_scene() {
        let pts = [
            Vector3::new(-1.0, 0.5, 2.0),
            Vector3::new(1.0, -0.5, 3.0),
            Vector3::new(0.0, 0.0, 2.5),
        ];
        let (min, max) = point_bounds(&pts).unwrap();
        assert_eq!(min, Vector3::new(-1.0, -0.5, 2.0));
        assert_eq!(max, Vector3::new(1.0, 0.5, 3.0));
        let diag = (max - min).norm();
        assert!((default_voxel_size(&min, &max) - diag / 256.0).abs() < 1e-15);
        assert_eq!(default_truncation(0.02), 0.1);
        assert!(point_bounds(&[]).is_none());

        let vol = TsdfVolume::from_bounds(min, max, 0.25).unwrap();
        let d = vol.dims();
        // Last sample reaches or passes max along each axis.
        for a in 0..3 {
            assert!(min[a] + (d[a] - 1) as f64 * 0.25 >= max[a] - 1e-12);
        }
    }
}
