use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{GbrError, Result};
use crate::geometry::raster::Raster;

/// RGB image with channel values in [0, 1].
pub type RgbImage = Raster<[f64; 3]>;

/// Coordinate frame a point map is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceFrame {
    /// Camera frame of the given view index.
    View(usize),
    /// The pipeline's unified (world) frame.
    Unified,
}

/// Per-view raster of 3D points with confidence, the unit of ingestion.
#[derive(Clone, Debug)]
pub struct PointMapFrame {
    points: Raster<Vector3<f64>>,
    confidence: Raster<f64>,
    pub frame_id: usize,
    pub reference_frame: ReferenceFrame,
}

impl PointMapFrame {
    /// Confidence is clamped at zero and forced to zero on non-finite points.
    pub fn new(
        points: Raster<Vector3<f64>>,
        confidence: Raster<f64>,
        frame_id: usize,
        reference_frame: ReferenceFrame,
    ) -> Result<Self> {
        if !points.same_dims(&confidence) {
            return Err(GbrError::Dimension(format!(
                "point map {}x{} vs confidence {}x{}",
                points.width(),
                points.height(),
                confidence.width(),
                confidence.height()
            )));
        }
        let mut confidence = confidence;
        for (p, c) in points.data().iter().zip(confidence.data_mut().iter_mut()) {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                *c = 0.0;
            } else if *c < 0.0 {
                *c = 0.0;
            }
        }
        Ok(PointMapFrame {
            points,
            confidence,
            frame_id,
            reference_frame,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.points.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.points.height()
    }

    #[inline]
    pub fn points(&self) -> &Raster<Vector3<f64>> {
        &self.points
    }

    #[inline]
    pub fn confidence(&self) -> &Raster<f64> {
        &self.confidence
    }

    /// Cells with confidence strictly above `min_conf`, as (x, y, point, conf).
    pub fn confident_cells(
        &self,
        min_conf: f64,
    ) -> impl Iterator<Item = (usize, usize, Vector3<f64>, f64)> + '_ {
        self.points
            .iter_cells()
            .zip(self.confidence.data().iter())
            .filter(move |(_, &c)| c > min_conf)
            .map(|((x, y, p), &c)| (x, y, *p, c))
    }

    /// Same raster with every point mapped through `f` and a new frame tag.
    pub fn mapped(
        &self,
        reference_frame: ReferenceFrame,
        f: impl Fn(&Vector3<f64>) -> Vector3<f64>,
    ) -> PointMapFrame {
        PointMapFrame {
            points: self.points.map(|p| f(p)),
            confidence: self.confidence.clone(),
            frame_id: self.frame_id,
            reference_frame,
        }
    }
}

/// Per-view raster of camera-frame z-depths with an explicit validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    depth: Raster<f64>,
    valid: Raster<bool>,
}

impl DepthMap {
    /// Depth must be strictly positive and finite wherever valid.
    pub fn new(depth: Raster<f64>, valid: Raster<bool>) -> Result<Self> {
        if !depth.same_dims(&valid) {
            return Err(GbrError::Dimension(
                "depth and validity mask dimensions differ".into(),
            ));
        }
        for (d, v) in depth.data().iter().zip(valid.data().iter()) {
            if *v && !(d.is_finite() && *d > 0.0) {
                return Err(GbrError::Invalid(format!(
                    "depth map marks non-positive depth {d} as valid"
                )));
            }
        }
        Ok(DepthMap { depth, valid })
    }

    pub fn all_invalid(width: usize, height: usize) -> Self {
        DepthMap {
            depth: Raster::filled(width, height, 0.0),
            valid: Raster::filled(width, height, false),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.depth.height()
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        *self.valid.get(x, y)
    }

    /// Depth at a valid cell; `None` when masked out.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        if *self.valid.get(x, y) {
            Some(*self.depth.get(x, y))
        } else {
            None
        }
    }

    #[inline]
    pub fn depth(&self) -> &Raster<f64> {
        &self.depth
    }

    #[inline]
    pub fn valid(&self) -> &Raster<bool> {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }

    /// Mean depth over valid cells.
    pub fn mean_valid(&self) -> Option<f64> {
        self.depth.mean_where(&self.valid)
    }

    /// Bilinear depth lookup. `None` if any of the four surrounding cells is
    /// invalid or the query lies outside the raster.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width() - 1) as f64 && y <= (self.height() - 1) as f64)
        {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width() - 1);
        let y1 = (y0 + 1).min(self.height() - 1);
        for (cx, cy) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
            if !self.is_valid(cx, cy) {
                return None;
            }
        }
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let d00 = *self.depth.get(x0, y0);
        let d10 = *self.depth.get(x1, y0);
        let d01 = *self.depth.get(x0, y1);
        let d11 = *self.depth.get(x1, y1);
        Some(d00 * (1.0 - fx) * (1.0 - fy) + d10 * fx * (1.0 - fy) + d01 * (1.0 - fx) * fy + d11 * fx * fy)
    }
}

/// Per-view raster of unit normals with validity mask. Normals are expressed
/// in the view's camera frame and oriented toward the camera.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    normals: Raster<Vector3<f64>>,
    valid: Raster<bool>,
}

impl NormalMap {
    pub fn new(normals: Raster<Vector3<f64>>, valid: Raster<bool>) -> Result<Self> {
        if !normals.same_dims(&valid) {
            return Err(GbrError::Dimension(
                "normal map and validity mask dimensions differ".into(),
            ));
        }
        for (n, v) in normals.data().iter().zip(valid.data().iter()) {
            if *v && (n.norm() - 1.0).abs() > 1e-6 {
                return Err(GbrError::Invalid(format!(
                    "normal map marks non-unit vector (norm {}) as valid",
                    n.norm()
                )));
            }
        }
        Ok(NormalMap { normals, valid })
    }

    pub fn all_invalid(width: usize, height: usize) -> Self {
        NormalMap {
            normals: Raster::filled(width, height, Vector3::zeros()),
            valid: Raster::filled(width, height, false),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.normals.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.normals.height()
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        *self.valid.get(x, y)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        if *self.valid.get(x, y) {
            Some(*self.normals.get(x, y))
        } else {
            None
        }
    }

    #[inline]
    pub fn normals(&self) -> &Raster<Vector3<f64>> {
        &self.normals
    }

    #[inline]
    pub fn valid(&self) -> &Raster<bool> {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }
}

/// One anisotropic Gaussian primitive: the rendering unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    scale: Vector3<f64>,
    opacity: f64,
    color: [f64; 3],
}

impl GaussianPrimitive {
    pub fn new(
        position: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        color: [f64; 3],
    ) -> Result<Self> {
        if !(scale.x > 0.0 && scale.y > 0.0 && scale.z > 0.0) {
            return Err(GbrError::Invalid(format!(
                "gaussian scale must be positive, got {scale:?}"
            )));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(GbrError::Invalid(format!(
                "gaussian opacity must be in [0,1], got {opacity}"
            )));
        }
        if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(GbrError::Invalid(format!(
                "gaussian color must be in [0,1], got {color:?}"
            )));
        }
        Ok(GaussianPrimitive {
            position,
            rotation,
            scale,
            opacity,
            color,
        })
    }

    #[inline]
    pub fn scale(&self) -> Vector3<f64> {
        self.scale
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        self.opacity
    }

    #[inline]
    pub fn color(&self) -> [f64; 3] {
        self.color
    }

    /// World-frame axis of the smallest scale component: the primitive's
    /// plane normal (sign not yet fixed).
    pub fn min_scale_axis(&self) -> Vector3<f64> {
        let axis = if self.scale.x <= self.scale.y && self.scale.x <= self.scale.z {
            Vector3::x()
        } else if self.scale.y <= self.scale.z {
            Vector3::y()
        } else {
            Vector3::z()
        };
        self.rotation * axis
    }
}
