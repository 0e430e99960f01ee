//! Seeded synthetic scenes with exact ground truth.
//!
//! A scene is a set of ring cameras observing an analytic surface. The
//! generator produces the same artifacts a real ingestion pipeline would
//! (images, per-view point maps with confidence, cross maps per pair, sky
//! masks) plus ground-truth cameras, depths, and surface samples for
//! oracle-based testing. Every output is a pure function of the seed.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GbrError, Result};
use crate::geometry::{
    CameraIntrinsics, CameraPose, DepthMap, PointMapFrame, Raster, ReferenceFrame, RgbImage,
    SimilarityTransform,
};
use crate::io::ply;
use crate::io::raw;
use crate::io::scene::{SceneBundle, SceneView};

/// Surface families available to the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Plane,
    Sphere,
    Heightfield,
}

impl std::str::FromStr for SurfaceKind {
    type Err = GbrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(SurfaceKind::Plane),
            "sphere" => Ok(SurfaceKind::Sphere),
            "heightfield" => Ok(SurfaceKind::Heightfield),
            other => Err(GbrError::Config(format!(
                "unknown surface '{other}' (expected plane, sphere, or heightfield)"
            ))),
        }
    }
}

/// Concrete surface with analytic ray intersection.
#[derive(Clone, Debug)]
pub enum Surface {
    /// z = 0 within |x|, |y| <= half_extent.
    Plane { half_extent: f64 },
    /// Centered at the origin.
    Sphere { radius: f64 },
    /// z = sum of sinusoid terms (amp, fx, fy, phase) within the extent.
    Heightfield {
        half_extent: f64,
        terms: Vec<(f64, f64, f64, f64)>,
    },
}

impl Surface {
    pub fn from_kind(kind: SurfaceKind, seed: u64) -> Surface {
        match kind {
            SurfaceKind::Plane => Surface::Plane { half_extent: 1.8 },
            SurfaceKind::Sphere => Surface::Sphere { radius: 1.0 },
            SurfaceKind::Heightfield => {
                let mut rng = StdRng::seed_from_u64(mix(seed, 0xB10B));
                let terms = (0..3)
                    .map(|_| {
                        (
                            0.05 + 0.10 * rng.random::<f64>(),
                            1.5 + 1.5 * rng.random::<f64>(),
                            1.5 + 1.5 * rng.random::<f64>(),
                            TAU * rng.random::<f64>(),
                        )
                    })
                    .collect();
                Surface::Heightfield {
                    half_extent: 1.6,
                    terms,
                }
            }
        }
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        match self {
            Surface::Heightfield { terms, .. } => terms
                .iter()
                .map(|(a, fx, fy, ph)| a * (fx * x + ph).sin() * (fy * y).cos())
                .sum(),
            _ => 0.0,
        }
    }

    /// Smallest positive ray parameter hitting the surface, if any.
    /// `dir` must be unit length.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Plane { half_extent } => {
                if dir.z.abs() < 1e-12 {
                    return None;
                }
                let t = -origin.z / dir.z;
                if t <= 1e-6 {
                    return None;
                }
                let p = origin + dir * t;
                (p.x.abs() <= *half_extent && p.y.abs() <= *half_extent).then_some(t)
            }
            Surface::Sphere { radius } => {
                // |o + t d|^2 = r^2 with |d| = 1.
                let b = origin.dot(dir);
                let c = origin.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = -b - sq;
                let t1 = -b + sq;
                if t0 > 1e-6 {
                    Some(t0)
                } else if t1 > 1e-6 {
                    Some(t1)
                } else {
                    None
                }
            }
            Surface::Heightfield { half_extent, .. } => {
                let he = *half_extent;
                // Parameter interval where the ray stays above the extent.
                let mut lo: f64 = 1e-3;
                let mut hi = f64::INFINITY;
                for (o, d) in [(origin.x, dir.x), (origin.y, dir.y)] {
                    if d.abs() < 1e-12 {
                        if o.abs() > he {
                            return None;
                        }
                    } else {
                        let (a, b) = ((-he - o) / d, (he - o) / d);
                        lo = lo.max(a.min(b));
                        hi = hi.min(a.max(b));
                    }
                }
                if hi <= lo {
                    return None;
                }
                let g = |t: f64| {
                    let p = origin + dir * t;
                    p.z - self.height(p.x, p.y)
                };
                let dt = 0.004;
                let mut t = lo;
                let mut gt = g(t);
                if gt <= 0.0 {
                    return None;
                }
                while t < hi {
                    let tn = (t + dt).min(hi);
                    let gn = g(tn);
                    if gn <= 0.0 {
                        // Bisect the bracket [t, tn].
                        let (mut a, mut b) = (t, tn);
                        for _ in 0..60 {
                            let m = 0.5 * (a + b);
                            if g(m) > 0.0 {
                                a = m;
                            } else {
                                b = m;
                            }
                        }
                        return Some(0.5 * (a + b));
                    }
                    t = tn;
                    gt = gn;
                }
                let _ = gt;
                None
            }
        }
    }

    /// Deterministic dense samples on the surface, in world coordinates.
    pub fn sample_points(&self, n: usize) -> Vec<Vector3<f64>> {
        match self {
            Surface::Sphere { radius } => {
                let golden = PI * (3.0 - 5.0f64.sqrt());
                (0..n)
                    .map(|k| {
                        let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                        let r = (1.0 - z * z).sqrt();
                        let phi = golden * k as f64;
                        Vector3::new(r * phi.cos(), r * phi.sin(), z) * *radius
                    })
                    .collect()
            }
            Surface::Plane { half_extent } | Surface::Heightfield { half_extent, .. } => {
                let he = *half_extent;
                let g = (n as f64).sqrt().ceil() as usize;
                let mut out = Vec::with_capacity(n);
                'outer: for j in 0..g {
                    for i in 0..g {
                        if out.len() == n {
                            break 'outer;
                        }
                        let x = ((i as f64 + 0.5) / g as f64) * 2.0 * he - he;
                        let y = ((j as f64 + 0.5) / g as f64) * 2.0 * he - he;
                        out.push(Vector3::new(x, y, self.height(x, y)));
                    }
                }
                out
            }
        }
    }

    /// Rough scene diameter, for noise scaling.
    pub fn diameter(&self) -> f64 {
        match self {
            Surface::Plane { half_extent } => 2.0 * half_extent * 2.0f64.sqrt(),
            Surface::Sphere { radius } => 2.0 * radius,
            Surface::Heightfield { half_extent, .. } => 2.0 * half_extent * 2.0f64.sqrt(),
        }
    }
}

/// Procedural view-independent surface color.
pub fn albedo(p: &Vector3<f64>) -> [f64; 3] {
    [
        0.5 + 0.45 * (4.1 * p.x + 1.3 * p.y + 0.5).sin(),
        0.5 + 0.45 * (3.7 * p.y + 1.1 * p.z + 1.7).sin(),
        0.5 + 0.45 * (4.3 * p.z + 1.7 * p.x + 3.1).sin(),
    ]
}

/// Background color for sky pixels.
pub const SKY_COLOR: [f64; 3] = [0.55, 0.65, 0.9];

/// Map-corruption model. All sigmas are in world units.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Isotropic Gaussian noise added to every map point.
    pub sigma_point: f64,
    /// Fraction of cells replaced by gross outliers at confidence 0.
    pub outlier_frac: f64,
    /// Per-view log-scale jitter of the maps; view 0 stays at scale 1.
    pub scale_jitter: f64,
    /// Emit `matchconf.raw` with values in [0.5, 1.0] instead of the
    /// implicit all-ones default.
    pub emit_match_conf: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma_point: 0.0,
            outlier_frac: 0.0,
            scale_jitter: 0.0,
            emit_match_conf: false,
        }
    }
}

/// Full description of a synthetic scene.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub surface: SurfaceKind,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub surface_samples: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Write ground-truth cameras into the scene (`cameras.txt`).
    pub emit_cameras: bool,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec::preset(SurfaceKind::Sphere)
    }
}

impl SyntheticSceneSpec {
    /// Sensible camera placement and resolution for each surface family.
    pub fn preset(surface: SurfaceKind) -> Self {
        let (ring_radius, ring_height) = match surface {
            SurfaceKind::Sphere => (3.0, 1.2),
            SurfaceKind::Plane => (2.4, 2.2),
            SurfaceKind::Heightfield => (2.6, 2.0),
        };
        SyntheticSceneSpec {
            surface,
            views: 4,
            width: 64,
            height: 48,
            focal: 70.0,
            ring_radius,
            ring_height,
            surface_samples: 20_000,
            noise: NoiseModel::default(),
            seed: 0,
            emit_cameras: true,
        }
    }
}

/// Exact generator outputs retained for oracle comparisons.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub intrinsics: Vec<CameraIntrinsics>,
    /// World-to-camera poses.
    pub poses: Vec<CameraPose>,
    /// Metric depth per view, invalid on sky.
    pub depths: Vec<DepthMap>,
    /// Dense samples of the surface, world frame.
    pub surface_samples: Vec<Vector3<f64>>,
    pub surface: Surface,
    /// Scale jitter applied to each view's maps.
    pub map_scales: Vec<f64>,
}

/// splitmix64; used to derive independent sub-seeds.
fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal3(rng: &mut StdRng) -> Vector3<f64> {
    Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

struct ViewGeometry {
    depth: DepthMap,
    image: RgbImage,
    sky: Raster<bool>,
    /// Exact world-frame hit point per pixel (zero where sky).
    world: Raster<Vector3<f64>>,
}

fn render_view(
    surface: &Surface,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> ViewGeometry {
    let (w, h) = (intr.width, intr.height);
    let center = pose.center();
    let mut depth = Raster::filled(w, h, 0.0);
    let mut valid = Raster::filled(w, h, false);
    let mut image = Raster::filled(w, h, SKY_COLOR);
    let mut sky = Raster::filled(w, h, true);
    let mut world = Raster::filled(w, h, Vector3::zeros());
    for y in 0..h {
        for x in 0..w {
            let dir_cam = intr.back_ray(Vector2::new(x as f64, y as f64)).normalize();
            let dir_world = pose.rotation.inverse() * dir_cam;
            if let Some(t) = surface.intersect(&center, &dir_world) {
                let p = center + dir_world * t;
                depth.set(x, y, t * dir_cam.z);
                valid.set(x, y, true);
                image.set(x, y, albedo(&p));
                sky.set(x, y, false);
                world.set(x, y, p);
            }
        }
    }
    ViewGeometry {
        depth: DepthMap::new(depth, valid).expect("ray depths are positive"),
        image,
        sky,
        world,
    }
}

/// Build a point map over `grid`'s pixels: world hits mapped into `frame`'s
/// camera coordinates, scaled by `scale`, then corrupted per `noise`.
#[allow(clippy::too_many_arguments)]
fn build_map(
    grid: &ViewGeometry,
    frame_pose: &CameraPose,
    scale: f64,
    noise: &NoiseModel,
    scene_diag: f64,
    rng: &mut StdRng,
    frame_id: usize,
    reference: ReferenceFrame,
) -> PointMapFrame {
    let (w, h) = (grid.world.width(), grid.world.height());
    let mut points = Raster::filled(w, h, Vector3::zeros());
    let mut conf = Raster::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            if *grid.sky.get(x, y) {
                continue;
            }
            let mut p = frame_pose.to_camera(grid.world.get(x, y)) * scale;
            if noise.sigma_point > 0.0 {
                p += normal3(rng) * noise.sigma_point;
            }
            let mut c = 4.0 + 3.0 * rng.random::<f64>();
            if noise.outlier_frac > 0.0 && rng.random::<f64>() < noise.outlier_frac {
                p += normal3(rng).normalize() * (0.4 * scene_diag) * (0.5 + rng.random::<f64>());
                c = 0.0;
            }
            points.set(x, y, p);
            conf.set(x, y, c);
        }
    }
    PointMapFrame::new(points, conf, frame_id, reference).expect("dims match by construction")
}

/// Generate a scene and its ground truth.
pub fn generate_scene(spec: &SyntheticSceneSpec) -> Result<(SceneBundle, GroundTruth)> {
    if spec.views < 2 {
        return Err(GbrError::Config(format!(
            "need at least 2 views, got {}",
            spec.views
        )));
    }
    if spec.width < 8 || spec.height < 8 {
        return Err(GbrError::Config(format!(
            "resolution {}x{} too small (minimum 8x8)",
            spec.width, spec.height
        )));
    }
    let surface = Surface::from_kind(spec.surface, spec.seed);
    let intr = CameraIntrinsics::centered(spec.focal, spec.width, spec.height)?;

    let mut poses = Vec::with_capacity(spec.views);
    for v in 0..spec.views {
        let theta = TAU * v as f64 / spec.views as f64;
        let eye = Vector3::new(
            spec.ring_radius * theta.cos(),
            spec.ring_radius * theta.sin(),
            spec.ring_height,
        );
        poses.push(CameraPose::look_at(eye, Vector3::zeros(), Vector3::z())?);
    }

    let geos: Vec<ViewGeometry> = poses
        .iter()
        .map(|pose| render_view(&surface, &intr, pose))
        .collect();
    for (v, g) in geos.iter().enumerate() {
        if g.depth.valid_count() < 16 {
            return Err(GbrError::Config(format!(
                "view {v} sees almost none of the surface ({} pixels); adjust camera ring",
                g.depth.valid_count()
            )));
        }
    }

    let mut map_scales = vec![1.0; spec.views];
    if spec.noise.scale_jitter > 0.0 {
        let mut rng = StdRng::seed_from_u64(mix(spec.seed, 0x5CA1E));
        for s in map_scales.iter_mut().skip(1) {
            let j = spec.noise.scale_jitter;
            *s = (rng.random::<f64>() * 2.0 * j - j).exp();
        }
    }

    let pairs: Vec<(usize, usize)> = if spec.views <= 8 {
        (0..spec.views)
            .flat_map(|i| ((i + 1)..spec.views).map(move |j| (i, j)))
            .collect()
    } else {
        (0..spec.views)
            .flat_map(|i| {
                [(i, (i + 1) % spec.views), (i, (i + 2) % spec.views)]
                    .into_iter()
                    .filter(|(a, b)| a < b)
            })
            .collect()
    };

    let diag = surface.diameter();
    let mut views = Vec::with_capacity(spec.views);
    for v in 0..spec.views {
        let mut rng = StdRng::seed_from_u64(mix(spec.seed, 0x0DD0 + v as u64));
        let point_map = build_map(
            &geos[v],
            &poses[v],
            map_scales[v],
            &spec.noise,
            diag,
            &mut rng,
            v,
            ReferenceFrame::View(v),
        );
        let match_conf = if spec.noise.emit_match_conf {
            let mut mc_rng = StdRng::seed_from_u64(mix(spec.seed, 0x3A7C + v as u64));
            Raster::from_fn(spec.width, spec.height, |_, _| {
                0.5 + 0.5 * mc_rng.random::<f64>()
            })
        } else {
            Raster::filled(spec.width, spec.height, 1.0)
        };
        views.push(SceneView {
            image: geos[v].image.clone(),
            point_map,
            sky_mask: Some(geos[v].sky.clone()),
            match_conf,
            cross: BTreeMap::new(),
        });
    }

    // Cross maps: for pair (i, j), view j's pixels in view i's frame.
    for &(i, j) in &pairs {
        let mut rng = StdRng::seed_from_u64(mix(spec.seed, 0xC805_5000 + (i * 997 + j) as u64));
        let cross = build_map(
            &geos[j],
            &poses[i],
            map_scales[i],
            &spec.noise,
            diag,
            &mut rng,
            j,
            ReferenceFrame::View(i),
        );
        views[i].cross.insert(j, cross);
    }

    let gt = GroundTruth {
        intrinsics: vec![intr; spec.views],
        poses: poses.clone(),
        depths: geos.iter().map(|g| g.depth.clone()).collect(),
        surface_samples: surface.sample_points(spec.surface_samples),
        surface,
        map_scales,
    };

    let scene = SceneBundle {
        views,
        pairs,
        cameras: spec
            .emit_cameras
            .then(|| (gt.intrinsics.clone(), poses)),
    };
    Ok((scene, gt))
}

/// Write ground-truth artifacts under `<dir>/gt/`.
pub fn save_ground_truth(dir: &Path, gt: &GroundTruth) -> Result<()> {
    let gt_dir = dir.join("gt");
    std::fs::create_dir_all(&gt_dir).map_err(|e| GbrError::io(&gt_dir, e))?;
    for (v, depth) in gt.depths.iter().enumerate() {
        raw::write_depth_raster(&gt_dir.join(format!("depth_{v:03}.raw")), depth)?;
    }
    ply::write_cloud_ply(&gt_dir.join("surface.ply"), &gt.surface_samples, None, None)?;
    Ok(())
}

/// The expected similarity mapping view `v`'s own map into view 0's own
/// frame, given ground truth. Used by alignment oracles.
pub fn expected_alignment(gt: &GroundTruth, v: usize) -> SimilarityTransform {
    // Own map of v: s_v * cam_v(X). Unified frame: s_0 * cam_0(X).
    let cam = |p: &CameraPose| {
        SimilarityTransform::rigid(p.rotation, p.translation)
    };
    let scale = |s: f64| {
        SimilarityTransform::from_parts(s, nalgebra::Rotation3::identity(), Vector3::zeros())
    };
    scale(gt.map_scales[0])
        .compose(&cam(&gt.poses[0]))
        .compose(&cam(&gt.poses[v]).inverse())
        .compose(&scale(1.0 / gt.map_scales[v]))
}
