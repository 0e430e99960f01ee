//! Scene directory ingestion.
//!
//! Layout, relative to the scene root:
//!
//! ```text
//! pairs.txt                 required; one "i j" pair per line
//! cameras.txt               optional; initial/reference cameras
//! view_000/
//!   image.png               required
//!   pointmap.raw            required; 3 channels, view's own camera frame
//!   conf.raw                required; 1 channel
//!   sky.png                 optional; nonzero = sky
//!   matchconf.raw           optional; 1 channel, defaults to 1.0
//!   cross_007.raw           optional; view 7's pixels in view 0's frame
//!   crossconf_007.raw       optional; confidence for cross_007.raw
//! view_001/ ...
//! ```
//!
//! When no view carries cross maps, point maps are assumed to share one
//! unified frame already (for example from an external global aligner).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{GbrError, Result};
use crate::geometry::{
    CameraIntrinsics, CameraPose, PointMapFrame, Raster, ReferenceFrame, RgbImage,
};
use crate::io::{cameras, images, raw};

/// One ingested view.
#[derive(Clone, Debug)]
pub struct SceneView {
    pub image: RgbImage,
    /// The view's own point map, in its own camera frame.
    pub point_map: PointMapFrame,
    pub sky_mask: Option<Raster<bool>>,
    /// Secondary match confidence; 1.0 everywhere when the file is absent.
    pub match_conf: Raster<f64>,
    /// Cross maps keyed by source view: `cross[j]` holds view j's pixels
    /// expressed in this view's camera frame.
    pub cross: BTreeMap<usize, PointMapFrame>,
}

impl SceneView {
    #[inline]
    pub fn width(&self) -> usize {
        self.image.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.image.height()
    }
}

/// A fully loaded scene.
#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub views: Vec<SceneView>,
    pub pairs: Vec<(usize, usize)>,
    pub cameras: Option<(Vec<CameraIntrinsics>, Vec<CameraPose>)>,
}

impl SceneBundle {
    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// True when any view carries a cross map.
    pub fn has_cross_maps(&self) -> bool {
        self.views.iter().any(|v| !v.cross.is_empty())
    }
}

pub fn view_dir_name(view: usize) -> String {
    format!("view_{view:03}")
}

fn parse_pairs(path: &Path, n_views: usize) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path).map_err(|e| GbrError::io(path, e))?;
    let name = path.display().to_string();
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match toks.as_slice() {
            [a, b] => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        let Some((i, j)) = parsed else {
            return Err(GbrError::load(
                name,
                format!("line {}: expected 'i j', got '{line}'", lineno + 1),
            ));
        };
        if i == j {
            return Err(GbrError::load(
                name,
                format!("line {}: pair ({i}, {j}) is degenerate", lineno + 1),
            ));
        }
        if i >= n_views || j >= n_views {
            return Err(GbrError::load(
                name,
                format!(
                    "line {}: pair ({i}, {j}) references a view beyond the {n_views} found",
                    lineno + 1
                ),
            ));
        }
        pairs.push((i, j));
    }
    if pairs.is_empty() {
        return Err(GbrError::load(name, "no pairs listed".to_string()));
    }
    Ok(pairs)
}

fn load_view(scene: &Path, view: usize) -> Result<SceneView> {
    let dir = scene.join(view_dir_name(view));
    let image = images::read_rgb_png(&dir.join("image.png"))?;
    let points = raw::read_vector_raster(&dir.join("pointmap.raw"))?;
    let conf = raw::read_scalar_raster(&dir.join("conf.raw"))?;
    let (w, h) = (image.width(), image.height());
    if points.width() != w || points.height() != h {
        return Err(GbrError::Dimension(format!(
            "{}: point map is {}x{} but image is {w}x{h}",
            dir.display(),
            points.width(),
            points.height()
        )));
    }
    let point_map = PointMapFrame::new(points, conf, view, ReferenceFrame::View(view))?;

    let sky_path = dir.join("sky.png");
    let sky_mask = if sky_path.exists() {
        let mask = images::read_mask_png(&sky_path)?;
        if mask.width() != w || mask.height() != h {
            return Err(GbrError::Dimension(format!(
                "{}: sky mask is {}x{} but image is {w}x{h}",
                dir.display(),
                mask.width(),
                mask.height()
            )));
        }
        Some(mask)
    } else {
        None
    };

    let mc_path = dir.join("matchconf.raw");
    let match_conf = if mc_path.exists() {
        let mc = raw::read_scalar_raster(&mc_path)?;
        if !mc.same_dims(point_map.confidence()) {
            return Err(GbrError::Dimension(format!(
                "{}: matchconf is {}x{} but image is {w}x{h}",
                dir.display(),
                mc.width(),
                mc.height()
            )));
        }
        mc
    } else {
        Raster::filled(w, h, 1.0)
    };

    let mut cross = BTreeMap::new();
    let entries = std::fs::read_dir(&dir).map_err(|e| GbrError::io(&dir, e))?;
    let mut cross_files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("cross_") && n.ends_with(".raw"))
        })
        .collect();
    cross_files.sort();
    for path in cross_files {
        let stem = path.file_stem().unwrap().to_str().unwrap();
        let source: usize = stem["cross_".len()..].parse().map_err(|_| {
            GbrError::load(
                path.display().to_string(),
                "cross map name must be cross_<view>.raw".to_string(),
            )
        })?;
        let pts = raw::read_vector_raster(&path)?;
        let conf_path = dir.join(format!("crossconf_{:03}.raw", source));
        let conf = if conf_path.exists() {
            raw::read_scalar_raster(&conf_path)?
        } else {
            Raster::filled(pts.width(), pts.height(), 1.0)
        };
        cross.insert(
            source,
            PointMapFrame::new(pts, conf, source, ReferenceFrame::View(view))?,
        );
    }

    Ok(SceneView {
        image,
        point_map,
        sky_mask,
        match_conf,
        cross,
    })
}

/// Load a scene directory, validating layout and dimensions.
pub fn load_scene(dir: &Path) -> Result<SceneBundle> {
    if !dir.is_dir() {
        return Err(GbrError::load(
            dir.display().to_string(),
            "scene directory does not exist".to_string(),
        ));
    }
    let mut n_views = 0;
    while dir.join(view_dir_name(n_views)).is_dir() {
        n_views += 1;
    }
    if n_views == 0 {
        return Err(GbrError::load(
            dir.display().to_string(),
            "no view_000 directory found".to_string(),
        ));
    }
    let pairs = parse_pairs(&dir.join("pairs.txt"), n_views)?;

    let mut views = Vec::with_capacity(n_views);
    for v in 0..n_views {
        views.push(load_view(dir, v)?);
    }

    for view in &views {
        for (&source, map) in &view.cross {
            if source >= n_views {
                return Err(GbrError::load(
                    dir.display().to_string(),
                    format!("cross map references view {source} beyond the {n_views} found"),
                ));
            }
            let src = &views[source];
            if map.width() != src.width() || map.height() != src.height() {
                return Err(GbrError::Dimension(format!(
                    "cross map of view {source} is {}x{} but that view is {}x{}",
                    map.width(),
                    map.height(),
                    src.width(),
                    src.height()
                )));
            }
        }
    }

    let cam_path = dir.join("cameras.txt");
    let cams = if cam_path.exists() {
        let (intr, poses) = cameras::read_cameras(&cam_path)?;
        if intr.len() != n_views {
            return Err(GbrError::load(
                cam_path.display().to_string(),
                format!("{} cameras for {n_views} views", intr.len()),
            ));
        }
        Some((intr, poses))
    } else {
        None
    };

    log::info!(
        "loaded scene {}: {} views, {} pairs, cameras {}",
        dir.display(),
        n_views,
        pairs.len(),
        if cams.is_some() { "present" } else { "absent" }
    );

    Ok(SceneBundle {
        views,
        pairs,
        cameras: cams,
    })
}

/// Write a scene bundle into `dir` using the standard layout.
pub fn save_scene(dir: &Path, scene: &SceneBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GbrError::io(dir, e))?;
    let mut pair_text = String::new();
    for (i, j) in &scene.pairs {
        pair_text.push_str(&format!("{i} {j}\n"));
    }
    std::fs::write(dir.join("pairs.txt"), pair_text)
        .map_err(|e| GbrError::io(&dir.join("pairs.txt"), e))?;

    for (v, view) in scene.views.iter().enumerate() {
        let vdir = dir.join(view_dir_name(v));
        std::fs::create_dir_all(&vdir).map_err(|e| GbrError::io(&vdir, e))?;
        images::write_rgb_png(&vdir.join("image.png"), &view.image)?;
        raw::write_vector_raster(&vdir.join("pointmap.raw"), view.point_map.points())?;
        raw::write_scalar_raster(&vdir.join("conf.raw"), view.point_map.confidence())?;
        if let Some(sky) = &view.sky_mask {
            images::write_mask_png(&vdir.join("sky.png"), sky)?;
        }
        if view.match_conf.data().iter().any(|&c| c != 1.0) {
            raw::write_scalar_raster(&vdir.join("matchconf.raw"), &view.match_conf)?;
        }
        for (&source, map) in &view.cross {
            raw::write_vector_raster(&vdir.join(format!("cross_{source:03}.raw")), map.points())?;
            raw::write_scalar_raster(
                &vdir.join(format!("crossconf_{source:03}.raw")),
                map.confidence(),
            )?;
        }
    }

    if let Some((intr, poses)) = &scene.cameras {
        cameras::write_cameras(&dir.join("cameras.txt"), intr, poses)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn tiny_scene() -> SceneBundle {
        let mk_view = |view: usize, offset: f64| {
            let points = Raster::from_fn(3, 2, |x, y| {
                Vector3::new(x as f64 + offset, y as f64, 2.0)
            });
            let conf = Raster::filled(3, 2, 5.0);
            SceneView {
                image: Raster::filled(3, 2, [0.25, 0.5, 0.75]),
                point_map: PointMapFrame::new(points, conf, view, ReferenceFrame::View(view))
                    .unwrap(),
                sky_mask: Some(Raster::from_fn(3, 2, |x, _| x == 0)),
                match_conf: Raster::filled(3, 2, 0.9),
                cross: BTreeMap::new(),
            }
        };
        let mut v0 = mk_view(0, 0.0);
        let v1 = mk_view(1, 0.1);
        v0.cross.insert(
            1,
            PointMapFrame::new(
                v1.point_map.points().clone(),
                Raster::filled(3, 2, 2.0),
                1,
                ReferenceFrame::View(0),
            )
            .unwrap(),
        );
        SceneBundle {
            views: vec![v0, v1],
            pairs: vec![(0, 1)],
            cameras: None,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = tiny_scene();
        save_scene(dir.path(), &scene).unwrap();
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back.n_views(), 2);
        assert_eq!(back.pairs, vec![(0, 1)]);
        assert!(back.has_cross_maps());
        let p0 = back.views[0].point_map.points().get(2, 1);
        assert!((p0.x - 2.0).abs() < 1e-6);
        assert_eq!(back.views[0].cross[&1].frame_id, 1);
        assert_eq!(
            back.views[0].cross[&1].reference_frame,
            ReferenceFrame::View(0)
        );
        assert!((back.views[1].match_conf.get(0, 0) - 0.9).abs() < 1e-6);
        assert!(*back.views[0].sky_mask.as_ref().unwrap().get(0, 1));
    }

    #[test]
    fn missing_pairs_file_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let scene = tiny_scene();
        save_scene(dir.path(), &scene).unwrap();
        std::fs::remove_file(dir.path().join("pairs.txt")).unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn pair_referencing_missing_view_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let scene = tiny_scene();
        save_scene(dir.path(), &scene).unwrap();
        std::fs::write(dir.path().join("pairs.txt"), "0 5\n").unwrap();
        let msg = load_scene(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("beyond the 2"), "{msg}");
    }
}
