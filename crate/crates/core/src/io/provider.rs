//! Sources of candidate refined depth maps.
//!
//! The refinement loop asks a provider for candidate depth maps, one per
//! (view, chain, round). Two providers exist: a directory of precomputed
//! candidate rasters, and a seeded oracle that deterministically emulates a
//! generative refiner by blending the current estimate toward ground truth
//! and applying a configurable affine drift — exactly the error mode the
//! scale-correction stage is built to remove.

use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GbrError, Result};
use crate::geometry::{DepthMap, Raster};
use crate::io::raw;
use crate::io::scene::view_dir_name;

/// A source of candidate depth maps.
#[derive(Clone, Debug)]
pub enum DepthProvider {
    Files(FileProvider),
    Oracle(OracleProvider),
}

impl DepthProvider {
    /// Candidate for `(view, chain, round)` given the current estimate.
    pub fn propose(
        &self,
        view: usize,
        chain: usize,
        round: usize,
        current: &DepthMap,
    ) -> Result<DepthMap> {
        match self {
            DepthProvider::Files(p) => p.propose(view, chain),
            DepthProvider::Oracle(p) => p.propose(view, chain, round, current),
        }
    }

    /// Number of chains this provider can serve for a view; `None` when
    /// unlimited.
    pub fn max_chains(&self, view: usize) -> Option<usize> {
        match self {
            DepthProvider::Files(p) => Some(p.candidates.get(view).map_or(0, Vec::len)),
            DepthProvider::Oracle(_) => None,
        }
    }
}

/// Precomputed candidates: `<dir>/view_###/candidate_#.raw`. The same
/// candidate is returned for every round (a static, pre-converged chain).
#[derive(Clone, Debug)]
pub struct FileProvider {
    candidates: Vec<Vec<PathBuf>>,
}

impl FileProvider {
    pub fn open(dir: &Path, n_views: usize) -> Result<FileProvider> {
        if !dir.is_dir() {
            return Err(GbrError::load(
                dir.display().to_string(),
                "provider directory does not exist".to_string(),
            ));
        }
        let mut candidates = Vec::with_capacity(n_views);
        for v in 0..n_views {
            let vdir = dir.join(view_dir_name(v));
            let mut files = Vec::new();
            let mut c = 0;
            loop {
                let path = vdir.join(format!("candidate_{c}.raw"));
                if !path.is_file() {
                    break;
                }
                files.push(path);
                c += 1;
            }
            if files.is_empty() {
                return Err(GbrError::load(
                    vdir.display().to_string(),
                    format!("no candidate_0.raw for view {v}"),
                ));
            }
            candidates.push(files);
        }
        Ok(FileProvider { candidates })
    }

    fn propose(&self, view: usize, chain: usize) -> Result<DepthMap> {
        let files = self.candidates.get(view).ok_or_else(|| {
            GbrError::Invalid(format!("provider has no candidates for view {view}"))
        })?;
        let path = &files[chain % files.len()];
        raw::read_depth_raster(path)
    }
}

/// Seeded stand-in for a generative depth refiner.
///
/// For each requested candidate, pixels are filled from the current estimate
/// (falling back to ground truth in holes), pulled toward ground truth by
/// `detail_gain`, then distorted by an affine map `a * d + b` and Gaussian
/// noise. `b` and the noise scale with the current map's mean depth.
#[derive(Clone, Debug)]
pub struct OracleProvider {
    pub gt_depths: Vec<DepthMap>,
    pub detail_gain: f64,
    pub scale_a: f64,
    pub offset_b_rel: f64,
    pub jitter_a: f64,
    pub jitter_b_rel: f64,
    pub noise_sigma_rel: f64,
    pub seed: u64,
}

impl OracleProvider {
    /// Provider that reproduces its input exactly: no detail, no drift.
    pub fn fixed_point(gt_depths: Vec<DepthMap>) -> OracleProvider {
        OracleProvider {
            gt_depths,
            detail_gain: 0.0,
            scale_a: 1.0,
            offset_b_rel: 0.0,
            jitter_a: 0.0,
            jitter_b_rel: 0.0,
            noise_sigma_rel: 0.0,
            seed: 0,
        }
    }

    /// Default emulation: half-strength detail recovery with mild,
    /// chain-dependent affine drift and noise.
    pub fn emulated(gt_depths: Vec<DepthMap>, seed: u64) -> OracleProvider {
        OracleProvider {
            gt_depths,
            detail_gain: 0.5,
            scale_a: 1.0,
            offset_b_rel: 0.0,
            jitter_a: 0.08,
            jitter_b_rel: 0.03,
            noise_sigma_rel: 0.002,
            seed,
        }
    }

    fn propose(
        &self,
        view: usize,
        chain: usize,
        round: usize,
        current: &DepthMap,
    ) -> Result<DepthMap> {
        let gt = self.gt_depths.get(view).ok_or_else(|| {
            GbrError::Invalid(format!("oracle provider has no ground truth for view {view}"))
        })?;
        if gt.width() != current.width() || gt.height() != current.height() {
            return Err(GbrError::Dimension(format!(
                "view {view}: ground truth is {}x{} but current estimate is {}x{}",
                gt.width(),
                gt.height(),
                current.width(),
                current.height()
            )));
        }
        let tag = (view as u64) << 32 | (chain as u64) << 16 | round as u64;
        let mut rng = StdRng::seed_from_u64(self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mean = current.mean_valid().or_else(|| gt.mean_valid()).unwrap_or(1.0);

        let a = self.scale_a
            * if self.jitter_a > 0.0 {
                (rng.random::<f64>() * 2.0 * self.jitter_a - self.jitter_a).exp()
            } else {
                1.0
            };
        let b = (self.offset_b_rel
            + if self.jitter_b_rel > 0.0 {
                rng.random::<f64>() * 2.0 * self.jitter_b_rel - self.jitter_b_rel
            } else {
                0.0
            })
            * mean;

        let (w, h) = (current.width(), current.height());
        let mut depth = Raster::filled(w, h, 0.0);
        let mut valid = Raster::filled(w, h, false);
        for y in 0..h {
            for x in 0..w {
                let base = match (current.at(x, y), gt.at(x, y)) {
                    (Some(c), _) => c,
                    (None, Some(g)) => g,
                    (None, None) => continue,
                };
                let target = match gt.at(x, y) {
                    Some(g) => base + self.detail_gain * (g - base),
                    None => base,
                };
                let mut v = a * target + b;
                if self.noise_sigma_rel > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    v += n * self.noise_sigma_rel * mean;
                }
                depth.set(x, y, v.max(1e-6 * mean));
                valid.set(x, y, true);
            }
        }
        DepthMap::new(depth, valid)
    }
}
