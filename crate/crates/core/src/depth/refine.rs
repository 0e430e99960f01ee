//! Per-view depth refinement: project, propose, correct, aggregate.
//!
//! The refined depth of a view starts from the cloud projection D⁰. Several
//! independent chains then repeatedly ask a provider for a candidate map,
//! align it to D⁰ with [`scale_correct`], and feed the corrected map back as
//! the next round's input. The chains' final maps are screened and averaged
//! by [`aggregate_candidates`], and view-space normals are derived from the
//! result.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::depth::aggregate::{aggregate_candidates, AggregateReport, AggregationConfig};
use crate::depth::correct::{scale_correct, ScaleCorrectionConfig};
use crate::depth::project::{project_cloud_depth, ProjectionConfig};
use crate::error::{GbrError, Result};
use crate::geometry::{normals_from_depth, CameraIntrinsics, CameraPose, DepthMap, NormalMap};
use crate::io::DepthProvider;

/// Options for [`refine_view`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Propose/correct iterations per chain.
    pub rounds: usize,
    /// Number of chains to run; capped by the provider's supply.
    pub chains: usize,
    pub projection: ProjectionConfig,
    pub scale: ScaleCorrectionConfig,
    pub aggregation: AggregationConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            rounds: 10,
            chains: 3,
            projection: ProjectionConfig::default(),
            scale: ScaleCorrectionConfig::default(),
            aggregation: AggregationConfig::default(),
        }
    }
}

/// Summary of one view's refinement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefineViewReport {
    pub view: usize,
    /// Chains actually run (provider supply may cap the request).
    pub chains: usize,
    pub rounds: usize,
    pub d0_valid: usize,
    pub d0_mean: f64,
    pub final_valid: usize,
    pub final_mean: f64,
    /// |mean(D*) − mean(D⁰)| / mean(D⁰) over the respective valid pixels.
    pub mean_drift: f64,
    pub aggregation: AggregateReport,
}

/// Refines the depth of one view against the given cloud and camera.
pub fn refine_view(
    view: usize,
    cloud: &[Vector3<f64>],
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    provider: &DepthProvider,
    config: &RefineConfig,
) -> Result<(DepthMap, NormalMap, RefineViewReport)> {
    if config.rounds == 0 {
        return Err(GbrError::Config("refinement needs at least one round".into()));
    }
    if config.chains == 0 {
        return Err(GbrError::Config("refinement needs at least one chain".into()));
    }
    let chains = match provider.max_chains(view) {
        Some(0) => {
            return Err(GbrError::Invalid(format!(
                "provider has no candidates for view {view}"
            )))
        }
        Some(m) => m.min(config.chains),
        None => config.chains,
    };

    let projected = project_cloud_depth(cloud, intrinsics, pose, &config.projection)?;
    let d0 = projected.depth;
    if d0.valid_count() == 0 {
        return Err(GbrError::Invalid(format!(
            "no cloud point projects into view {view}; cannot refine its depth"
        )));
    }
    let d0_mean = d0.mean_valid().expect("checked valid pixels above");

    let mut candidates = Vec::with_capacity(chains);
    for chain in 0..chains {
        let mut current = d0.clone();
        for round in 0..config.rounds {
            let proposal = provider.propose(view, chain, round, &current)?;
            current = scale_correct(&proposal, &d0, &config.scale)?;
        }
        candidates.push(current);
    }

    let (refined, aggregation) = aggregate_candidates(&candidates, &d0, &config.aggregation)?;
    let normals = normals_from_depth(&refined, intrinsics);

    let final_mean = refined.mean_valid().unwrap_or(0.0);
    let report = RefineViewReport {
        view,
        chains,
        rounds: config.rounds,
        d0_valid: d0.valid_count(),
        d0_mean,
        final_valid: refined.valid_count(),
        final_mean,
        mean_drift: (final_mean - d0_mean).abs() / d0_mean,
        aggregation,
    };
    Ok((refined, normals, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{unproject, Raster};
    use crate::io::OracleProvider;
    use nalgebra::{Rotation3, Vector2};

    const W: usize = 48;
    const H: usize = 36;

    fn camera() -> (CameraIntrinsics, CameraPose) {
        (
            CameraIntrinsics::centered(40.0, W, H).unwrap(),
            CameraPose {
                rotation: Rotation3::identity(),
                translation: Vector3::zeros(),
            },
        )
    }

    fn smooth(x: usize, y: usize) -> f64 {
        2.5 + 0.4 * (x as f64 / 9.0).sin() * (y as f64 / 7.0).cos()
            + 0.003 * (x as f64 + 2.0 * y as f64)
    }

    fn detail(x: usize, y: usize) -> f64 {
        use core::f64::consts::TAU;
        0.1 * (TAU * x as f64 / 5.0).sin() * (TAU * y as f64 / 4.0).sin()
    }

    fn depth_of(f: impl Fn(usize, usize) -> f64) -> DepthMap {
        DepthMap::new(Raster::from_fn(W, H, |x, y| f(x, y)), Raster::filled(W, H, true)).unwrap()
    }

    /// One cloud point per pixel, cast through the pixel center at the given
    /// depth, so projection reproduces the raster exactly.
    fn cloud_of(f: impl Fn(usize, usize) -> f64) -> Vec<Vector3<f64>> {
        let (intr, pose) = camera();
        let mut cloud = Vec::with_capacity(W * H);
        for y in 0..H {
            for x in 0..W {
                cloud.push(unproject(
                    Vector2::new(x as f64, y as f64),
                    f(x, y),
                    &intr,
                    &pose,
                ));
            }
        }
        cloud
    }

    fn rmse(map: &DepthMap, want: impl Fn(usize, usize) -> f64) -> f64 {
        let mut sq = 0.0;
        let mut n = 0usize;
        for y in 0..map.height() {
            for x in 0..map.width() {
                if let Some(v) = map.at(x, y) {
                    sq += (v - want(x, y)) * (v - want(x, y));
                    n += 1;
                }
            }
        }
        (sq / n as f64).sqrt()
    }

    #[test]
    fn fixed_point_provider_leaves_projection_unchanged() {
        let (intr, pose) = camera();
        let cloud = cloud_of(smooth);
        let provider = DepthProvider::Oracle(OracleProvider::fixed_point(vec![depth_of(smooth)]));
        let cfg = RefineConfig {
            rounds: 3,
            chains: 2,
            ..RefineConfig::default()
        };
        let (refined, normals, report) =
            refine_view(0, &cloud, &intr, &pose, &provider, &cfg).unwrap();
        assert_eq!(report.chains, 2);
        assert_eq!(report.d0_valid, W * H);
        let err = rmse(&refined, smooth);
        assert!(err < 1e-6, "fixed point drifted by {err}");
        assert!(!report.aggregation.fallback);
        // Normals exist on the interior and are unit length.
        assert!(report.final_valid > 0);
        let n = normals.at(W / 2, H / 2).expect("interior normal");
        assert!((n.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn affine_drift_is_cancelled_each_round() {
        let (intr, pose) = camera();
        let cloud = cloud_of(smooth);
        let provider = DepthProvider::Oracle(OracleProvider {
            gt_depths: vec![depth_of(smooth)],
            detail_gain: 0.0,
            scale_a: 1.1,
            offset_b_rel: 0.05,
            jitter_a: 0.0,
            jitter_b_rel: 0.0,
            noise_sigma_rel: 0.0,
            seed: 0,
        });
        let (refined, _, report) =
            refine_view(0, &cloud, &intr, &pose, &provider, &RefineConfig::default()).unwrap();
        let mut worst = 0.0f64;
        for y in 0..H {
            for x in 0..W {
                let v = refined.at(x, y).unwrap();
                let w = smooth(x, y);
                worst = worst.max((v - w).abs() / w);
            }
        }
        assert!(worst < 1e-3, "drift residual {worst}");
        assert!(report.mean_drift < 1e-3);
    }

    #[test]
    fn detail_injection_beats_the_projection() {
        let (intr, pose) = camera();
        // The cloud only knows the smooth surface; ground truth carries
        // additional high-frequency relief the provider gradually reveals.
        let cloud = cloud_of(smooth);
        let gt = |x: usize, y: usize| smooth(x, y) + detail(x, y);
        let provider = DepthProvider::Oracle(OracleProvider::emulated(vec![depth_of(gt)], 11));
        let (refined, _, report) =
            refine_view(0, &cloud, &intr, &pose, &provider, &RefineConfig::default()).unwrap();

        let initial = rmse(&depth_of(smooth), gt);
        let refined_err = rmse(&refined, gt);
        assert!(
            refined_err < 0.8 * initial,
            "refined RMSE {refined_err} vs projected {initial}"
        );
        assert!(report.mean_drift < 0.01, "mean drift {}", report.mean_drift);
        assert!(report.aggregation.accepted.iter().all(|a| *a));
    }

    #[test]
    fn validates_config_and_provider_supply() {
        let (intr, pose) = camera();
        let cloud = cloud_of(smooth);
        let provider = DepthProvider::Oracle(OracleProvider::fixed_point(vec![depth_of(smooth)]));
        for bad in [
            RefineConfig { rounds: 0, ..RefineConfig::default() },
            RefineConfig { chains: 0, ..RefineConfig::default() },
        ] {
            let err = refine_view(0, &cloud, &intr, &pose, &provider, &bad).unwrap_err();
            assert_eq!(err.exit_code(), 2);
        }
        // Oracle provider with no ground truth for the requested view.
        let err = refine_view(1, &cloud, &intr, &pose, &provider, &RefineConfig::default())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
