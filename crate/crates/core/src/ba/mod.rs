//! Bundle adjustment over point-map-derived matches: pairwise alignment into
//! a unified frame, focal estimation, reciprocal match extraction,
//! Levenberg-Marquardt refinement of cameras and points, and local
//! densification of misaligned clusters.

pub mod align;
pub mod bundle;
pub mod focal;
pub mod local;
pub mod matching;

use crate::error::{GbrError, Result};
use crate::geometry::{CameraIntrinsics, CameraPose};

pub use align::{pairwise_align, AlignConfig, Alignment};
pub use bundle::{
    bundle_adjust, merge_second_round, rigid_align, BAConfig, BAMode, BAReport, FocalMode,
};
pub use focal::{estimate_focal, FocalEstimate};
pub use local::{local_refine, LocalRefineConfig, LocalRefineReport};
pub use matching::{extract_matches, MatchConfig, MatchSet, Observation, Track};

/// All cameras of a scene. View 0 is the gauge anchor.
#[derive(Clone, Debug)]
pub struct CameraRig {
    pub intrinsics: Vec<CameraIntrinsics>,
    pub poses: Vec<CameraPose>,
}

impl CameraRig {
    pub fn new(intrinsics: Vec<CameraIntrinsics>, poses: Vec<CameraPose>) -> Result<Self> {
        if intrinsics.len() != poses.len() {
            return Err(GbrError::Dimension(format!(
                "{} intrinsics for {} poses",
                intrinsics.len(),
                poses.len()
            )));
        }
        if intrinsics.is_empty() {
            return Err(GbrError::Empty("camera rig has no views".into()));
        }
        Ok(CameraRig { intrinsics, poses })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}
