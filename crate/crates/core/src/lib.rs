//! Non-neural core of a sparse-view reconstruction pipeline.
//!
//! Takes per-view point maps with confidence (from an external estimator or
//! the built-in synthetic oracle) and produces refined camera parameters, a
//! dense point cloud, scale-consistent depth maps, Gaussian-splat renders,
//! supervision losses and a fused triangle mesh.
//!
//! The stages are wired together by [`pipeline`], mirroring the `gbr` CLI:
//! [`io`] ingestion → [`ba`] registration and bundle adjustment →
//! [`depth`] refinement → [`splat`] rendering → [`loss`] supervision →
//! [`mesh`] TSDF fusion → [`metrics`] evaluation.

pub mod ba;
pub mod depth;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod spatial;
pub mod splat;

pub use error::{GbrError, Result};
