//! Depth-map fusion into a truncated signed-distance volume and triangle
//! mesh extraction (§IV-C, final step).
//!
//! The fusion pipeline is: per-view depth maps are integrated into a
//! [`TsdfVolume`] with [`integrate`], then [`extract_mesh`] triangulates the
//! zero level set with marching cubes. Integration uses a running average
//! with unit observation weight, so the result is independent of view order
//! up to floating-point associativity.

mod extract;
mod tables;
mod triangle;
mod volume;

pub use extract::extract_mesh;
pub use triangle::TriangleMesh;
pub use volume::{
    default_truncation, default_voxel_size, integrate, point_bounds, TsdfVolume,
};
