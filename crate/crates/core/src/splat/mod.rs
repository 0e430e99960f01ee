//! Forward rendering of Gaussian primitives: projected 2D footprints,
//! alpha-blended color, normals, plane distances and plane-intersection
//! depth, plus scene construction from a point cloud.

mod project;
mod render;
mod scene;

pub use project::{project_gaussian, ProjectedGaussian, MIN_SPLAT_DEPTH};
pub use render::{render, RenderConfig, RenderOutput, SplatScene};
pub use scene::SplatInitConfig;
