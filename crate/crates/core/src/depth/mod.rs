//! Scale-consistent depth refinement.
//!
//! Turns the reconstructed cloud into per-view depth maps (projection with
//! z-buffering and hole filling), aligns externally proposed candidate maps
//! to that reference by windowed affine fits, aggregates the surviving
//! candidates, and derives normals — producing depth that carries candidate
//! detail while preserving the reconstruction's metric scale.

mod aggregate;
mod correct;
mod project;
mod refine;

pub use aggregate::{aggregate_candidates, AggregateReport, AggregationConfig};
pub use correct::{scale_correct, ScaleCorrectionConfig};
pub use project::{project_cloud_depth, ProjectedDepth, ProjectionConfig};
pub use refine::{refine_view, RefineConfig, RefineViewReport};
