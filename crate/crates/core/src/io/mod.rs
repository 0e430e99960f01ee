//! File formats and scene ingestion: raw rasters, PLY, camera text files,
//! PNG images, scene directories, synthetic generation, and depth-candidate
//! providers.

pub mod cameras;
pub mod images;
pub mod ply;
pub mod provider;
pub mod raw;
pub mod scene;
pub mod synthetic;

pub use provider::{DepthProvider, FileProvider, OracleProvider};
pub use scene::{load_scene, save_scene, SceneBundle, SceneView};
pub use synthetic::{
    generate_scene, save_ground_truth, GroundTruth, NoiseModel, Surface, SurfaceKind,
    SyntheticSceneSpec,
};
