//! Geometric foundations: rasters, camera models, similarity transforms,
//! point/depth/normal maps, and Gaussian primitives.

pub mod camera;
pub mod maps;
pub mod normals;
pub mod raster;
pub mod transform;

pub use camera::{
    project, project_camera_point, unproject, CameraIntrinsics, CameraPose, MIN_CAMERA_Z,
};
pub use maps::{DepthMap, GaussianPrimitive, NormalMap, PointMapFrame, ReferenceFrame, RgbImage};
pub use normals::normals_from_depth;
pub use raster::Raster;
pub use transform::{umeyama_weighted, SimilarityTransform};
