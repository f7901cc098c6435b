//! Stereo reconstruction with frame-based and spherical epipolar images.
//!
//! The crate covers the full dense pipeline: epipolar rectification of a
//! calibrated stereo pair (planar homographies, optionally reprojected onto
//! a sphere to even out viewpoint distortion), hierarchical semi-global
//! matching with a census cost, triangulation of disparities into world
//! point clouds, and completeness/accuracy evaluation of the results. A
//! synthetic ray-cast scene renderer provides ground truth for testing.

pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod image;
pub mod io;
pub mod matcher;
pub mod pipeline;
pub mod rectify;
pub mod spherical;
pub mod synth;
pub mod triangulate;

pub use error::{Error, Result};
pub use geometry::{CameraPose, CameraView, Intrinsics, Ray};
pub use image::{GrayImage, Mask};
pub use matcher::{DisparityMap, DispSpace, SgmParams};
pub use rectify::{Extents, HomographyPair, RectifiedPair, RectifyingFrame};
pub use spherical::{SphericalGrid, SphericalImage};
pub use triangulate::{PointCloud, StereoGeometry};
