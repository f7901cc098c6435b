//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A point or ray lies on or behind the camera plane (Z <= 0).
    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },

    /// Camera centers coincide; no baseline direction exists.
    #[error("degenerate baseline: camera centers are {dist} m apart")]
    DegenerateBaseline { dist: f64 },

    /// The summed principal rays are parallel to the baseline.
    #[error("degenerate principal rays: baseline and summed principal rays are parallel")]
    DegeneratePrincipalRays,

    /// Homography cannot be inverted.
    #[error("singular homography (|det| = {det:e})")]
    SingularHomography { det: f64 },

    /// Ray points along the latitude pole; longitude is undefined.
    #[error("pole singularity: ray lies along the +/-Y axis")]
    PoleSingularity,

    /// Angles fall outside the spherical grid extents.
    #[error("angles ({lambda}, {phi}) rad outside grid extents")]
    OutOfGrid { lambda: f64, phi: f64 },

    /// Census window does not fit the image or exceeds 64 descriptor bits.
    #[error("census window {ww}x{wh} invalid for {iw}x{ih} image: {reason}")]
    WindowTooLarge {
        ww: usize,
        wh: usize,
        iw: usize,
        ih: usize,
        reason: &'static str,
    },

    /// Disparity search range is empty.
    #[error("empty disparity range [{d_min}, {d_max}]")]
    EmptyRange { d_min: i32, d_max: i32 },

    /// Image too small to build the matching pyramid.
    #[error("image {w}x{h} too small: coarsest pyramid level would drop below {min_side} px")]
    ImageTooSmall { w: usize, h: usize, min_side: usize },

    /// Disparity must be positive to yield finite depth.
    #[error("non-positive disparity {d}")]
    NonPositiveDisparity { d: f64 },

    /// Reference cloud for a distance query is empty.
    #[error("reference point cloud is empty")]
    EmptyReference,

    /// Depth bounds for disparity-range derivation are invalid.
    #[error("invalid depth bounds [{z_min}, {z_max}] m")]
    InvalidDepthBounds { z_min: f64, z_max: f64 },

    /// Synthetic scene is not visible from a camera.
    #[error("scene is not visible from the {which} camera")]
    SceneNotVisible { which: &'static str },

    /// Configuration or input validation failure.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// PLY file does not match the supported layout.
    #[error("malformed PLY: {0}")]
    MalformedPly(String),

    /// PFM file does not match the supported layout.
    #[error("malformed PFM: {0}")]
    MalformedPfm(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidDepthBounds { .. })
    }
}
