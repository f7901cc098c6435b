//! Frame-based (planar) epipolar rectification.
//!
//! Builds the shared rectifying rotation whose X axis runs along the
//! baseline, derives the per-view homographies `H = K_new R R_i^T K_i^-1`,
//! and warps both images so corresponding points share a row.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, CameraView, Intrinsics};
use crate::image::{GrayImage, Mask};

/// Minimum baseline length in meters.
const MIN_BASELINE: f64 = 1e-9;
/// Minimum angle between baseline and summed principal rays (0.1 deg).
const MIN_AXIS_ANGLE_SIN: f64 = 1.7453292519943296e-3;

/// Shared rectified rotation. Rows: r1 along the baseline, r3 toward the
/// summed principal rays, r2 completing a right-handed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifyingFrame {
    pub rotation: Matrix3<f64>,
    /// Sum of the two principal rays; fixes the rectified Z direction.
    pub principal_sum: Vector3<f64>,
    /// Baseline length `|c_r - c_l|` in meters.
    pub baseline_m: f64,
}

/// Construct the shared rectifying rotation for a camera pair.
///
/// `r1` points from the left toward the right camera center. `r2` is
/// `normalize(k x r1)` with `k` the summed principal rays, which keeps the
/// canonical side-by-side pair a fixed point (identity rotation) and the
/// rectified view upright. `r3 = r1 x r2`.
pub fn build_rectifying_rotation(
    pose_l: &CameraPose,
    pose_r: &CameraPose,
) -> Result<RectifyingFrame> {
    let baseline = pose_r.center - pose_l.center;
    let b = baseline.norm();
    if b <= MIN_BASELINE {
        return Err(Error::DegenerateBaseline { dist: b });
    }
    let r1 = baseline / b;

    let k = pose_l.principal_ray() + pose_r.principal_ray();
    let k_norm = k.norm();
    if k_norm <= MIN_BASELINE || k.cross(&r1).norm() / k_norm <= MIN_AXIS_ANGLE_SIN {
        return Err(Error::DegeneratePrincipalRays);
    }

    let r2 = k.cross(&r1).normalize();
    let r3 = r1.cross(&r2);

    let rotation = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    Ok(RectifyingFrame {
        rotation,
        principal_sum: k,
        baseline_m: b,
    })
}

/// How the rectified image extents are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extents {
    /// Keep the shared intrinsics' width and height unchanged.
    #[default]
    Fixed,
    /// Grow the output symmetrically around the principal point until the
    /// warped corners of both source images fit.
    BoundingBox,
}

/// Homographies from original to rectified pixel coordinates, plus the
/// shared intrinsics of the rectified pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyPair {
    pub h_left: Matrix3<f64>,
    pub h_right: Matrix3<f64>,
    pub intrinsics: Intrinsics,
    /// Translation applied on top of `K_new R R_i^T K_i^-1` when the
    /// bounding-box extents mode grew the output; zero otherwise.
    pub offset: (f64, f64),
}

/// Compute the rectifying homography pair `H_i = K_new R R_i^T K_i^-1`.
///
/// When the two views' intrinsics differ, the shared focal length is their
/// mean and the output size the per-axis maximum.
pub fn compute_homographies(
    view_l: &CameraView,
    view_r: &CameraView,
    frame: &RectifyingFrame,
    extents: Extents,
) -> Result<HomographyPair> {
    let f_new = (view_l.intrinsics.focal_px + view_r.intrinsics.focal_px) / 2.0;
    let mut width = view_l.intrinsics.width.max(view_r.intrinsics.width);
    let mut height = view_l.intrinsics.height.max(view_r.intrinsics.height);
    let mut k_new = Intrinsics::new(f_new, width, height)?;

    let base = |view: &CameraView, k_new: &Intrinsics| {
        k_new.matrix()
            * frame.rotation
            * view.pose.rotation.transpose()
            * view.intrinsics.inverse_matrix()
    };

    let mut h_left = base(view_l, &k_new);
    let mut h_right = base(view_r, &k_new);
    let mut offset = (0.0, 0.0);

    if extents == Extents::BoundingBox {
        // Symmetric half-extents keep the principal point at the center.
        let mut half_w: f64 = 1.0;
        let mut half_h: f64 = 1.0;
        for (h, view) in [(&h_left, view_l), (&h_right, view_r)] {
            let w = (view.intrinsics.width - 1) as f64;
            let hh = (view.intrinsics.height - 1) as f64;
            for (cx, cy) in [(0.0, 0.0), (w, 0.0), (0.0, hh), (w, hh)] {
                let p = *h * Vector3::new(cx, cy, 1.0);
                if p.z.abs() < 1e-12 {
                    continue;
                }
                half_w = half_w.max((p.x / p.z - k_new.cx()).abs());
                half_h = half_h.max((p.y / p.z - k_new.cy()).abs());
            }
        }
        width = (2.0 * half_w).ceil() as usize + 1;
        height = (2.0 * half_h).ceil() as usize + 1;
        let grown = Intrinsics::new(f_new, width, height)?;
        offset = (grown.cx() - k_new.cx(), grown.cy() - k_new.cy());
        k_new = grown;
        h_left = base(view_l, &k_new);
        h_right = base(view_r, &k_new);
    }

    for (name, h) in [("left", &h_left), ("right", &h_right)] {
        let det = h.determinant();
        if det.abs() <= 1e-12 {
            debug_assert!(false, "{name} homography singular");
            return Err(Error::SingularHomography { det });
        }
    }

    Ok(HomographyPair {
        h_left,
        h_right,
        intrinsics: k_new,
        offset,
    })
}

/// Inverse-warp an image by a homography: each output pixel samples the
/// source at `H^-1 p` with bilinear interpolation. Samples outside the
/// source are masked invalid.
pub fn warp_planar(
    image: &GrayImage,
    homography: &Matrix3<f64>,
    out_w: usize,
    out_h: usize,
) -> Result<(GrayImage, Mask)> {
    let det = homography.determinant();
    let inv = homography
        .try_inverse()
        .filter(|_| det.abs() > 1e-12)
        .ok_or(Error::SingularHomography { det })?;

    let mut out = GrayImage::new(out_w, out_h);
    let mut mask = Mask::all_invalid(out_w, out_h);

    out.as_mut_slice()
        .par_chunks_mut(out_w)
        .zip(mask.as_mut_slice().par_chunks_mut(out_w))
        .enumerate()
        .for_each(|(y, (pix_row, mask_row))| {
            for x in 0..out_w {
                let p = inv * Vector3::new(x as f64, y as f64, 1.0);
                if p.z.abs() < 1e-12 {
                    continue;
                }
                if let Some(v) = image.sample_bilinear(p.x / p.z, p.y / p.z) {
                    pix_row[x] = v;
                    mask_row[x] = true;
                }
            }
        });

    Ok((out, mask))
}

/// A fully rectified stereo pair: shared frame, homographies, and the
/// warped images with their validity masks.
#[derive(Debug, Clone)]
pub struct RectifiedPair {
    pub frame: RectifyingFrame,
    pub homographies: HomographyPair,
    pub left: GrayImage,
    pub right: GrayImage,
    pub left_mask: Mask,
    pub right_mask: Mask,
}

/// Rectify a stereo pair end to end.
pub fn rectify_pair(
    image_l: &GrayImage,
    image_r: &GrayImage,
    view_l: &CameraView,
    view_r: &CameraView,
    extents: Extents,
) -> Result<RectifiedPair> {
    let frame = build_rectifying_rotation(&view_l.pose, &view_r.pose)?;
    let homographies = compute_homographies(view_l, view_r, &frame, extents)?;
    let (w, h) = (homographies.intrinsics.width, homographies.intrinsics.height);
    let (left, left_mask) = warp_planar(image_l, &homographies.h_left, w, h)?;
    let (right, right_mask) = warp_planar(image_r, &homographies.h_right, w, h)?;
    Ok(RectifiedPair {
        frame,
        homographies,
        left,
        right,
        left_mask,
        right_mask,
    })
}

/// Apply a homography to a pixel coordinate.
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}
