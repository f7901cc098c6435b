//! Spherical epipolar images.
//!
//! A planar rectified image is reprojected onto a sphere parameterized by
//! longitude and latitude. Before the angles are formed, the camera-frame
//! X and Y ray components are swapped so that longitude depends only on the
//! rectified row; the warped result is then rotated 90 degrees clockwise.
//! Corresponding points of a rectified pair therefore land on equal rows of
//! the two spherical images, while disparity runs along the row.
//!
//! Everything here is expressed as one composite inverse map per output
//! pixel; the literal multi-pass construction (transpose, warp, rotate) is
//! kept as a test oracle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{pixel_to_ray, ray_to_pixel, Intrinsics, Ray};
use crate::image::{sample_bilinear_masked, GrayImage, Mask};

/// Latitudes beyond this are masked out; the mapping is singular at the poles.
pub const MAX_ABS_LATITUDE_RAD: f64 = 85.0 * std::f64::consts::PI / 180.0;

const TAU: f64 = std::f64::consts::TAU;

/// Longitude/latitude of a forward-hemisphere ray.
///
/// `lambda = atan2(x, z)`, `phi = atan(-y / sqrt(x^2 + z^2))`.
pub fn ray_to_angles(ray: &Ray) -> Result<(f64, f64)> {
    let r = (ray.x * ray.x + ray.z * ray.z).sqrt();
    if r <= 1e-12 {
        return Err(Error::PoleSingularity);
    }
    if ray.z <= 0.0 {
        return Err(Error::BehindCamera { z: ray.z });
    }
    Ok((ray.x.atan2(ray.z), (-ray.y / r).atan()))
}

/// Unit ray for a longitude/latitude pair.
pub fn angles_to_ray(lambda: f64, phi: f64) -> Ray {
    let (sl, cl) = lambda.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Ray::new(sl * cp, -sp, cl * cp)
}

/// Angular sampling of the spherical image.
///
/// `s / (2 pi)` is the number of pixels per radian. `(u0, v0)` place zero
/// longitude/latitude at the center of the pre-rotation grid whose columns
/// follow longitude and rows latitude; `out_w`/`out_h` are the dimensions of
/// the final image after the 90-degree clockwise rotation, so `out_h` counts
/// longitude samples and `out_w` latitude samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalGrid {
    pub scale: f64,
    pub out_w: usize,
    pub out_h: usize,
    /// Covered longitude half-extent, radians.
    pub lambda_extent: f64,
    /// Covered latitude half-extent, radians.
    pub phi_extent: f64,
    pub u0: f64,
    pub v0: f64,
}

impl SphericalGrid {
    /// Pixels per radian.
    #[inline]
    pub fn pixels_per_radian(&self) -> f64 {
        self.scale / TAU
    }

    /// Size a grid to cover a rectified image's field of view.
    ///
    /// The default scale `s = 2 pi f` matches the rectified image's angular
    /// resolution at its center. Extents come from pushing the image corners
    /// and edge midpoints through the forward chain, plus a two-pixel margin,
    /// clamped away from the poles.
    pub fn for_rectified(intr: &Intrinsics, scale: Option<f64>) -> Result<SphericalGrid> {
        let s = scale.unwrap_or(TAU * intr.focal_px);
        if !(s > 0.0) {
            return Err(Error::Config(format!("spherical scale must be positive, got {s}")));
        }
        let rho = s / TAU;

        let w = (intr.width - 1) as f64;
        let h = (intr.height - 1) as f64;
        let boundary = [
            (0.0, 0.0),
            (w, 0.0),
            (0.0, h),
            (w, h),
            (w / 2.0, 0.0),
            (w / 2.0, h),
            (0.0, h / 2.0),
            (w, h / 2.0),
        ];
        let mut lambda_ext = 0.0f64;
        let mut phi_ext = 0.0f64;
        for (x, y) in boundary {
            let (lambda, phi) = frame_pixel_to_angles(intr, x, y)?;
            lambda_ext = lambda_ext.max(lambda.abs());
            phi_ext = phi_ext.max(phi.abs());
        }
        let margin = 2.0 / rho;
        lambda_ext = (lambda_ext + margin).min(MAX_ABS_LATITUDE_RAD);
        phi_ext = (phi_ext + margin).min(MAX_ABS_LATITUDE_RAD);

        // odd sample counts keep the zero angle on an exact pixel center
        let lambda_samples = 2 * (rho * lambda_ext).ceil() as usize + 1;
        let phi_samples = 2 * (rho * phi_ext).ceil() as usize + 1;

        Ok(SphericalGrid {
            scale: s,
            out_w: phi_samples,
            out_h: lambda_samples,
            lambda_extent: (lambda_samples - 1) as f64 / (2.0 * rho),
            phi_extent: (phi_samples - 1) as f64 / (2.0 * rho),
            u0: (lambda_samples - 1) as f64 / 2.0,
            v0: (phi_samples - 1) as f64 / 2.0,
        })
    }

    /// Pre-rotation grid coordinates of an angle pair (`u = s lambda / 2 pi + u0`).
    pub fn angles_to_sphere_pixel(&self, lambda: f64, phi: f64) -> Result<(f64, f64)> {
        let rho = self.pixels_per_radian();
        let u = rho * lambda + self.u0;
        let v = rho * phi + self.v0;
        let eps = 1e-9;
        if u < -eps || v < -eps || u > (self.out_h - 1) as f64 + eps || v > (self.out_w - 1) as f64 + eps
        {
            return Err(Error::OutOfGrid { lambda, phi });
        }
        Ok((u, v))
    }

    /// Inverse of [`Self::angles_to_sphere_pixel`].
    pub fn sphere_pixel_to_angles(&self, u: f64, v: f64) -> Result<(f64, f64)> {
        let rho = self.pixels_per_radian();
        let lambda = (u - self.u0) / rho;
        let phi = (v - self.v0) / rho;
        if lambda.abs() > self.lambda_extent + 1e-9 / rho || phi.abs() > self.phi_extent + 1e-9 / rho {
            return Err(Error::OutOfGrid { lambda, phi });
        }
        Ok((lambda, phi))
    }

    /// Fold of the 90-degree clockwise rotation: final image pixel to
    /// pre-rotation grid coordinates.
    #[inline]
    pub fn output_to_prerotation(&self, u_out: f64, v_out: f64) -> (f64, f64) {
        (v_out, (self.out_w - 1) as f64 - u_out)
    }

    /// Inverse fold: pre-rotation grid coordinates to final image pixel.
    #[inline]
    pub fn prerotation_to_output(&self, u: f64, v: f64) -> (f64, f64) {
        ((self.out_w - 1) as f64 - v, u)
    }
}

/// Forward chain without the grid: rectified pixel to (lambda, phi) with the
/// X/Y ray swap applied.
pub fn frame_pixel_to_angles(intr: &Intrinsics, x: f64, y: f64) -> Result<(f64, f64)> {
    let ray = pixel_to_ray(intr, x, y);
    let swapped = Ray::new(ray.y, ray.x, ray.z);
    ray_to_angles(&swapped)
}

/// Rectified pixel to final spherical image coordinates.
pub fn frame_pixel_to_sphere(
    grid: &SphericalGrid,
    intr: &Intrinsics,
    x: f64,
    y: f64,
) -> Result<(f64, f64)> {
    let (lambda, phi) = frame_pixel_to_angles(intr, x, y)?;
    let (u, v) = grid.angles_to_sphere_pixel(lambda, phi)?;
    Ok(grid.prerotation_to_output(u, v))
}

/// Final spherical image coordinates back to continuous rectified-frame
/// pixels: the exact analytic inverse used inside [`spherical_warp`].
pub fn sphere_pixel_to_frame(
    grid: &SphericalGrid,
    intr: &Intrinsics,
    u_out: f64,
    v_out: f64,
) -> Result<(f64, f64)> {
    if u_out < 0.0
        || v_out < 0.0
        || u_out > (grid.out_w - 1) as f64
        || v_out > (grid.out_h - 1) as f64
    {
        return Err(Error::OutOfGrid {
            lambda: f64::NAN,
            phi: f64::NAN,
        });
    }
    let (u, v) = grid.output_to_prerotation(u_out, v_out);
    let (lambda, phi) = grid.sphere_pixel_to_angles(u, v)?;
    let ray = angles_to_ray(lambda, phi);
    let unswapped = Ray::new(ray.y, ray.x, ray.z);
    ray_to_pixel(intr, &unswapped)
}

/// A spherical epipolar image with its grid and validity mask.
#[derive(Debug, Clone)]
pub struct SphericalImage {
    pub grid: SphericalGrid,
    pub pixels: GrayImage,
    pub mask: Mask,
}

/// Warp a rectified image onto the sphere with one composite inverse map:
/// undo the rotation, invert the grid, cast the ray, undo the component
/// swap, and project back into the rectified image for bilinear sampling.
pub fn spherical_warp(
    image: &GrayImage,
    mask: &Mask,
    intr: &Intrinsics,
    grid: &SphericalGrid,
) -> SphericalImage {
    let (out_w, out_h) = (grid.out_w, grid.out_h);
    let mut pixels = GrayImage::new(out_w, out_h);
    let mut out_mask = Mask::all_invalid(out_w, out_h);

    pixels
        .as_mut_slice()
        .par_chunks_mut(out_w)
        .zip(out_mask.as_mut_slice().par_chunks_mut(out_w))
        .enumerate()
        .for_each(|(v_out, (pix_row, mask_row))| {
            for u_out in 0..out_w {
                let mapped = sphere_pixel_to_frame(grid, intr, u_out as f64, v_out as f64);
                if let Ok((x, y)) = mapped {
                    if let Some(val) = sample_bilinear_masked(image, mask, x, y) {
                        pix_row[u_out] = val;
                        mask_row[u_out] = true;
                    }
                }
            }
        });

    SphericalImage {
        grid: *grid,
        pixels,
        mask: out_mask,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn angles_of_axis_rays() {
        let (l, p) = ray_to_angles(&Ray::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((l, p), (0.0, 0.0));
        let (l, p) = ray_to_angles(&Ray::new(1.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(l, FRAC_PI_4, epsilon = 1e-15);
        assert_eq!(p, 0.0);
        let (l, p) = ray_to_angles(&Ray::new(0.0, -1.0, 1.0)).unwrap();
        assert_eq!(l, 0.0);
        assert_abs_diff_eq!(p, FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn angle_errors() {
        assert!(matches!(
            ray_to_angles(&Ray::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
        // straight up the Y axis, and nearly so
        assert!(matches!(
            ray_to_angles(&Ray::new(0.0, 1.0, 0.0)),
            Err(Error::PoleSingularity)
        ));
        assert!(matches!(
            ray_to_angles(&Ray::new(0.0, 1.0, 1e-13)),
            Err(Error::PoleSingularity)
        ));
    }

    #[test]
    fn rays_of_axis_angles() {
        let r = angles_to_ray(0.0, 0.0);
        assert_eq!((r.x, r.y, r.z), (0.0, -0.0, 1.0));
        let r = angles_to_ray(FRAC_PI_2, 0.0);
        assert_abs_diff_eq!(r.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.z, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn angle_ray_round_trip_grid() {
        let ext = 80f64.to_radians();
        let n = 100;
        for i in 0..n {
            for j in 0..n {
                let lambda = -ext + 2.0 * ext * (i as f64) / (n - 1) as f64;
                let phi = -ext + 2.0 * ext * (j as f64) / (n - 1) as f64;
                let ray = angles_to_ray(lambda, phi);
                let (l2, p2) = ray_to_angles(&ray).unwrap();
                assert_abs_diff_eq!(l2, lambda, epsilon = 1e-12);
                assert_abs_diff_eq!(p2, phi, epsilon = 1e-12);
            }
        }
    }

    fn test_grid() -> SphericalGrid {
        let intr = Intrinsics::new(1000.0, 800, 600).unwrap();
        SphericalGrid::for_rectified(&intr, None).unwrap()
    }

    #[test]
    fn zero_angles_hit_grid_center() {
        let grid = test_grid();
        let (u, v) = grid.angles_to_sphere_pixel(0.0, 0.0).unwrap();
        assert_eq!((u, v), (grid.u0, grid.v0));
    }

    #[test]
    fn scale_sets_pixels_per_radian() {
        let intr = Intrinsics::new(1000.0, 800, 600).unwrap();
        let grid = SphericalGrid::for_rectified(&intr, Some(TAU * 1000.0)).unwrap();
        let (u, v) = grid.angles_to_sphere_pixel(0.001, 0.0).unwrap();
        assert_abs_diff_eq!(u, grid.u0 + 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, grid.v0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_pixel_round_trip() {
        let grid = test_grid();
        let mut k = 0u64;
        for _ in 0..1000 {
            // low-discrepancy-ish deterministic samples inside the extents
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = (k >> 11) as f64 / (1u64 << 53) as f64;
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = (k >> 11) as f64 / (1u64 << 53) as f64;
            let lambda = (2.0 * a - 1.0) * grid.lambda_extent;
            let phi = (2.0 * b - 1.0) * grid.phi_extent;
            let (u, v) = grid.angles_to_sphere_pixel(lambda, phi).unwrap();
            let (l2, p2) = grid.sphere_pixel_to_angles(u, v).unwrap();
            assert_abs_diff_eq!(l2, lambda, epsilon = 1e-12);
            assert_abs_diff_eq!(p2, phi, epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_grid_errors() {
        let grid = test_grid();
        assert!(matches!(
            grid.angles_to_sphere_pixel(grid.lambda_extent * 1.5, 0.0),
            Err(Error::OutOfGrid { .. })
        ));
        let intr = Intrinsics::new(1000.0, 800, 600).unwrap();
        assert!(sphere_pixel_to_frame(&grid, &intr, -1.0, 0.0).is_err());
    }

    #[test]
    fn rectified_center_maps_to_spherical_center() {
        let intr = Intrinsics::new(1000.0, 800, 600).unwrap();
        let grid = SphericalGrid::for_rectified(&intr, None).unwrap();
        let (u, v) = frame_pixel_to_sphere(&grid, &intr, intr.cx(), intr.cy()).unwrap();
        assert_abs_diff_eq!(u, (grid.out_w - 1) as f64 / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, (grid.out_h - 1) as f64 / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn frame_sphere_frame_round_trip() {
        let intr = Intrinsics::new(700.0, 640, 480).unwrap();
        let grid = SphericalGrid::for_rectified(&intr, None).unwrap();
        for iy in 0..20 {
            for ix in 0..20 {
                let x = 5.0 + (intr.width as f64 - 10.0) * ix as f64 / 19.0;
                let y = 5.0 + (intr.height as f64 - 10.0) * iy as f64 / 19.0;
                let (u, v) = frame_pixel_to_sphere(&grid, &intr, x, y).unwrap();
                let (x2, y2) = sphere_pixel_to_frame(&grid, &intr, u, v).unwrap();
                assert_abs_diff_eq!(x2, x, epsilon = 1e-9);
                assert_abs_diff_eq!(y2, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn frame_x_monotone_along_output_rows() {
        let intr = Intrinsics::new(500.0, 320, 240).unwrap();
        let grid = SphericalGrid::for_rectified(&intr, None).unwrap();
        for v_out in 0..grid.out_h {
            let mut prev: Option<f64> = None;
            for u_out in 0..grid.out_w {
                let (x, _) = sphere_pixel_to_frame(&grid, &intr, u_out as f64, v_out as f64).unwrap();
                if let Some(p) = prev {
                    assert!(x > p, "x not strictly increasing at row {v_out}");
                }
                prev = Some(x);
            }
        }
    }

    /// Literal multi-pass construction: transpose the image, warp through
    /// the unswapped angle chain, then rotate the array 90 degrees clockwise.
    fn literal_chain(
        image: &GrayImage,
        mask: &Mask,
        intr: &Intrinsics,
        grid: &SphericalGrid,
    ) -> (GrayImage, Mask) {
        // step 1: transpose image and intrinsics
        let (w, h) = (image.width(), image.height());
        let transposed = GrayImage::from_fn(h, w, |x, y| image.get(y, x));
        let mut tmask = Mask::all_invalid(h, w);
        for y in 0..w {
            for x in 0..h {
                tmask.set(x, y, mask.get(y, x));
            }
        }
        let tintr = Intrinsics::new(intr.focal_px, intr.height, intr.width).unwrap();

        // step 2: pre-rotation spherical image via the plain (no swap) chain
        let pre_w = grid.out_h;
        let pre_h = grid.out_w;
        let mut pre = GrayImage::new(pre_w, pre_h);
        let mut pre_mask = Mask::all_invalid(pre_w, pre_h);
        for v in 0..pre_h {
            for u in 0..pre_w {
                let (lambda, phi) = grid.sphere_pixel_to_angles(u as f64, v as f64).unwrap();
                let ray = angles_to_ray(lambda, phi);
                if let Ok((x, y)) = ray_to_pixel(&tintr, &ray) {
                    if let Some(val) = sample_bilinear_masked(&transposed, &tmask, x, y) {
                        pre.set(u, v, val);
                        pre_mask.set(u, v, true);
                    }
                }
            }
        }

        // step 3: rotate 90 degrees clockwise
        let mut out = GrayImage::new(grid.out_w, grid.out_h);
        let mut out_mask = Mask::all_invalid(grid.out_w, grid.out_h);
        for v_out in 0..grid.out_h {
            for u_out in 0..grid.out_w {
                let u = v_out;
                let v = grid.out_w - 1 - u_out;
                out.set(u_out, v_out, pre.get(u, v));
                out_mask.set(u_out, v_out, pre_mask.get(u, v));
            }
        }
        (out, out_mask)
    }

    #[test]
    fn composite_warp_equals_literal_chain() {
        let intr = Intrinsics::new(200.0, 96, 80).unwrap();
        let grid = SphericalGrid::for_rectified(&intr, None).unwrap();
        let image = GrayImage::from_fn(96, 80, |x, y| ((x * 7 + y * 13) % 256) as f32);
        let mut mask = Mask::all_valid(96, 80);
        for y in 0..10 {
            for x in 0..14 {
                mask.set(x, y, false);
            }
        }

        let composite = spherical_warp(&image, &mask, &intr, &grid);
        let (literal, literal_mask) = literal_chain(&image, &mask, &intr, &grid);

        assert_eq!(composite.mask.as_slice(), literal_mask.as_slice());
        for (a, b) in composite.pixels.as_slice().iter().zip(literal.as_slice()) {
            assert!((a - b).abs() < 1e-4, "composite {a} vs literal {b}");
        }
    }

    #[test]
    fn sphere_resample_round_trip_on_smooth_image() {
        let intr = Intrinsics::new(300.0, 128, 96).unwrap();
        let grid = SphericalGrid::for_rectified(&intr, None).unwrap();
        let image = GrayImage::from_fn(128, 96, |x, y| {
            128.0 + 50.0 * ((x as f32) / 127.0 - 0.5) - 30.0 * ((y as f32) / 95.0 - 0.5)
        });
        let mask = Mask::all_valid(128, 96);
        let sph = spherical_warp(&image, &mask, &intr, &grid);

        let mut max_diff = 0.0f32;
        for y in 8..88 {
            for x in 8..120 {
                let (u, v) = frame_pixel_to_sphere(&grid, &intr, x as f64, y as f64).unwrap();
                if let Some(val) = sample_bilinear_masked(&sph.pixels, &sph.mask, u, v) {
                    max_diff = max_diff.max((val - image.get(x, y)).abs());
                }
            }
        }
        assert!(max_diff <= 2.0, "round-trip error {max_diff} gray levels");
    }

    #[test]
    fn row_preservation_for_aligned_rectified_points() {
        // points sharing a rectified row must share a spherical output row
        let intr = Intrinsics::new(800.0, 640, 480).unwrap();
        let grid = SphericalGrid::for_rectified(&intr, None).unwrap();
        for y in [10.0, 120.5, 239.5, 400.25, 470.0] {
            let mut rows = Vec::new();
            for x in [5.0, 160.0, 320.0, 480.0, 634.0] {
                let (_, v_out) = frame_pixel_to_sphere(&grid, &intr, x, y).unwrap();
                rows.push(v_out);
            }
            for w in rows.windows(2) {
                assert_abs_diff_eq!(w[0], w[1], epsilon = 1e-9);
            }
        }
    }
}
