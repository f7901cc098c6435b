//! Hierarchical semi-global matching.
//!
//! Census descriptors are matched by Hamming distance into a cost volume,
//! aggregated along multiple scanline directions with the usual two-penalty
//! recurrence, and reduced to a disparity map by winner-take-all with
//! uniqueness, subpixel, and left-right consistency checks. A factor-2
//! pyramid narrows the per-pixel search range from coarse to fine.

mod aggregate;
mod census;
mod pyramid;
mod select;
mod volume;

pub use aggregate::{sgm_aggregate, path_directions};
pub use census::{census_transform, census_transform_masked, CensusImage};
pub use select::{select_disparity, subpixel_offset};
pub use volume::{compute_cost_volume, compute_cost_volume_windowed, CostVolume};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};

/// Disparity value marking pixels without a usable match.
pub const INVALID_DISPARITY: f32 = f32::NEG_INFINITY;

/// Smallest image side the pyramid may reach; also the minimum input size.
pub const MIN_PYRAMID_SIDE: usize = 32;

/// Which image space a disparity map lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispSpace {
    /// Planar rectified pixels; depth via `Z = b f / d`.
    Frame,
    /// Spherical epipolar pixels; converted back through the grid before
    /// triangulation.
    Spherical,
}

/// Per-pixel disparity with an invalid sentinel.
#[derive(Debug, Clone)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
    pub space: DispSpace,
}

impl DisparityMap {
    pub fn new_invalid(width: usize, height: usize, space: DispSpace) -> Self {
        Self {
            width,
            height,
            data: vec![INVALID_DISPARITY; width * height],
            space,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>, space: DispSpace) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
            space,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: f32) {
        self.data[y * self.width + x] = d;
    }

    /// A disparity is valid iff it is finite.
    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y).is_finite()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| d.is_finite()).count()
    }
}

/// Matching parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgmParams {
    /// Penalty for a one-pixel disparity change between neighbors.
    pub p1: u16,
    /// Penalty for larger disparity changes (surface discontinuities).
    pub p2: u16,
    /// Number of aggregation directions, 4 or 8.
    pub num_paths: usize,
    /// Census window (width, height), both odd, at most 64 neighbor bits.
    pub census_window: (usize, usize),
    /// Maximum left-right disagreement in pixels.
    pub lr_threshold: f32,
    /// Winner is rejected when a non-adjacent disparity's cost is below
    /// `uniqueness_ratio * best`.
    pub uniqueness_ratio: f64,
    /// Pyramid halvings; `None` picks the deepest level whose short side
    /// stays at or above [`MIN_PYRAMID_SIDE`].
    pub pyramid_levels: Option<usize>,
    /// Half-width of the per-pixel search window at finer levels.
    pub fine_margin: i32,
}

impl Default for SgmParams {
    fn default() -> Self {
        Self {
            p1: 10,
            p2: 120,
            num_paths: 8,
            census_window: (7, 7),
            lr_threshold: 1.0,
            uniqueness_ratio: 1.05,
            pyramid_levels: None,
            fine_margin: 4,
        }
    }
}

impl SgmParams {
    pub fn validate(&self) -> Result<()> {
        if self.p1 == 0 || self.p1 >= self.p2 {
            return Err(Error::Config(format!(
                "penalties must satisfy 0 < P1 < P2, got P1={} P2={}",
                self.p1, self.p2
            )));
        }
        if self.num_paths != 4 && self.num_paths != 8 {
            return Err(Error::Config(format!(
                "num_paths must be 4 or 8, got {}",
                self.num_paths
            )));
        }
        let (ww, wh) = self.census_window;
        if ww % 2 == 0 || wh % 2 == 0 || ww * wh < 2 || ww * wh - 1 > 64 {
            return Err(Error::Config(format!(
                "census window {ww}x{wh} must be odd-sized with at most 64 neighbor bits"
            )));
        }
        if self.fine_margin < 1 {
            return Err(Error::Config("fine_margin must be at least 1".into()));
        }
        if !(self.lr_threshold >= 0.0) {
            return Err(Error::Config("lr_threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Coarse-to-fine dense matching of an epipolar-aligned pair.
///
/// At the coarsest level the full (scaled) range is searched; each finer
/// level searches `[2 d - m, 2 d + m]` around the upsampled coarse result,
/// with invalid pixels inheriting the union of valid windows in a 5x5
/// coarse neighborhood. Winner selection, uniqueness, subpixel, and the
/// left-right check run at every level.
#[allow(clippy::too_many_arguments)]
pub fn hierarchical_match(
    left: &GrayImage,
    right: &GrayImage,
    mask_l: &Mask,
    mask_r: &Mask,
    d_min: i32,
    d_max: i32,
    params: &SgmParams,
    space: DispSpace,
) -> Result<DisparityMap> {
    params.validate()?;
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::Config(format!(
            "image sizes differ: {}x{} vs {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    if d_min > d_max {
        return Err(Error::EmptyRange { d_min, d_max });
    }
    let (w, h) = (left.width(), left.height());
    if w.min(h) < MIN_PYRAMID_SIDE {
        return Err(Error::ImageTooSmall {
            w,
            h,
            min_side: MIN_PYRAMID_SIDE,
        });
    }

    let max_levels = {
        let mut l = 0usize;
        while (w.min(h) >> (l + 1)) >= MIN_PYRAMID_SIDE {
            l += 1;
        }
        l
    };
    let levels = params.pyramid_levels.unwrap_or(max_levels).min(max_levels);

    let mut pyramid = vec![(left.clone(), mask_l.clone(), right.clone(), mask_r.clone())];
    for _ in 0..levels {
        let (pl, pml, pr, pmr) = pyramid.last().unwrap();
        let (dl, dml) = pyramid::downsample_half(pl, pml);
        let (dr, dmr) = pyramid::downsample_half(pr, pmr);
        pyramid.push((dl, dml, dr, dmr));
    }

    let mut prev_map: Option<DisparityMap> = None;
    for level in (0..=levels).rev() {
        let (img_l, msk_l, img_r, msk_r) = &pyramid[level];
        let scale = 1i64 << level;
        let dl_min = ((d_min as f64) / scale as f64).floor() as i32;
        let dl_max = ((d_max as f64) / scale as f64).ceil() as i32;

        let cl = census_transform_masked(img_l, msk_l, params.census_window)?;
        let cr = census_transform_masked(img_r, msk_r, params.census_window)?;

        let volume = match &prev_map {
            None => compute_cost_volume(&cl, &cr, dl_min, dl_max)?,
            Some(coarse) => {
                let windows = pyramid::propagate_windows(
                    coarse,
                    img_l.width(),
                    img_l.height(),
                    dl_min,
                    dl_max,
                    params.fine_margin,
                );
                compute_cost_volume_windowed(&cl, &cr, dl_min, dl_max, windows)?
            }
        };
        let aggregated = sgm_aggregate(&volume, params);
        let (left_map, _right_map) = select_disparity(&aggregated, params);
        prev_map = Some(left_map);
    }

    let mut result = prev_map.expect("at least one pyramid level");
    result.space = space;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = StdRng::seed_from_u64(seed);
        // smooth-ish random texture: random base plus low-frequency waves
        GrayImage::from_fn(w, h, |x, y| {
            let n: f32 = rng.random_range(0.0..60.0);
            let wave = 90.0 + 60.0 * ((x as f32) * 0.37).sin() * ((y as f32) * 0.23).cos();
            (wave + n).clamp(0.0, 255.0)
        })
    }

    #[test]
    fn zero_shift_matches_at_zero() {
        let left = textured(64, 48, 5);
        let right = left.clone();
        let mask = Mask::all_valid(64, 48);
        let map = hierarchical_match(
            &left,
            &right,
            &mask,
            &mask,
            0,
            8,
            &SgmParams::default(),
            DispSpace::Frame,
        )
        .unwrap();
        let mut checked = 0;
        for y in 8..40 {
            for x in 8..56 {
                assert!(map.is_valid(x, y), "pixel ({x},{y}) invalid");
                assert!(map.get(x, y).abs() <= 0.5);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn circular_shift_recovers_disparity() {
        let w = 96;
        let h = 64;
        let left = textured(w, h, 9);
        let right = GrayImage::from_fn(w, h, |x, y| left.get((x + 4) % w, y));
        let mask = Mask::all_valid(w, h);
        let map = hierarchical_match(
            &left,
            &right,
            &mask,
            &mask,
            0,
            8,
            &SgmParams::default(),
            DispSpace::Frame,
        )
        .unwrap();

        let mut good = 0usize;
        let mut total = 0usize;
        for y in 8..h - 8 {
            for x in 8..w - 16 {
                total += 1;
                if map.is_valid(x, y) && (map.get(x, y) - 4.0).abs() <= 0.5 {
                    good += 1;
                }
            }
        }
        assert!(
            good as f64 >= 0.99 * total as f64,
            "only {good}/{total} pixels near 4.0"
        );
    }

    #[test]
    fn disparities_stay_in_searched_range() {
        let left = textured(64, 48, 3);
        let right = GrayImage::from_fn(64, 48, |x, y| left.get((x + 2) % 64, y));
        let mask = Mask::all_valid(64, 48);
        let map = hierarchical_match(
            &left,
            &right,
            &mask,
            &mask,
            0,
            6,
            &SgmParams::default(),
            DispSpace::Frame,
        )
        .unwrap();
        for v in map.as_slice() {
            if v.is_finite() {
                assert!(*v >= 0.0 && *v <= 6.0, "disparity {v} out of range");
            }
        }
    }

    #[test]
    fn too_small_image_errors() {
        let img = GrayImage::new(16, 16);
        let mask = Mask::all_valid(16, 16);
        assert!(matches!(
            hierarchical_match(
                &img,
                &img,
                &mask,
                &mask,
                0,
                4,
                &SgmParams::default(),
                DispSpace::Frame
            ),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SgmParams {
            p1: 0,
            ..SgmParams::default()
        };
        assert!(p.validate().is_err());
        let p = SgmParams {
            p1: 120,
            p2: 10,
            ..SgmParams::default()
        };
        assert!(p.validate().is_err());
        let p = SgmParams {
            census_window: (6, 7),
            ..SgmParams::default()
        };
        assert!(p.validate().is_err());
        let p = SgmParams {
            census_window: (9, 9),
            ..SgmParams::default()
        };
        assert!(p.validate().is_err(), "81-bit descriptor must be rejected");
        let p = SgmParams {
            num_paths: 6,
            ..SgmParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn lr_check_is_symmetric() {
        // every surviving left pixel must have a reciprocal right partner
        let w = 80;
        let h = 48;
        let left = textured(w, h, 31);
        let right = GrayImage::from_fn(w, h, |x, y| left.get((x + 3) % w, y));
        let mask = Mask::all_valid(w, h);
        let params = SgmParams {
            pyramid_levels: Some(0),
            ..SgmParams::default()
        };
        let cl = census_transform_masked(&left, &mask, params.census_window).unwrap();
        let cr = census_transform_masked(&right, &mask, params.census_window).unwrap();
        let vol = compute_cost_volume(&cl, &cr, 0, 6).unwrap();
        let agg = sgm_aggregate(&vol, &params);
        let (lmap, rmap) = select_disparity(&agg, &params);
        for y in 0..h {
            for x in 0..w {
                if lmap.is_valid(x, y) {
                    let d = lmap.get(x, y);
                    let xr = (x as f64 - d.round() as f64) as i64;
                    assert!(xr >= 0 && (xr as usize) < w);
                    let dr = rmap.get(xr as usize, y);
                    assert!(
                        dr.is_finite() && (d - dr).abs() <= params.lr_threshold,
                        "no reciprocal partner at ({x},{y})"
                    );
                }
            }
        }
    }
}
