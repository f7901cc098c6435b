//! Factor-2 image pyramid and coarse-to-fine search-window propagation.

use super::DisparityMap;
use crate::image::{GrayImage, Mask};

/// Halve an image with a 2x2 box filter. A coarse pixel is valid only when
/// all four source pixels are; odd trailing rows/columns are dropped.
pub fn downsample_half(img: &GrayImage, mask: &Mask) -> (GrayImage, Mask) {
    let w2 = img.width() / 2;
    let h2 = img.height() / 2;
    let mut out = GrayImage::new(w2, h2);
    let mut out_mask = Mask::all_invalid(w2, h2);
    for y in 0..h2 {
        for x in 0..w2 {
            let (x0, y0) = (2 * x, 2 * y);
            let valid = mask.get(x0, y0)
                && mask.get(x0 + 1, y0)
                && mask.get(x0, y0 + 1)
                && mask.get(x0 + 1, y0 + 1);
            if valid {
                let sum = img.get(x0, y0)
                    + img.get(x0 + 1, y0)
                    + img.get(x0, y0 + 1)
                    + img.get(x0 + 1, y0 + 1);
                out.set(x, y, sum * 0.25);
                out_mask.set(x, y, true);
            }
        }
    }
    (out, out_mask)
}

/// Per-pixel search windows for the next finer level.
///
/// A fine pixel whose coarse parent is valid searches `[2d - m, 2d + m]`.
/// Invalid parents inherit the union of valid windows in the surrounding
/// 5x5 coarse neighborhood; failing that, the full level range.
pub fn propagate_windows(
    coarse: &DisparityMap,
    fine_w: usize,
    fine_h: usize,
    d_min: i32,
    d_max: i32,
    margin: i32,
) -> Vec<(i32, i32)> {
    let cw = coarse.width();
    let ch = coarse.height();
    let mut windows = vec![(d_min, d_max); fine_w * fine_h];

    // windows are constant per coarse cell; compute per coarse pixel once
    let mut coarse_windows = vec![(d_min, d_max); cw * ch];
    for cy in 0..ch {
        for cx in 0..cw {
            let win = if coarse.is_valid(cx, cy) {
                let d2 = (2.0 * coarse.get(cx, cy)).round() as i32;
                (d2 - margin, d2 + margin)
            } else {
                let mut lo = i32::MAX;
                let mut hi = i32::MIN;
                for ny in cy.saturating_sub(2)..=(cy + 2).min(ch - 1) {
                    for nx in cx.saturating_sub(2)..=(cx + 2).min(cw - 1) {
                        if coarse.is_valid(nx, ny) {
                            let d2 = (2.0 * coarse.get(nx, ny)).round() as i32;
                            lo = lo.min(d2 - margin);
                            hi = hi.max(d2 + margin);
                        }
                    }
                }
                if lo > hi {
                    (d_min, d_max)
                } else {
                    (lo, hi)
                }
            };
            let clamped = (win.0.max(d_min), win.1.min(d_max));
            coarse_windows[cy * cw + cx] = if clamped.0 > clamped.1 {
                (d_min, d_max)
            } else {
                clamped
            };
        }
    }

    for y in 0..fine_h {
        let cy = (y / 2).min(ch - 1);
        for x in 0..fine_w {
            let cx = (x / 2).min(cw - 1);
            windows[y * fine_w + x] = coarse_windows[cy * cw + cx];
        }
    }
    windows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::DispSpace;

    #[test]
    fn downsample_averages_blocks() {
        let img = GrayImage::from_vec(4, 2, vec![1.0, 3.0, 10.0, 20.0, 5.0, 7.0, 30.0, 40.0]);
        let mask = Mask::all_valid(4, 2);
        let (half, hmask) = downsample_half(&img, &mask);
        assert_eq!(half.width(), 2);
        assert_eq!(half.height(), 1);
        assert_eq!(half.get(0, 0), 4.0);
        assert_eq!(half.get(1, 0), 25.0);
        assert!(hmask.get(0, 0) && hmask.get(1, 0));
    }

    #[test]
    fn downsample_invalidates_partial_blocks() {
        let img = GrayImage::new(4, 4);
        let mut mask = Mask::all_valid(4, 4);
        mask.set(1, 1, false);
        let (_, hmask) = downsample_half(&img, &mask);
        assert!(!hmask.get(0, 0));
        assert!(hmask.get(1, 1));
    }

    #[test]
    fn windows_follow_valid_parents() {
        let mut coarse = DisparityMap::new_invalid(2, 2, DispSpace::Frame);
        coarse.set(0, 0, 3.0);
        coarse.set(1, 0, 5.0);
        coarse.set(0, 1, 3.0);
        coarse.set(1, 1, 3.0);
        let win = propagate_windows(&coarse, 4, 4, 0, 20, 2);
        assert_eq!(win[0], (4, 8)); // fine (0,0) -> coarse (0,0), d=3 -> [6-2, 6+2]
        assert_eq!(win[2], (8, 12)); // fine (2,0) -> coarse (1,0), d=5
    }

    #[test]
    fn invalid_parent_takes_neighborhood_union() {
        let mut coarse = DisparityMap::new_invalid(3, 3, DispSpace::Frame);
        coarse.set(0, 0, 2.0);
        coarse.set(2, 2, 6.0);
        // center parent invalid: union of [4-1, 4+1] and [12-1, 12+1]
        let win = propagate_windows(&coarse, 6, 6, 0, 30, 1);
        assert_eq!(win[2 * 6 + 2], (3, 13));
    }

    #[test]
    fn all_invalid_falls_back_to_full_range() {
        let coarse = DisparityMap::new_invalid(2, 2, DispSpace::Frame);
        let win = propagate_windows(&coarse, 4, 4, -3, 9, 2);
        assert!(win.iter().all(|&w| w == (-3, 9)));
    }
}
