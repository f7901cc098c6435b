//! Winner selection: argmin with tie-break, uniqueness, subpixel
//! refinement, and the left-right consistency check.

use rayon::prelude::*;

use super::volume::CostVolume;
use super::{DispSpace, DisparityMap, SgmParams, INVALID_DISPARITY};

/// Parabola-fit offset from three costs around the winner; zero when the
/// neighbors are symmetric, clamped to half a pixel.
pub fn subpixel_offset(c_minus: u16, c_center: u16, c_plus: u16) -> f32 {
    let den = c_minus as i64 + c_plus as i64 - 2 * c_center as i64;
    if den <= 0 {
        return 0.0;
    }
    let num = (c_minus as i64 - c_plus as i64) as f64;
    (num / (2.0 * den as f64)).clamp(-0.5, 0.5) as f32
}

struct Winner {
    #[cfg_attr(not(test), allow(dead_code))]
    d: i32,
    refined: f32,
}

/// Argmin over `[lo, hi]` (smallest disparity wins ties), uniqueness test
/// against non-adjacent disparities, and parabola refinement away from the
/// window borders. `cost_at(d)` returns `None` where no cost is available.
fn pick_winner(
    lo: i32,
    hi: i32,
    uniqueness_ratio: f64,
    mut cost_at: impl FnMut(i32) -> Option<u16>,
) -> Option<Winner> {
    let mut best: Option<(i32, u16)> = None;
    for d in lo..=hi {
        if let Some(c) = cost_at(d) {
            if best.map_or(true, |(_, bc)| c < bc) {
                best = Some((d, c));
            }
        }
    }
    let (d_best, c_best) = best?;

    let mut second: Option<u16> = None;
    for d in lo..=hi {
        if (d - d_best).abs() <= 1 {
            continue;
        }
        if let Some(c) = cost_at(d) {
            if second.map_or(true, |s| c < s) {
                second = Some(c);
            }
        }
    }
    if let Some(s) = second {
        if s == c_best || (s as f64) < uniqueness_ratio * (c_best as f64) {
            return None;
        }
    }

    let mut refined = d_best as f32;
    if d_best > lo && d_best < hi {
        if let (Some(cm), Some(cp)) = (cost_at(d_best - 1), cost_at(d_best + 1)) {
            refined += subpixel_offset(cm, c_best, cp);
        }
    }
    Some(Winner { d: d_best, refined })
}

/// Winner-take-all over an aggregated volume, producing left and right
/// disparity maps that have both passed the left-right consistency check.
///
/// The right map is read out of the same volume via the re-projection
/// `C_r(x, d) = C_l(x + d, d)`.
pub fn select_disparity(agg: &CostVolume, params: &SgmParams) -> (DisparityMap, DisparityMap) {
    let (w, h) = (agg.width, agg.height);
    let mut left_raw = DisparityMap::new_invalid(w, h, DispSpace::Frame);
    let mut right_raw = DisparityMap::new_invalid(w, h, DispSpace::Frame);

    left_raw
        .as_mut_slice()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                if !agg.valid_l[y * w + x] {
                    continue;
                }
                let (lo, hi) = agg.window(x, y);
                let (lo, hi) = (lo.max(agg.d_min), hi.min(agg.d_max()));
                if lo > hi {
                    continue;
                }
                let slice = agg.slice(x, y);
                let winner = pick_winner(lo, hi, params.uniqueness_ratio, |d| {
                    Some(slice[(d - agg.d_min) as usize])
                });
                if let Some(win) = winner {
                    row[x] = win.refined;
                }
            }
        });

    right_raw
        .as_mut_slice()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                if !agg.valid_r[y * w + x] {
                    continue;
                }
                let cost_at = |d: i32| -> Option<u16> {
                    let xl = x as i64 + d as i64;
                    if xl < 0 || xl >= w as i64 {
                        return None;
                    }
                    let xl = xl as usize;
                    let (lo, hi) = agg.window(xl, y);
                    if d < lo || d > hi || !agg.valid_l[y * w + xl] {
                        return None;
                    }
                    Some(agg.cost(xl, y, d))
                };
                let winner = pick_winner(agg.d_min, agg.d_max(), params.uniqueness_ratio, cost_at);
                if let Some(win) = winner {
                    row[x] = win.refined;
                }
            }
        });

    // left-right consistency, evaluated against the raw partner maps
    let mut left = left_raw.clone();
    let mut right = right_raw.clone();
    left.as_mut_slice()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let d = row[x];
                if !d.is_finite() {
                    continue;
                }
                let xr = x as i64 - d.round() as i64;
                let ok = xr >= 0 && xr < w as i64 && {
                    let dr = right_raw.get(xr as usize, y);
                    dr.is_finite() && (d - dr).abs() <= params.lr_threshold
                };
                if !ok {
                    row[x] = INVALID_DISPARITY;
                }
            }
        });
    right
        .as_mut_slice()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let d = row[x];
                if !d.is_finite() {
                    continue;
                }
                let xl = x as i64 + d.round() as i64;
                let ok = xl >= 0 && xl < w as i64 && {
                    let dl = left_raw.get(xl as usize, y);
                    dl.is_finite() && (d - dl).abs() <= params.lr_threshold
                };
                if !ok {
                    row[x] = INVALID_DISPARITY;
                }
            }
        });

    (left, right)
}
