//! Matching cost volume.

use rayon::prelude::*;

use super::census::{hamming, CensusImage};
use crate::error::{Error, Result};

/// Per-pixel, per-disparity matching costs in 16-bit storage.
///
/// Index layout is `(y * width + x) * num_disp + (d - d_min)`. Costs outside
/// the image, outside a pixel's search window, or at invalid census pixels
/// hold the saturation value (the descriptor bit count).
#[derive(Debug, Clone)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub d_min: i32,
    pub num_disp: usize,
    pub saturation: u16,
    pub costs: Vec<u16>,
    /// Census validity of the left/right image pixels.
    pub valid_l: Vec<bool>,
    pub valid_r: Vec<bool>,
    /// Optional per-left-pixel inclusive disparity window.
    pub windows: Option<Vec<(i32, i32)>>,
}

impl CostVolume {
    #[inline]
    pub fn d_max(&self) -> i32 {
        self.d_min + self.num_disp as i32 - 1
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, di: usize) -> usize {
        (y * self.width + x) * self.num_disp + di
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize, d: i32) -> u16 {
        self.costs[self.index(x, y, (d - self.d_min) as usize)]
    }

    /// Costs of one pixel across the whole disparity range.
    #[inline]
    pub fn slice(&self, x: usize, y: usize) -> &[u16] {
        let base = (y * self.width + x) * self.num_disp;
        &self.costs[base..base + self.num_disp]
    }

    /// Inclusive search window of a pixel, clamped to the global range.
    #[inline]
    pub fn window(&self, x: usize, y: usize) -> (i32, i32) {
        match &self.windows {
            None => (self.d_min, self.d_max()),
            Some(w) => w[y * self.width + x],
        }
    }
}

/// Hamming cost volume over the full rectangular disparity range.
pub fn compute_cost_volume(
    census_l: &CensusImage,
    census_r: &CensusImage,
    d_min: i32,
    d_max: i32,
) -> Result<CostVolume> {
    build_volume(census_l, census_r, d_min, d_max, None)
}

/// Hamming cost volume with a per-pixel disparity window; costs outside a
/// pixel's window are saturated and the winner is never chosen there.
pub fn compute_cost_volume_windowed(
    census_l: &CensusImage,
    census_r: &CensusImage,
    d_min: i32,
    d_max: i32,
    windows: Vec<(i32, i32)>,
) -> Result<CostVolume> {
    build_volume(census_l, census_r, d_min, d_max, Some(windows))
}

fn build_volume(
    census_l: &CensusImage,
    census_r: &CensusImage,
    d_min: i32,
    d_max: i32,
    windows: Option<Vec<(i32, i32)>>,
) -> Result<CostVolume> {
    if d_min > d_max {
        return Err(Error::EmptyRange { d_min, d_max });
    }
    if census_l.width() != census_r.width() || census_l.height() != census_r.height() {
        return Err(Error::Config(format!(
            "census image sizes differ: {}x{} vs {}x{}",
            census_l.width(),
            census_l.height(),
            census_r.width(),
            census_r.height()
        )));
    }
    if census_l.window() != census_r.window() {
        return Err(Error::Config("census windows differ between views".into()));
    }
    let (w, h) = (census_l.width(), census_l.height());
    if let Some(win) = &windows {
        if win.len() != w * h {
            return Err(Error::Config("window plane size mismatch".into()));
        }
    }

    let num_disp = (d_max - d_min + 1) as usize;
    let saturation = census_l.bit_count() as u16;
    let mut costs = vec![saturation; w * h * num_disp];

    costs
        .par_chunks_mut(w * num_disp)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                if !census_l.is_valid(x, y) {
                    continue;
                }
                let (lo, hi) = match &windows {
                    None => (d_min, d_max),
                    Some(win) => win[y * w + x],
                };
                let desc_l = census_l.descriptor(x, y);
                let base = x * num_disp;
                for d in lo.max(d_min)..=hi.min(d_max) {
                    let xr = x as i64 - d as i64;
                    if xr < 0 || xr >= w as i64 {
                        continue;
                    }
                    let xr = xr as usize;
                    if !census_r.is_valid(xr, y) {
                        continue;
                    }
                    let c = hamming(desc_l, census_r.descriptor(xr, y)) as u16;
                    row[base + (d - d_min) as usize] = c;
                }
            }
        });

    Ok(CostVolume {
        width: w,
        height: h,
        d_min,
        num_disp,
        saturation,
        costs,
        valid_l: census_l.valid_slice().to_vec(),
        valid_r: census_r.valid_slice().to_vec(),
        windows,
    })
}
