//! Census transform: per-pixel bit descriptors compared by Hamming distance.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};

/// Census descriptors for one image. Bit `i` of a descriptor is set iff the
/// `i`-th window neighbor (row-major, center excluded) is strictly darker
/// than the center pixel. Border pixels, and pixels whose window touches an
/// invalid sample, carry no descriptor.
#[derive(Debug, Clone)]
pub struct CensusImage {
    width: usize,
    height: usize,
    window: (usize, usize),
    bits: Vec<u64>,
    valid: Vec<bool>,
}

impl CensusImage {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    /// Number of neighbor bits in each descriptor.
    pub fn bit_count(&self) -> u32 {
        (self.window.0 * self.window.1 - 1) as u32
    }

    #[inline]
    pub fn descriptor(&self, x: usize, y: usize) -> u64 {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_slice(&self) -> &[bool] {
        &self.valid
    }
}

/// Hamming distance between two descriptors.
#[inline]
pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Census transform treating every pixel as valid.
pub fn census_transform(image: &GrayImage, window: (usize, usize)) -> Result<CensusImage> {
    census_transform_masked(
        image,
        &Mask::all_valid(image.width(), image.height()),
        window,
    )
}

/// Census transform over a masked image. A descriptor is valid only when the
/// whole window lies inside the image and every sample in it is valid.
pub fn census_transform_masked(
    image: &GrayImage,
    mask: &Mask,
    window: (usize, usize),
) -> Result<CensusImage> {
    let (ww, wh) = window;
    let (w, h) = (image.width(), image.height());
    if ww % 2 == 0 || wh % 2 == 0 {
        return Err(Error::WindowTooLarge {
            ww,
            wh,
            iw: w,
            ih: h,
            reason: "window sides must be odd",
        });
    }
    if ww * wh - 1 > 64 {
        return Err(Error::WindowTooLarge {
            ww,
            wh,
            iw: w,
            ih: h,
            reason: "descriptor exceeds 64 bits",
        });
    }
    if ww > w || wh > h {
        return Err(Error::WindowTooLarge {
            ww,
            wh,
            iw: w,
            ih: h,
            reason: "window does not fit inside the image",
        });
    }

    let rx = ww / 2;
    let ry = wh / 2;
    let mut bits = vec![0u64; w * h];
    let mut valid = vec![false; w * h];

    bits.par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (bit_row, valid_row))| {
            if y < ry || y + ry >= h {
                return;
            }
            'pixel: for x in rx..w - rx {
                let center = image.get(x, y);
                let mut desc = 0u64;
                let mut bit = 0u32;
                for ny in y - ry..=y + ry {
                    for nx in x - rx..=x + rx {
                        if nx == x && ny == y {
                            continue;
                        }
                        if !mask.get(nx, ny) {
                            continue 'pixel;
                        }
                        if image.get(nx, ny) < center {
                            desc |= 1u64 << bit;
                        }
                        bit += 1;
                    }
                }
                if mask.get(x, y) {
                    bit_row[x] = desc;
                    valid_row[x] = true;
                }
            }
        });

    Ok(CensusImage {
        width: w,
        height: h,
        window,
        bits,
        valid,
    })
}
