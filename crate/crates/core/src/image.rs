//! Grayscale image and validity-mask containers.
//!
//! Pixels are `f32` gray levels in `[0, 255]`, stored row-major. Continuous
//! pixel coordinates place `(0, 0)` at the top-left pixel center, x right,
//! y down, so integer coordinates hit pixel centers exactly.

/// Row-major grayscale image with `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "pixel buffer length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    /// Build from a generator called per pixel in row-major order.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
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
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample at a continuous coordinate; `None` outside
    /// `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f32> {
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;

        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);

        let a = p00 + fx * (p10 - p00);
        let b = p01 + fx * (p11 - p01);
        Some(a + fy * (b - a))
    }
}

/// Per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn all_valid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn all_invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
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
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Bilinear sample that honors a validity mask: the sample is valid only if
/// every tap with nonzero weight is valid.
pub fn sample_bilinear_masked(img: &GrayImage, mask: &Mask, x: f64, y: f64) -> Option<f32> {
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    let (w, h) = (img.width(), img.height());
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;

    let need = |wgt: f64, mx: usize, my: usize| wgt <= 0.0 || mask.get(mx, my);
    let ok = need((1.0 - fx) * (1.0 - fy), x0, y0)
        && need(fx * (1.0 - fy), x1, y0)
        && need((1.0 - fx) * fy, x0, y1)
        && need(fx * fy, x1, y1);
    if !ok {
        return None;
    }

    let fx = fx as f32;
    let fy = fy as f32;
    let a = img.get(x0, y0) + fx * (img.get(x1, y0) - img.get(x0, y0));
    let b = img.get(x0, y1) + fx * (img.get(x1, y1) - img.get(x0, y1));
    Some(a + fy * (b - a))
}

/// ITU-R BT.601 luma weights used for all color-to-gray conversion.
pub fn rgb_to_luma(r: u8, g: u8, b: u8) -> f32 {
    0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32
}
