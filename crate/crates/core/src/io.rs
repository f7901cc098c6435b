//! File formats: grayscale PNG, PFM float maps, and the JSON camera and
//! stereo-geometry descriptions.
//!
//! Camera files hold `{focal_px, width, height, rotation, center}` per view,
//! with the rotation as nine row-major world-to-camera entries and the
//! center in meters. PFM files are grayscale `Pf`, little-endian (negative
//! scale), rows bottom-up; invalid disparities are written as `-inf`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, CameraView, Intrinsics};
use crate::image::{rgb_to_luma, GrayImage, Mask};
use crate::matcher::{DispSpace, DisparityMap, INVALID_DISPARITY};
use crate::rectify::{HomographyPair, RectifyingFrame};
use crate::spherical::SphericalGrid;
use crate::triangulate::{StereoGeometry, DEFAULT_MAX_DEPTH_M};

// ---------------------------------------------------------------- images

/// Load a PNG as grayscale; color inputs are reduced with BT.601 luma.
pub fn load_gray_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = GrayImage::new(w, h);
    for (x, y, p) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, rgb_to_luma(p[0], p[1], p[2]));
    }
    Ok(out)
}

/// Save a grayscale image, rounding to 8 bits.
pub fn save_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    let buf: Vec<u8> = img
        .as_slice()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    image::save_buffer(
        path,
        &buf,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
    )?;
    Ok(())
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let buf: Vec<u8> = mask.as_slice().iter().map(|v| if *v { 255 } else { 0 }).collect();
    image::save_buffer(
        path,
        &buf,
        mask.width() as u32,
        mask.height() as u32,
        image::ExtendedColorType::L8,
    )?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut mask = Mask::all_invalid(w, h);
    for (x, y, p) in img.enumerate_pixels() {
        mask.set(x as usize, y as usize, p[0] > 127);
    }
    Ok(mask)
}

// ------------------------------------------------------------------ PFM

/// Write a float map as grayscale PFM (little-endian, rows bottom-up).
pub fn write_pfm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "Pf\n{} {}\n-1.0\n", img.width(), img.height())?;
    for y in (0..img.height()).rev() {
        for v in img.row(y) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a grayscale little-endian PFM.
pub fn read_pfm(path: &Path) -> Result<GrayImage> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // header: three whitespace-separated tokens, each ended by one blank
    let mut token = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        if reader.read(&mut byte)? == 0 {
            return Err(Error::MalformedPfm("truncated header".into()));
        }
        header.push(byte[0]);
        if byte[0].is_ascii_whitespace() {
            if !token.is_empty() {
                tokens.push(String::from_utf8_lossy(&token).into_owned());
                token.clear();
            }
        } else {
            token.push(byte[0]);
        }
    }
    if tokens[0] != "Pf" {
        return Err(Error::MalformedPfm(format!(
            "expected grayscale 'Pf', got '{}'",
            tokens[0]
        )));
    }
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| Error::MalformedPfm(format!("bad width '{}'", tokens[1])))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| Error::MalformedPfm(format!("bad height '{}'", tokens[2])))?;
    let scale: f32 = tokens[3]
        .parse()
        .map_err(|_| Error::MalformedPfm(format!("bad scale '{}'", tokens[3])))?;
    if scale >= 0.0 {
        return Err(Error::MalformedPfm(
            "big-endian PFM is not supported".into(),
        ));
    }

    let mut payload = vec![0u8; w * h * 4];
    reader
        .read_exact(&mut payload)
        .map_err(|_| Error::MalformedPfm("payload shorter than the header promises".into()))?;
    let mut img = GrayImage::new(w, h);
    for y in 0..h {
        let src_row = h - 1 - y;
        for x in 0..w {
            let off = (src_row * w + x) * 4;
            img.set(
                x,
                y,
                f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()),
            );
        }
    }
    Ok(img)
}

/// Store a disparity map as PFM, invalid pixels as `-inf`.
pub fn write_disparity_pfm(map: &DisparityMap, path: &Path) -> Result<()> {
    let img = GrayImage::from_vec(map.width(), map.height(), map.as_slice().to_vec());
    write_pfm(&img, path)
}

/// Load a disparity map from PFM; non-finite samples become invalid.
pub fn read_disparity_pfm(path: &Path, space: DispSpace) -> Result<DisparityMap> {
    let img = read_pfm(path)?;
    let data = img
        .as_slice()
        .iter()
        .map(|v| if v.is_finite() { *v } else { INVALID_DISPARITY })
        .collect();
    Ok(DisparityMap::from_vec(img.width(), img.height(), data, space))
}

/// 8-bit visualization of a disparity map (valid range stretched to 1..255,
/// invalid pixels black).
pub fn disparity_visualization(map: &DisparityMap) -> GrayImage {
    let valid: Vec<f32> = map.as_slice().iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = valid.iter().fold((f32::MAX, f32::MIN), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    let span = if valid.is_empty() || hi <= lo { 1.0 } else { hi - lo };
    GrayImage::from_fn(map.width(), map.height(), |x, y| {
        let v = map.get(x, y);
        if v.is_finite() {
            1.0 + 254.0 * (v - lo) / span
        } else {
            0.0
        }
    })
}

// -------------------------------------------------------------- cameras

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraJson {
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    /// Camera center in world coordinates, meters.
    pub center: [f64; 3],
}

impl CameraJson {
    pub fn from_view(view: &CameraView) -> CameraJson {
        let r = &view.pose.rotation;
        CameraJson {
            focal_px: view.intrinsics.focal_px,
            width: view.intrinsics.width,
            height: view.intrinsics.height,
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            center: [view.pose.center.x, view.pose.center.y, view.pose.center.z],
        }
    }

    pub fn to_view(&self) -> Result<CameraView> {
        Ok(CameraView {
            intrinsics: Intrinsics::new(self.focal_px, self.width, self.height)?,
            pose: CameraPose::new(
                Matrix3::from_row_slice(&self.rotation),
                Vector3::new(self.center[0], self.center[1], self.center[2]),
            )?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StereoCamerasJson {
    pub left: CameraJson,
    pub right: CameraJson,
}

pub fn write_cameras(path: &Path, left: &CameraView, right: &CameraView) -> Result<()> {
    let doc = StereoCamerasJson {
        left: CameraJson::from_view(left),
        right: CameraJson::from_view(right),
    };
    write_json(path, &doc)
}

pub fn read_cameras(path: &Path) -> Result<(CameraView, CameraView)> {
    let doc: StereoCamerasJson = read_json(path)?;
    Ok((doc.left.to_view()?, doc.right.to_view()?))
}

// ------------------------------------------------------- geometry sidecar

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridJson {
    pub scale: f64,
    pub out_w: usize,
    pub out_h: usize,
    pub lambda_extent: f64,
    pub phi_extent: f64,
    pub u0: f64,
    pub v0: f64,
}

impl GridJson {
    pub fn from_grid(g: &SphericalGrid) -> GridJson {
        GridJson {
            scale: g.scale,
            out_w: g.out_w,
            out_h: g.out_h,
            lambda_extent: g.lambda_extent,
            phi_extent: g.phi_extent,
            u0: g.u0,
            v0: g.v0,
        }
    }

    pub fn to_grid(&self) -> SphericalGrid {
        SphericalGrid {
            scale: self.scale,
            out_w: self.out_w,
            out_h: self.out_h,
            lambda_extent: self.lambda_extent,
            phi_extent: self.phi_extent,
            u0: self.u0,
            v0: self.v0,
        }
    }
}

/// Sidecar written by rectification and consumed by triangulation: the
/// rectifying frame, shared intrinsics, homographies, and (in spherical
/// mode) the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeomJson {
    pub rotation: [f64; 9],
    pub principal_sum: [f64; 3],
    pub baseline_m: f64,
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    pub left_center: [f64; 3],
    pub h_left: [f64; 9],
    pub h_right: [f64; 9],
    pub offset: [f64; 2],
    pub grid: Option<GridJson>,
    pub max_depth_m: f64,
}

fn mat_to_array(m: &Matrix3<f64>) -> [f64; 9] {
    [
        m[(0, 0)], m[(0, 1)], m[(0, 2)],
        m[(1, 0)], m[(1, 1)], m[(1, 2)],
        m[(2, 0)], m[(2, 1)], m[(2, 2)],
    ]
}

impl GeomJson {
    pub fn new(
        frame: &RectifyingFrame,
        homographies: &HomographyPair,
        left_center: Vector3<f64>,
        grid: Option<&SphericalGrid>,
        max_depth_m: f64,
    ) -> GeomJson {
        GeomJson {
            rotation: mat_to_array(&frame.rotation),
            principal_sum: [
                frame.principal_sum.x,
                frame.principal_sum.y,
                frame.principal_sum.z,
            ],
            baseline_m: frame.baseline_m,
            focal_px: homographies.intrinsics.focal_px,
            width: homographies.intrinsics.width,
            height: homographies.intrinsics.height,
            left_center: [left_center.x, left_center.y, left_center.z],
            h_left: mat_to_array(&homographies.h_left),
            h_right: mat_to_array(&homographies.h_right),
            offset: [homographies.offset.0, homographies.offset.1],
            grid: grid.map(GridJson::from_grid),
            max_depth_m,
        }
    }

    pub fn to_geometry(&self) -> Result<StereoGeometry> {
        Ok(StereoGeometry {
            baseline_m: self.baseline_m,
            intrinsics: Intrinsics::new(self.focal_px, self.width, self.height)?,
            frame: RectifyingFrame {
                rotation: Matrix3::from_row_slice(&self.rotation),
                principal_sum: Vector3::new(
                    self.principal_sum[0],
                    self.principal_sum[1],
                    self.principal_sum[2],
                ),
                baseline_m: self.baseline_m,
            },
            left_center: Vector3::new(
                self.left_center[0],
                self.left_center[1],
                self.left_center[2],
            ),
            grid: self.grid.as_ref().map(GridJson::to_grid),
            max_depth_m: self.max_depth_m,
        })
    }
}

pub fn default_max_depth() -> f64 {
    DEFAULT_MAX_DEPTH_M
}

// ----------------------------------------------------------------- JSON

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
