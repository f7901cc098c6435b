//! Pinhole camera model, pose algebra, and projection primitives.
//!
//! Conventions: world units are meters; pixel coordinates are continuous with
//! `(0, 0)` at the top-left pixel center, x right, y down. The principal point
//! sits at `(w/2, h/2)`. Rotations are world-to-camera matrices whose rows are
//! the camera axes expressed in world coordinates; the third row is the
//! principal ray.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole intrinsics: focal length in pixels and image size. The principal
/// point is fixed at the image center; no skew or distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(focal_px: f64, width: usize, height: usize) -> Result<Self> {
        if !(focal_px > 0.0) {
            return Err(Error::Config(format!("focal length must be positive, got {focal_px}")));
        }
        if width < 2 || height < 2 {
            return Err(Error::Config(format!("image size {width}x{height} too small")));
        }
        Ok(Self {
            focal_px,
            width,
            height,
        })
    }

    #[inline]
    pub fn cx(&self) -> f64 {
        self.width as f64 / 2.0
    }

    #[inline]
    pub fn cy(&self) -> f64 {
        self.height as f64 / 2.0
    }

    /// Calibration matrix K.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal_px, 0.0, self.cx(),
            0.0, self.focal_px, self.cy(),
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form K^-1.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let inv_f = 1.0 / self.focal_px;
        Matrix3::new(
            inv_f, 0.0, -self.cx() * inv_f,
            0.0, inv_f, -self.cy() * inv_f,
            0.0, 0.0, 1.0,
        )
    }
}

/// World-to-camera rotation plus camera center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl CameraPose {
    /// Validates that `rotation` is a proper rotation (orthonormal, det +1).
    pub fn new(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        let rtr = rotation * rotation.transpose();
        let dev = (rtr - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::Config(format!(
                "rotation is not orthonormal (max |R R^T - I| = {dev:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Config(format!("rotation determinant {det} != +1")));
        }
        Ok(Self { rotation, center })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            center: Vector3::zeros(),
        }
    }

    /// Camera viewing direction in world coordinates (third rotation row).
    pub fn principal_ray(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// World point to camera-frame coordinates: `R (X - c)`.
    #[inline]
    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (point - self.center)
    }

    /// Camera-frame coordinates back to a world point: `R^T X_c + c`.
    #[inline]
    pub fn camera_to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * cam + self.center
    }
}

/// Intrinsics and pose of one physical camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: CameraPose,
}

/// Direction in the camera frame. Not necessarily unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Ray {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn normalized(self) -> Self {
        let n = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        Self::new(self.x / n, self.y / n, self.z / n)
    }
}

/// Project a world point through a camera view onto the image plane.
pub fn project_point(view: &CameraView, point: &Vector3<f64>) -> Result<(f64, f64)> {
    let cam = view.pose.world_to_camera(point);
    if cam.z <= 0.0 {
        return Err(Error::BehindCamera { z: cam.z });
    }
    let f = view.intrinsics.focal_px;
    Ok((
        f * cam.x / cam.z + view.intrinsics.cx(),
        f * cam.y / cam.z + view.intrinsics.cy(),
    ))
}

/// Back-project a pixel to the camera-frame ray with unit z.
#[inline]
pub fn pixel_to_ray(intr: &Intrinsics, x: f64, y: f64) -> Ray {
    Ray::new(
        (x - intr.cx()) / intr.focal_px,
        (y - intr.cy()) / intr.focal_px,
        1.0,
    )
}

/// Project a camera-frame ray onto the image plane. Inverse of
/// [`pixel_to_ray`] up to ray scale.
pub fn ray_to_pixel(intr: &Intrinsics, ray: &Ray) -> Result<(f64, f64)> {
    if ray.z <= 0.0 {
        return Err(Error::BehindCamera { z: ray.z });
    }
    Ok((
        intr.focal_px * ray.x / ray.z + intr.cx(),
        intr.focal_px * ray.y / ray.z + intr.cy(),
    ))
}

/// Rotation about the world Y axis, as a world-to-camera matrix. Positive
/// angles turn the principal ray toward +X.
pub fn rotation_y(angle_rad: f64) -> Matrix3<f64> {
    let (s, c) = angle_rad.sin_cos();
    Matrix3::new(
        c, 0.0, -s,
        0.0, 1.0, 0.0,
        s, 0.0, c,
    )
}

/// Rotation about the world X axis (world-to-camera).
pub fn rotation_x(angle_rad: f64) -> Matrix3<f64> {
    let (s, c) = angle_rad.sin_cos();
    Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, c, s,
        0.0, -s, c,
    )
}

/// Rotation about the world Z axis (world-to-camera).
pub fn rotation_z(angle_rad: f64) -> Matrix3<f64> {
    let (s, c) = angle_rad.sin_cos();
    Matrix3::new(
        c, s, 0.0,
        -s, c, 0.0,
        0.0, 0.0, 1.0,
    )
}
