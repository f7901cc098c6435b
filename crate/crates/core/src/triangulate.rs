//! Disparity-to-depth conversion, point cloud assembly, and PLY I/O.
//!
//! Depth follows `Z = b f / d` in the rectified frame. Spherical disparity
//! maps are first taken back to continuous rectified-frame coordinates
//! through the exact inverse grid mapping, so the same depth formula applies
//! unchanged.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::image::GrayImage;
use crate::matcher::{DispSpace, DisparityMap};
use crate::rectify::RectifyingFrame;
use crate::spherical::{sphere_pixel_to_frame, SphericalGrid};

/// Depth cap: disparities smaller than `b f / max_depth_m` are treated as
/// points at infinity and rejected.
pub const DEFAULT_MAX_DEPTH_M: f64 = 1e4;

/// World-frame 3D points with optional per-point color.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Append another cloud, dropping colors unless both sides carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        if self.is_empty() {
            self.colors = other.colors.as_ref().map(|_| Vec::new());
        }
        match (self.colors.is_some(), other.colors.is_some()) {
            (true, true) => self
                .colors
                .as_mut()
                .unwrap()
                .extend_from_slice(other.colors.as_ref().unwrap()),
            (true, false) => self.colors = None,
            _ => {}
        }
        self.points.extend_from_slice(&other.points);
    }
}

/// Everything needed to turn a disparity map into world points.
#[derive(Debug, Clone)]
pub struct StereoGeometry {
    /// Baseline length in meters.
    pub baseline_m: f64,
    /// Shared intrinsics of the rectified pair.
    pub intrinsics: Intrinsics,
    /// Rectifying rotation (world to rectified frame).
    pub frame: RectifyingFrame,
    /// Left camera center in world coordinates.
    pub left_center: Vector3<f64>,
    /// Present when the disparity map lives in spherical pixels.
    pub grid: Option<SphericalGrid>,
    /// Depth cap for near-zero disparities.
    pub max_depth_m: f64,
}

impl StereoGeometry {
    /// Smallest accepted disparity.
    pub fn min_disparity(&self) -> f64 {
        self.baseline_m * self.intrinsics.focal_px / self.max_depth_m
    }
}

/// `Z = b f / d`. Rejects disparities at or below the infinity cutoff.
pub fn disparity_to_depth(geom: &StereoGeometry, d: f64) -> Result<f64> {
    if !(d > geom.min_disparity()) {
        return Err(Error::NonPositiveDisparity { d });
    }
    Ok(geom.baseline_m * geom.intrinsics.focal_px / d)
}

/// Triangulate one rectified-frame pixel with disparity `d` into a world
/// point: depth from the disparity, lateral coordinates from the pinhole
/// model, then out of the rectified frame via the rectifying rotation.
pub fn triangulate_frame_pixel(
    geom: &StereoGeometry,
    x: f64,
    y: f64,
    d: f64,
) -> Result<Vector3<f64>> {
    let z = disparity_to_depth(geom, d)?;
    let f = geom.intrinsics.focal_px;
    let rect = Vector3::new(
        (x - geom.intrinsics.cx()) * z / f,
        (y - geom.intrinsics.cy()) * z / f,
        z,
    );
    Ok(geom.left_center + geom.frame.rotation.transpose() * rect)
}

fn push_point(
    points: &mut Vec<[f32; 3]>,
    colors: &mut Option<Vec<[u8; 3]>>,
    p: Vector3<f64>,
    color_img: Option<&GrayImage>,
    x: usize,
    y: usize,
) {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return;
    }
    points.push([p.x as f32, p.y as f32, p.z as f32]);
    if let (Some(c), Some(img)) = (colors.as_mut(), color_img) {
        let v = img.get(x.min(img.width() - 1), y.min(img.height() - 1));
        let g = v.round().clamp(0.0, 255.0) as u8;
        c.push([g, g, g]);
    }
}

/// Triangulate a frame-space disparity map. Invalid pixels and disparities
/// beyond the depth cap are skipped.
pub fn frame_disparity_cloud(
    disp: &DisparityMap,
    geom: &StereoGeometry,
    colors: Option<&GrayImage>,
) -> Result<PointCloud> {
    if disp.space != DispSpace::Frame {
        return Err(Error::Config(
            "disparity map is not tagged as frame-space".into(),
        ));
    }
    let w = disp.width();
    let rows: Vec<(Vec<[f32; 3]>, Option<Vec<[u8; 3]>>)> = (0..disp.height())
        .into_par_iter()
        .map(|y| {
            let mut pts = Vec::new();
            let mut cols = colors.map(|_| Vec::new());
            for x in 0..w {
                let d = disp.get(x, y);
                if !d.is_finite() {
                    continue;
                }
                if let Ok(p) = triangulate_frame_pixel(geom, x as f64, y as f64, d as f64) {
                    push_point(&mut pts, &mut cols, p, colors, x, y);
                }
            }
            (pts, cols)
        })
        .collect();
    Ok(collect_rows(rows, colors.is_some()))
}

/// Triangulate a spherical-space disparity map.
///
/// The left sample `(u, v)` and its right match `(u - d, v)` are mapped back
/// to continuous rectified-frame coordinates; their x difference is the
/// frame disparity, after which the frame path applies verbatim.
pub fn spherical_disparity_cloud(
    disp: &DisparityMap,
    geom: &StereoGeometry,
    colors: Option<&GrayImage>,
) -> Result<PointCloud> {
    if disp.space != DispSpace::Spherical {
        return Err(Error::Config(
            "disparity map is not tagged as spherical-space".into(),
        ));
    }
    let grid = geom.grid.as_ref().ok_or_else(|| {
        Error::Config("spherical triangulation requires the grid in the geometry".into())
    })?;
    let w = disp.width();
    let intr = geom.intrinsics;
    let rows: Vec<(Vec<[f32; 3]>, Option<Vec<[u8; 3]>>)> = (0..disp.height())
        .into_par_iter()
        .map(|y| {
            let mut pts = Vec::new();
            let mut cols = colors.map(|_| Vec::new());
            for x in 0..w {
                let ds = disp.get(x, y);
                if !ds.is_finite() {
                    continue;
                }
                let left = sphere_pixel_to_frame(grid, &intr, x as f64, y as f64);
                let right = sphere_pixel_to_frame(grid, &intr, x as f64 - ds as f64, y as f64);
                let ((xl, yl), (xr, _yr)) = match (left, right) {
                    (Ok(l), Ok(r)) => (l, r),
                    _ => continue,
                };
                let d = xl - xr;
                if let Ok(p) = triangulate_frame_pixel(geom, xl, yl, d) {
                    push_point(&mut pts, &mut cols, p, colors, x, y);
                }
            }
            (pts, cols)
        })
        .collect();
    Ok(collect_rows(rows, colors.is_some()))
}

fn collect_rows(
    rows: Vec<(Vec<[f32; 3]>, Option<Vec<[u8; 3]>>)>,
    colored: bool,
) -> PointCloud {
    let mut cloud = PointCloud {
        points: Vec::new(),
        colors: colored.then(Vec::new),
    };
    for (pts, cols) in rows {
        cloud.points.extend(pts);
        if let (Some(dst), Some(src)) = (cloud.colors.as_mut(), cols) {
            dst.extend(src);
        }
    }
    cloud
}

/// Write a binary little-endian PLY: float32 x/y/z plus optional uchar RGB.
pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.points.len()
    )?;
    out.write_all(b"property float x\nproperty float y\nproperty float z\n")?;
    if cloud.colors.is_some() {
        out.write_all(b"property uchar red\nproperty uchar green\nproperty uchar blue\n")?;
    }
    out.write_all(b"end_header\n")?;
    match &cloud.colors {
        None => {
            for p in &cloud.points {
                for c in p {
                    out.write_all(&c.to_le_bytes())?;
                }
            }
        }
        Some(colors) => {
            for (p, c) in cloud.points.iter().zip(colors) {
                for v in p {
                    out.write_all(&v.to_le_bytes())?;
                }
                out.write_all(c)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a PLY produced by [`write_ply`] (or any file matching that layout).
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();

    let mut read_line = |reader: &mut BufReader<File>| -> Result<String> {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            return Err(Error::MalformedPly("unexpected end of header".into()));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut reader)? != "ply" {
        return Err(Error::MalformedPly("missing 'ply' magic".into()));
    }
    if read_line(&mut reader)? != "format binary_little_endian 1.0" {
        return Err(Error::MalformedPly(
            "only binary_little_endian 1.0 is supported".into(),
        ));
    }

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let l = read_line(&mut reader)?;
        if l == "end_header" {
            break;
        }
        if l.starts_with("comment") {
            continue;
        }
        if let Some(rest) = l.strip_prefix("element vertex ") {
            vertex_count = Some(
                rest.parse()
                    .map_err(|_| Error::MalformedPly(format!("bad vertex count '{rest}'")))?,
            );
        } else if l.starts_with("element ") {
            return Err(Error::MalformedPly(format!("unsupported element '{l}'")));
        } else if let Some(rest) = l.strip_prefix("property ") {
            properties.push(rest.to_string());
        } else {
            return Err(Error::MalformedPly(format!("unexpected header line '{l}'")));
        }
    }

    let n = vertex_count.ok_or_else(|| Error::MalformedPly("no vertex element".into()))?;
    let colored = match properties.as_slice() {
        [x, y, z] if x == "float x" && y == "float y" && z == "float z" => false,
        [x, y, z, r, g, b]
            if x == "float x"
                && y == "float y"
                && z == "float z"
                && r == "uchar red"
                && g == "uchar green"
                && b == "uchar blue" =>
        {
            true
        }
        other => {
            return Err(Error::MalformedPly(format!(
                "unsupported property layout {other:?}"
            )))
        }
    };

    let stride = if colored { 15 } else { 12 };
    let mut payload = vec![0u8; n * stride];
    reader.read_exact(&mut payload).map_err(|_| {
        Error::MalformedPly(format!("payload shorter than {n} vertices"))
    })?;

    let mut points = Vec::with_capacity(n);
    let mut colors = colored.then(|| Vec::with_capacity(n));
    for chunk in payload.chunks_exact(stride) {
        let p = [
            f32::from_le_bytes(chunk[0..4].try_into().unwrap()),
            f32::from_le_bytes(chunk[4..8].try_into().unwrap()),
            f32::from_le_bytes(chunk[8..12].try_into().unwrap()),
        ];
        points.push(p);
        if let Some(c) = colors.as_mut() {
            c.push([chunk[12], chunk[13], chunk[14]]);
        }
    }
    Ok(PointCloud { points, colors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_point, CameraPose, CameraView};
    use crate::rectify::build_rectifying_rotation;
    use crate::spherical::frame_pixel_to_sphere;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn canonical_geometry(b: f64, f: f64, w: usize, h: usize) -> StereoGeometry {
        let pose_l = CameraPose::identity();
        let pose_r = CameraPose::new(Matrix3::identity(), Vector3::new(b, 0.0, 0.0)).unwrap();
        let frame = build_rectifying_rotation(&pose_l, &pose_r).unwrap();
        StereoGeometry {
            baseline_m: b,
            intrinsics: Intrinsics::new(f, w, h).unwrap(),
            frame,
            left_center: Vector3::zeros(),
            grid: None,
            max_depth_m: DEFAULT_MAX_DEPTH_M,
        }
    }

    #[test]
    fn depth_formula() {
        let geom = canonical_geometry(1.0, 1000.0, 640, 480);
        assert_abs_diff_eq!(disparity_to_depth(&geom, 100.0).unwrap(), 10.0, epsilon = 1e-12);
        let geom = canonical_geometry(0.5, 2000.0, 640, 480);
        assert_abs_diff_eq!(disparity_to_depth(&geom, 50.0).unwrap(), 20.0, epsilon = 1e-12);
        assert!(matches!(
            disparity_to_depth(&geom, 0.0),
            Err(Error::NonPositiveDisparity { .. })
        ));
        // below the infinity cutoff
        assert!(disparity_to_depth(&geom, 1e-9).is_err());
    }

    #[test]
    fn uniform_disparity_reconstructs_plane() {
        let geom = canonical_geometry(1.0, 1000.0, 64, 48);
        let d = (geom.baseline_m * geom.intrinsics.focal_px / 10.0) as f32;
        let disp = DisparityMap::from_vec(64, 48, vec![d; 64 * 48], DispSpace::Frame);
        let cloud = frame_disparity_cloud(&disp, &geom, None).unwrap();
        assert_eq!(cloud.len(), 64 * 48);
        for p in &cloud.points {
            assert!((p[2] as f64 - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cloud_count_equals_valid_count() {
        let geom = canonical_geometry(1.0, 800.0, 32, 32);
        let mut disp = DisparityMap::new_invalid(32, 32, DispSpace::Frame);
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..300 {
            let x = rng.random_range(0..32);
            let y = rng.random_range(0..32);
            disp.set(x, y, rng.random_range(20.0..120.0));
        }
        let cloud = frame_disparity_cloud(&disp, &geom, None).unwrap();
        assert_eq!(cloud.len(), disp.valid_count());
    }

    #[test]
    fn frame_triangulation_inverts_projection() {
        let geom = canonical_geometry(0.8, 900.0, 640, 480);
        let view_l = CameraView {
            intrinsics: geom.intrinsics,
            pose: CameraPose::identity(),
        };
        let view_r = CameraView {
            intrinsics: geom.intrinsics,
            pose: CameraPose::new(Matrix3::identity(), Vector3::new(0.8, 0.0, 0.0)).unwrap(),
        };
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..200 {
            let p = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(4.0..40.0),
            );
            let (xl, yl) = project_point(&view_l, &p).unwrap();
            let (xr, yr) = project_point(&view_r, &p).unwrap();
            assert_abs_diff_eq!(yl, yr, epsilon = 1e-9);
            let q = triangulate_frame_pixel(&geom, xl, yl, xl - xr).unwrap();
            assert!((q - p).norm() < 1e-9, "residual {}", (q - p).norm());
        }
    }

    #[test]
    fn depth_strictly_decreasing_in_disparity() {
        let geom = canonical_geometry(1.0, 1000.0, 64, 64);
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let d = i as f64;
            let z = disparity_to_depth(&geom, d).unwrap();
            assert!(z < prev);
            prev = z;
        }
    }

    /// Closest-point midpoint of two world rays.
    fn two_ray_midpoint(
        c1: Vector3<f64>,
        d1: Vector3<f64>,
        c2: Vector3<f64>,
        d2: Vector3<f64>,
    ) -> Vector3<f64> {
        let r = c2 - c1;
        let a = d1.dot(&d1);
        let b = d1.dot(&d2);
        let c = d2.dot(&d2);
        let d = d1.dot(&r);
        let e = d2.dot(&r);
        let den = a * c - b * b;
        let t1 = (d * c - b * e) / den;
        let t2 = (b * d - a * e) / den;
        ((c1 + d1 * t1) + (c2 + d2 * t2)) * 0.5
    }

    #[test]
    fn spherical_triangulation_matches_two_ray_midpoint() {
        let b = 1.2;
        let mut geom = canonical_geometry(b, 700.0, 512, 384);
        let grid = SphericalGrid::for_rectified(&geom.intrinsics, None).unwrap();
        geom.grid = Some(grid);
        let intr = geom.intrinsics;

        let view_l = CameraView {
            intrinsics: intr,
            pose: CameraPose::identity(),
        };
        let view_r = CameraView {
            intrinsics: intr,
            pose: CameraPose::new(Matrix3::identity(), Vector3::new(b, 0.0, 0.0)).unwrap(),
        };

        let mut rng = StdRng::seed_from_u64(33);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-2.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(5.0..30.0),
            );
            let (xl, yl) = project_point(&view_l, &p).unwrap();
            let (xr, yr) = project_point(&view_r, &p).unwrap();
            if xl < 1.0 || xl > 510.0 || xr < 1.0 || xr > 510.0 || yl < 1.0 || yl > 382.0 {
                continue;
            }

            // place the correspondence on the sphere
            let (ul, vl) = frame_pixel_to_sphere(&grid, &intr, xl, yl).unwrap();
            let (ur, vr) = frame_pixel_to_sphere(&grid, &intr, xr, yr).unwrap();
            assert_abs_diff_eq!(vl, vr, epsilon = 1e-9);
            let ds = ul - ur;
            assert!(ds > 0.0);

            // spherical triangulation path
            let (fxl, fyl) = sphere_pixel_to_frame(&grid, &intr, ul, vl).unwrap();
            let (fxr, _) = sphere_pixel_to_frame(&grid, &intr, ul - ds, vl).unwrap();
            let q = triangulate_frame_pixel(&geom, fxl, fyl, fxl - fxr).unwrap();

            // reference: midpoint of the two pixel rays
            let d1 = crate::geometry::pixel_to_ray(&intr, xl, yl).to_vector();
            let d2 = crate::geometry::pixel_to_ray(&intr, xr, yr).to_vector();
            let m = two_ray_midpoint(Vector3::zeros(), d1, Vector3::new(b, 0.0, 0.0), d2);
            assert!((q - m).norm() < 1e-6, "residual {}", (q - m).norm());
        }
    }

    #[test]
    fn zero_spherical_disparity_gives_empty_cloud() {
        let mut geom = canonical_geometry(1.0, 500.0, 256, 192);
        let grid = SphericalGrid::for_rectified(&geom.intrinsics, None).unwrap();
        geom.grid = Some(grid);
        let disp = DisparityMap::from_vec(
            grid.out_w,
            grid.out_h,
            vec![0.0; grid.out_w * grid.out_h],
            DispSpace::Spherical,
        );
        let cloud = spherical_disparity_cloud(&disp, &geom, None).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn space_tag_mismatch_errors() {
        let geom = canonical_geometry(1.0, 500.0, 64, 64);
        let disp = DisparityMap::new_invalid(64, 64, DispSpace::Spherical);
        assert!(frame_disparity_cloud(&disp, &geom, None).is_err());
        assert!(spherical_disparity_cloud(&disp, &geom, None).is_err());
    }

    #[test]
    fn ply_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ply");
        write_ply(&PointCloud::default(), &path).unwrap();
        let back = read_ply(&path).unwrap();
        assert!(back.is_empty());

        let cloud = PointCloud {
            points: vec![[1.0, 2.0, 3.0], [-0.5, 0.25, 9.75], [1e-8, -1e8, 0.0]],
            colors: Some(vec![[255, 0, 0], [0, 255, 0], [0, 0, 255]]),
        };
        let path = dir.path().join("three.ply");
        write_ply(&cloud, &path).unwrap();
        assert_eq!(read_ply(&path).unwrap(), cloud);
    }

    #[test]
    fn ply_large_round_trip_bit_identical() {
        let mut rng = StdRng::seed_from_u64(99);
        let cloud = PointCloud {
            points: (0..100_000)
                .map(|_| {
                    [
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                    ]
                })
                .collect(),
            colors: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ply");
        let p2 = dir.path().join("b.ply");
        write_ply(&cloud, &p1).unwrap();
        write_ply(&read_ply(&p1).unwrap(), &p2).unwrap();
        let bytes1 = std::fs::read(&p1).unwrap();
        let bytes2 = std::fs::read(&p2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn malformed_ply_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, b"ply\nformat ascii 1.0\nend_header\n").unwrap();
        assert!(matches!(read_ply(&path), Err(Error::MalformedPly(_))));
        std::fs::write(
            &path,
            b"ply\nformat binary_little_endian 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n\x00\x00",
        )
        .unwrap();
        assert!(matches!(read_ply(&path), Err(Error::MalformedPly(_))));
    }
}
