//! Synthetic stereo scenes with exact ground truth.
//!
//! Surfaces are depth graphs `Z = g(X, Y)` over the world XY plane, textured
//! with seeded value noise, viewed by cameras near the world origin looking
//! down +Z. Rendering is exact ray casting (analytic for the piecewise-planar
//! surfaces, iterative for the noise heightfield) with 4x supersampling for
//! the images and center-ray sampling for the ground-truth depth.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{pixel_to_ray, rotation_y, CameraPose, CameraView, Intrinsics};
use crate::image::GrayImage;
use crate::triangulate::PointCloud;

/// Surface shape of a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    /// Fronto-parallel plane at the mid depth.
    Plane,
    /// Depth ramp along world X between the near and far bounds.
    Ramp,
    /// Depth staircase along world X (discontinuities for the matcher).
    Steps,
    /// Value-noise heightfield between the near and far bounds.
    Heightfield,
}

impl SurfaceKind {
    pub fn parse(s: &str) -> Result<SurfaceKind> {
        match s {
            "plane" => Ok(SurfaceKind::Plane),
            "ramp" => Ok(SurfaceKind::Ramp),
            "steps" => Ok(SurfaceKind::Steps),
            "heightfield" => Ok(SurfaceKind::Heightfield),
            other => Err(Error::Config(format!(
                "unknown scene '{other}' (expected plane|ramp|steps|heightfield)"
            ))),
        }
    }
}

/// A textured synthetic surface.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticScene {
    pub kind: SurfaceKind,
    /// Depth bounds of the surface, meters.
    pub z_near: f64,
    pub z_far: f64,
    /// Half-extent of the ramp/steps transition along world X, meters.
    pub extent_m: f64,
    /// Texture seed; equal seeds render bit-identical images.
    pub seed: u64,
    /// Texture contrast in (0, 1].
    pub contrast: f64,
    /// Base wavelength of the surface texture, meters.
    pub texture_cell_m: f64,
    /// Octaves of texture detail.
    pub octaves: u32,
    /// Number of steps for [`SurfaceKind::Steps`].
    pub steps: usize,
    /// Wavelength of the heightfield relief, meters.
    pub relief_cell_m: f64,
}

impl SyntheticScene {
    pub fn new(kind: SurfaceKind, z_near: f64, z_far: f64, seed: u64) -> Result<SyntheticScene> {
        if !(z_near > 0.0 && z_far >= z_near) {
            return Err(Error::Config(format!(
                "scene depth bounds must satisfy 0 < z_near <= z_far, got [{z_near}, {z_far}]"
            )));
        }
        let z_mid = 0.5 * (z_near + z_far);
        Ok(SyntheticScene {
            kind,
            z_near,
            z_far,
            extent_m: 0.75 * z_far,
            seed,
            contrast: 0.9,
            texture_cell_m: 0.015 * z_mid,
            octaves: 4,
            steps: 6,
            relief_cell_m: 0.35 * z_mid,
        })
    }

    pub fn z_mid(&self) -> f64 {
        0.5 * (self.z_near + self.z_far)
    }

    fn amplitude(&self) -> f64 {
        0.5 * (self.z_far - self.z_near)
    }

    /// Surface depth at a ground position.
    pub fn surface_depth(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            SurfaceKind::Plane => self.z_mid(),
            SurfaceKind::Ramp => {
                let t = ((x + self.extent_m) / (2.0 * self.extent_m)).clamp(0.0, 1.0);
                self.z_near + (self.z_far - self.z_near) * t
            }
            SurfaceKind::Steps => self.step_depth(self.step_index(x)),
            SurfaceKind::Heightfield => {
                let n = fbm(
                    self.seed,
                    x / self.relief_cell_m,
                    y / self.relief_cell_m,
                    3,
                );
                self.z_mid() + self.amplitude() * (2.0 * n - 1.0)
            }
        }
    }

    fn step_index(&self, x: f64) -> usize {
        let n = self.steps.max(1);
        let t = ((x + self.extent_m) / (2.0 * self.extent_m)).clamp(0.0, 1.0);
        ((t * n as f64) as usize).min(n - 1)
    }

    fn step_depth(&self, j: usize) -> f64 {
        let n = self.steps.max(1);
        if n == 1 {
            return self.z_mid();
        }
        self.z_near + (self.z_far - self.z_near) * j as f64 / (n - 1) as f64
    }

    /// Surface luminance at a ground position, gray levels.
    pub fn texture(&self, x: f64, y: f64) -> f32 {
        let n = fbm(
            self.seed ^ 0xA5A5_5A5A_0F0F_F0F0,
            x / self.texture_cell_m,
            y / self.texture_cell_m,
            self.octaves,
        );
        (128.0 + 127.0 * self.contrast * (2.0 * n - 1.0)).clamp(0.0, 255.0) as f32
    }

    /// First intersection of a world ray with the surface, as world z.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        if dir.z <= 1e-9 {
            return None;
        }
        let kx = dir.x / dir.z;
        let ky = dir.y / dir.z;
        let x_at = |pz: f64| origin.x + kx * (pz - origin.z);
        let y_at = |pz: f64| origin.y + ky * (pz - origin.z);

        match self.kind {
            SurfaceKind::Plane => Some(self.z_mid()),
            SurfaceKind::Ramp => {
                let e = self.extent_m;
                let m = (self.z_far - self.z_near) / (2.0 * e);
                let mut best: Option<f64> = None;
                let mut consider = |pz: f64, ok: bool| {
                    if ok && pz > origin.z && best.map_or(true, |b| pz < b) {
                        best = Some(pz);
                    }
                };
                consider(self.z_near, x_at(self.z_near) <= -e + 1e-12);
                consider(self.z_far, x_at(self.z_far) >= e - 1e-12);
                let den = 1.0 - m * kx;
                if den.abs() > 1e-12 {
                    // g(X) = z_mid + m X on the transition
                    let pz = (self.z_mid() + m * (origin.x - kx * origin.z)) / den;
                    consider(pz, x_at(pz).abs() <= e + 1e-12);
                }
                best
            }
            SurfaceKind::Steps => {
                let n = self.steps.max(1);
                let e = self.extent_m;
                let mut best: Option<f64> = None;
                for j in 0..n {
                    let pz = self.step_depth(j);
                    if pz > origin.z
                        && self.step_index(x_at(pz)) == j
                        && best.map_or(true, |b| pz < b)
                    {
                        best = Some(pz);
                    }
                }
                if best.is_none() && kx.abs() > 1e-12 {
                    // the ray slips between two step tops: it hits a riser
                    for j in 1..n {
                        let xb = -e + 2.0 * e * j as f64 / n as f64;
                        let pz = origin.z + (xb - origin.x) / kx;
                        let (lo, hi) = (self.step_depth(j - 1), self.step_depth(j));
                        if pz >= lo.min(hi) - 1e-12
                            && pz <= lo.max(hi) + 1e-12
                            && pz > origin.z
                            && best.map_or(true, |b| pz < b)
                        {
                            best = Some(pz);
                        }
                    }
                }
                best
            }
            SurfaceKind::Heightfield => {
                // fixed-point iteration on pz = g(x(pz), y(pz)); the relief
                // slope stays below 1, so this contracts for our cameras
                let mut pz = self.z_mid();
                for _ in 0..120 {
                    let next = self.surface_depth(x_at(pz), y_at(pz));
                    if (next - pz).abs() < 1e-11 {
                        return Some(next);
                    }
                    pz = next;
                }
                // fall back to bisection on h(pz) = pz - g
                let mut lo = self.z_near - self.amplitude() - 1.0;
                let mut hi = self.z_far + self.amplitude() + 1.0;
                let h = |pz: f64| pz - self.surface_depth(x_at(pz), y_at(pz));
                if h(lo) > 0.0 || h(hi) < 0.0 {
                    return None;
                }
                for _ in 0..90 {
                    let mid = 0.5 * (lo + hi);
                    if h(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(0.5 * (lo + hi))
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice01(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(
        seed ^ (ix as u64).wrapping_mul(0x8DA6_B343_D803_5F2D)
            ^ (iy as u64).wrapping_mul(0xD856_3E77_2F1B_5C5B),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Band-limited value noise in [0, 1].
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = smoothstep(x - x0);
    let fy = smoothstep(y - y0);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice01(seed, ix, iy);
    let v10 = lattice01(seed, ix + 1, iy);
    let v01 = lattice01(seed, ix, iy + 1);
    let v11 = lattice01(seed, ix + 1, iy + 1);
    let a = v00 + fx * (v10 - v00);
    let b = v01 + fx * (v11 - v01);
    a + fy * (b - a)
}

fn fbm(seed: u64, x: f64, y: f64, octaves: u32) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    let mut freq = 1.0;
    for k in 0..octaves.max(1) {
        sum += amp * value_noise(seed.wrapping_add(k as u64), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

/// Two cameras toeing in symmetrically by half the convergence angle each,
/// baseline along world X and centered on the origin.
pub fn make_oblique_pair(
    convergence_deg: f64,
    baseline_m: f64,
    intr: Intrinsics,
) -> Result<(CameraView, CameraView)> {
    if !(0.0..=60.0).contains(&convergence_deg) {
        return Err(Error::Config(format!(
            "convergence must be within [0, 60] degrees, got {convergence_deg}"
        )));
    }
    if !(baseline_m > 0.0) {
        return Err(Error::Config(format!(
            "baseline must be positive, got {baseline_m}"
        )));
    }
    let half = (convergence_deg / 2.0).to_radians();
    let left = CameraView {
        intrinsics: intr,
        pose: CameraPose::new(rotation_y(half), Vector3::new(-baseline_m / 2.0, 0.0, 0.0))?,
    };
    let right = CameraView {
        intrinsics: intr,
        pose: CameraPose::new(rotation_y(-half), Vector3::new(baseline_m / 2.0, 0.0, 0.0))?,
    };
    Ok((left, right))
}

/// One rendered view: image, per-pixel ground-truth depth (camera-frame z,
/// meters; infinity where the ray misses), and the hit points.
pub struct RenderedView {
    pub image: GrayImage,
    pub depth: GrayImage,
    points: Vec<[f32; 3]>,
}

/// A rendered stereo pair with ground truth.
pub struct RenderedPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub depth_left: GrayImage,
    pub depth_right: GrayImage,
    /// Densely sampled true surface points (both views' hits, world frame).
    pub cloud: PointCloud,
}

/// Render one view of the scene.
pub fn render_view(scene: &SyntheticScene, view: &CameraView) -> Result<RenderedView> {
    let (w, h) = (view.intrinsics.width, view.intrinsics.height);
    let origin = view.pose.center;
    let rot_t = view.pose.rotation.transpose();

    // visibility: the central ray must hit the surface
    {
        let dir = rot_t * pixel_to_ray(&view.intrinsics, view.intrinsics.cx(), view.intrinsics.cy()).to_vector();
        if scene.intersect(&origin, &dir).is_none() {
            return Err(Error::SceneNotVisible { which: "given" });
        }
    }

    const OFFSETS: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];

    let rows: Vec<(Vec<f32>, Vec<f32>, Vec<[f32; 3]>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut img_row = vec![0.0f32; w];
            let mut depth_row = vec![f32::INFINITY; w];
            let mut pts = Vec::with_capacity(w);
            for x in 0..w {
                // supersampled luminance
                let mut acc = 0.0f64;
                let mut hits = 0u32;
                for (ox, oy) in OFFSETS {
                    let dir = rot_t
                        * pixel_to_ray(&view.intrinsics, x as f64 + ox, y as f64 + oy).to_vector();
                    if let Some(pz) = scene.intersect(&origin, &dir) {
                        let p = origin + dir * ((pz - origin.z) / dir.z);
                        acc += scene.texture(p.x, p.y) as f64;
                        hits += 1;
                    }
                }
                if hits > 0 {
                    img_row[x] = (acc / hits as f64) as f32;
                }

                // center-ray ground truth
                let dir = rot_t * pixel_to_ray(&view.intrinsics, x as f64, y as f64).to_vector();
                if let Some(pz) = scene.intersect(&origin, &dir) {
                    let p = origin + dir * ((pz - origin.z) / dir.z);
                    let cam = view.pose.world_to_camera(&p);
                    depth_row[x] = cam.z as f32;
                    pts.push([p.x as f32, p.y as f32, p.z as f32]);
                }
            }
            (img_row, depth_row, pts)
        })
        .collect();

    let mut image = GrayImage::new(w, h);
    let mut depth = GrayImage::new(w, h);
    let mut points = Vec::with_capacity(w * h);
    for (y, (img_row, depth_row, pts)) in rows.into_iter().enumerate() {
        image.as_mut_slice()[y * w..(y + 1) * w].copy_from_slice(&img_row);
        depth.as_mut_slice()[y * w..(y + 1) * w].copy_from_slice(&depth_row);
        points.extend(pts);
    }
    Ok(RenderedView {
        image,
        depth,
        points,
    })
}

/// Render both views plus the combined ground-truth cloud.
pub fn render_pair(
    scene: &SyntheticScene,
    view_l: &CameraView,
    view_r: &CameraView,
) -> Result<RenderedPair> {
    let l = render_view(scene, view_l).map_err(|e| match e {
        Error::SceneNotVisible { .. } => Error::SceneNotVisible { which: "left" },
        other => other,
    })?;
    let r = render_view(scene, view_r).map_err(|e| match e {
        Error::SceneNotVisible { .. } => Error::SceneNotVisible { which: "right" },
        other => other,
    })?;
    let mut points = l.points;
    points.extend_from_slice(&r.points);
    Ok(RenderedPair {
        left: l.image,
        right: r.image,
        depth_left: l.depth,
        depth_right: r.depth,
        cloud: PointCloud {
            points,
            colors: None,
        },
    })
}

/// Back-project a ground-truth depth pixel into a world point.
pub fn backproject_depth(view: &CameraView, x: usize, y: usize, depth_m: f64) -> Vector3<f64> {
    let ray = pixel_to_ray(&view.intrinsics, x as f64, y as f64);
    view.pose
        .camera_to_world(&(ray.to_vector() * depth_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_point;
    use approx::assert_abs_diff_eq;

    fn intr(f: f64, n: usize) -> Intrinsics {
        Intrinsics::new(f, n, n).unwrap()
    }

    #[test]
    fn oblique_pair_angles() {
        let (l, r) = make_oblique_pair(0.0, 1.0, intr(500.0, 128)).unwrap();
        assert_eq!(l.pose.rotation, r.pose.rotation);
        let (l, r) = make_oblique_pair(30.0, 1.0, intr(500.0, 128)).unwrap();
        let cosang = l.pose.principal_ray().dot(&r.pose.principal_ray());
        assert_abs_diff_eq!(cosang.acos().to_degrees(), 30.0, epsilon = 1e-9);
        assert!(make_oblique_pair(75.0, 1.0, intr(500.0, 128)).is_err());
    }

    #[test]
    fn plane_scene_has_uniform_gt_disparity() {
        let scene = SyntheticScene::new(SurfaceKind::Plane, 10.0, 10.0, 7).unwrap();
        let (l, r) = make_oblique_pair(0.0, 1.0, intr(1000.0, 128)).unwrap();
        let pair = render_pair(&scene, &l, &r).unwrap();
        for y in 0..128 {
            for x in 0..128 {
                let z = pair.depth_left.get(x, y) as f64;
                let d = 1.0 * 1000.0 / z;
                assert_abs_diff_eq!(d, 100.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = SyntheticScene::new(SurfaceKind::Heightfield, 9.0, 11.0, 42).unwrap();
        let (l, r) = make_oblique_pair(25.0, 1.0, intr(400.0, 96)).unwrap();
        let a = render_pair(&scene, &l, &r).unwrap();
        let b = render_pair(&scene, &l, &r).unwrap();
        assert_eq!(a.left.as_slice(), b.left.as_slice());
        assert_eq!(a.right.as_slice(), b.right.as_slice());
        assert_eq!(a.depth_left.as_slice(), b.depth_left.as_slice());
        assert_eq!(a.cloud.points, b.cloud.points);
    }

    #[test]
    fn depth_reprojects_to_the_same_pixel() {
        for kind in [
            SurfaceKind::Plane,
            SurfaceKind::Ramp,
            SurfaceKind::Steps,
            SurfaceKind::Heightfield,
        ] {
            let scene = SyntheticScene::new(kind, 8.0, 14.0, 3).unwrap();
            let (l, _) = make_oblique_pair(20.0, 1.0, intr(300.0, 64)).unwrap();
            let rendered = render_view(&scene, &l).unwrap();
            for (x, y) in [(0, 0), (17, 5), (32, 32), (63, 63), (11, 60)] {
                let z = rendered.depth.get(x, y) as f64;
                assert!(z.is_finite());
                let p = backproject_depth(&l, x, y, z);
                let (px, py) = project_point(&l, &p).unwrap();
                assert_abs_diff_eq!(px, x as f64, epsilon = 1e-6);
                assert_abs_diff_eq!(py, y as f64, epsilon = 1e-6);
                // the hit point lies on the surface
                let g = scene.surface_depth(p.x, p.y);
                assert_abs_diff_eq!(p.z, g, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn heightfield_depths_stay_in_bounds() {
        let scene = SyntheticScene::new(SurfaceKind::Heightfield, 9.0, 12.0, 5).unwrap();
        let (l, _) = make_oblique_pair(10.0, 0.8, intr(300.0, 64)).unwrap();
        let rendered = render_view(&scene, &l).unwrap();
        for v in rendered.depth.as_slice() {
            let z = *v as f64;
            assert!(z.is_finite());
        }
        for p in &rendered.points {
            assert!(p[2] as f64 >= scene.z_near - 1e-6);
            assert!(p[2] as f64 <= scene.z_far + 1e-6);
        }
    }

    #[test]
    fn invisible_scene_errors() {
        let scene = SyntheticScene::new(SurfaceKind::Plane, 10.0, 10.0, 1).unwrap();
        // camera looking straight away from the surface
        let view = CameraView {
            intrinsics: intr(500.0, 64),
            pose: CameraPose::new(rotation_y(std::f64::consts::PI), Vector3::zeros()).unwrap(),
        };
        assert!(matches!(
            render_view(&scene, &view),
            Err(Error::SceneNotVisible { .. })
        ));
    }

    #[test]
    fn steps_have_discontinuities_but_no_holes() {
        let mut scene = SyntheticScene::new(SurfaceKind::Steps, 8.0, 12.0, 2).unwrap();
        scene.steps = 5;
        let (l, _) = make_oblique_pair(30.0, 1.0, intr(350.0, 96)).unwrap();
        let rendered = render_view(&scene, &l).unwrap();
        let mut distinct = std::collections::BTreeSet::new();
        for v in rendered.depth.as_slice() {
            assert!(v.is_finite(), "hole in the steps render");
            distinct.insert((*v * 1000.0).round() as i64);
        }
        assert!(distinct.len() >= 3, "expected several depth levels");
    }
}
