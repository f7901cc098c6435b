//! Shared fixtures and independent reference implementations for the
//! integration suites. Everything here is deliberately naive: full-table
//! recurrences and double loops that the optimized code must reproduce.

use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::Rng;

use spherect::geometry::{
    pixel_to_ray, project_point, rotation_x, rotation_y, rotation_z, CameraPose, CameraView,
    Intrinsics,
};
use spherect::matcher::CostVolume;
use spherect::triangulate::PointCloud;

/// Literal per-path recurrence over a full 4D table, summed across paths.
pub fn naive_sgm_aggregate(volume: &CostVolume, p1: u16, p2: u16, dirs: &[(i32, i32)]) -> Vec<u16> {
    let (w, h, nd) = (volume.width, volume.height, volume.num_disp);
    let mut total = vec![0u32; w * h * nd];
    for &(dx, dy) in dirs {
        let mut l = vec![0u32; w * h * nd];
        let xs: Vec<usize> = if dx >= 0 {
            (0..w).collect()
        } else {
            (0..w).rev().collect()
        };
        let ys: Vec<usize> = if dy >= 0 {
            (0..h).collect()
        } else {
            (0..h).rev().collect()
        };
        for &y in &ys {
            for &x in &xs {
                let px = x as i32 - dx;
                let py = y as i32 - dy;
                let inside = px >= 0 && px < w as i32 && py >= 0 && py < h as i32;
                for di in 0..nd {
                    let c = volume.costs[(y * w + x) * nd + di] as u32;
                    let v = if !inside {
                        c
                    } else {
                        let base = (py as usize * w + px as usize) * nd;
                        let min_prev = (0..nd).map(|k| l[base + k]).min().unwrap();
                        let mut best = l[base + di];
                        if di > 0 {
                            best = best.min(l[base + di - 1] + p1 as u32);
                        }
                        if di + 1 < nd {
                            best = best.min(l[base + di + 1] + p1 as u32);
                        }
                        best = best.min(min_prev + p2 as u32);
                        c + best - min_prev
                    };
                    l[(y * w + x) * nd + di] = v;
                }
            }
        }
        for (t, v) in total.iter_mut().zip(&l) {
            *t += *v;
        }
    }
    total.into_iter().map(|v| v as u16).collect()
}

/// Brute-force nearest neighbor with smallest-index tie-break.
pub fn brute_nearest(reference: &PointCloud, q: [f64; 3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in reference.points.iter().enumerate() {
        let dx = q[0] - p[0] as f64;
        let dy = q[1] - p[1] as f64;
        let dz = q[2] - p[2] as f64;
        let d2 = dx * dx + dy * dy + dz * dz;
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            best = (i, d2);
        }
    }
    best
}

/// Random convergent stereo pair: toe-in up to `max_convergence_deg` about Y
/// plus small roll/pitch jitter, baseline mostly along X.
pub fn random_convergent_pair(rng: &mut StdRng, max_convergence_deg: f64) -> (CameraView, CameraView) {
    let f = rng.random_range(600.0..1200.0);
    let intr = Intrinsics::new(f, 640, 512).unwrap();
    let half = (max_convergence_deg / 2.0).to_radians();
    let jitter = 5f64.to_radians();
    let toe = rng.random_range(0.0..half);
    let mut mk = |yaw: f64, c: Vector3<f64>, rng: &mut StdRng| {
        CameraPose::new(
            rotation_z(rng.random_range(-jitter..jitter))
                * rotation_x(rng.random_range(-jitter..jitter))
                * rotation_y(yaw),
            c,
        )
        .unwrap()
    };
    let l = mk(toe, Vector3::zeros(), rng);
    let rc = Vector3::new(
        rng.random_range(0.5..2.0),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    );
    let r = mk(-toe, rc, rng);
    (
        CameraView {
            intrinsics: intr,
            pose: l,
        },
        CameraView {
            intrinsics: intr,
            pose: r,
        },
    )
}

/// Sample a world point visible in both views (left-pixel ray cast to a
/// random depth, accepted when the right view sees it too).
pub fn sample_visible_point(rng: &mut StdRng, vl: &CameraView, vr: &CameraView) -> Vector3<f64> {
    loop {
        let px = rng.random_range(30.0..(vl.intrinsics.width as f64 - 30.0));
        let py = rng.random_range(30.0..(vl.intrinsics.height as f64 - 30.0));
        let depth = rng.random_range(5.0..40.0);
        let dir = vl.pose.rotation.transpose() * pixel_to_ray(&vl.intrinsics, px, py).to_vector();
        let p = vl.pose.center + dir * depth;
        if let Ok((qx, qy)) = project_point(vr, &p) {
            if qx >= 0.0
                && qy >= 0.0
                && qx <= (vr.intrinsics.width - 1) as f64
                && qy <= (vr.intrinsics.height - 1) as f64
            {
                return p;
            }
        }
    }
}

/// One pass/fail line per acceptance criterion.
pub fn report(id: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {:>2} [{}] {}: {}",
        id,
        if pass { "PASS" } else { "FAIL" },
        name,
        detail
    );
    assert!(pass, "acceptance criterion {id} ({name}) failed: {detail}");
}
