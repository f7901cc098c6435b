//! Point-cloud evaluation: completeness (point counts) and cloud-to-cloud
//! accuracy (mean absolute nearest-neighbor distance and its standard
//! deviation against a reference cloud).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::triangulate::PointCloud;

/// Exact nearest-neighbor index over a fixed point set.
///
/// Ties in distance resolve to the smallest point index, which makes the
/// result identical to a brute-force scan.
pub struct KdTree {
    nodes: Vec<KdNode>,
    root: i32,
}

struct KdNode {
    point: [f64; 3],
    index: usize,
    axis: usize,
    left: i32,
    right: i32,
}

impl KdTree {
    pub fn build(points: &[[f32; 3]]) -> KdTree {
        let mut items: Vec<([f64; 3], usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ([p[0] as f64, p[1] as f64, p[2] as f64], i))
            .collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(&mut items, 0, &mut nodes);
        KdTree { nodes, root }
    }

    fn build_rec(items: &mut [([f64; 3], usize)], depth: usize, nodes: &mut Vec<KdNode>) -> i32 {
        if items.is_empty() {
            return -1;
        }
        let axis = depth % 3;
        let mid = items.len() / 2;
        items.select_nth_unstable_by(mid, |a, b| {
            a.0[axis]
                .partial_cmp(&b.0[axis])
                .unwrap()
                .then(a.1.cmp(&b.1))
        });
        let (point, index) = items[mid];
        let id = nodes.len() as i32;
        nodes.push(KdNode {
            point,
            index,
            axis,
            left: -1,
            right: -1,
        });
        let (lo, rest) = items.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(lo, depth + 1, nodes);
        let right = Self::build_rec(hi, depth + 1, nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
        id
    }

    /// Nearest reference point: `(index, squared distance)`.
    pub fn nearest(&self, query: [f64; 3]) -> Option<(usize, f64)> {
        if self.root < 0 {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        Some((best.0, best.1))
    }

    fn search(&self, node: i32, q: [f64; 3], best: &mut (usize, f64)) {
        let n = &self.nodes[node as usize];
        let dx = q[0] - n.point[0];
        let dy = q[1] - n.point[1];
        let dz = q[2] - n.point[2];
        let d2 = dx * dx + dy * dy + dz * dz;
        if d2 < best.1 || (d2 == best.1 && n.index < best.0) {
            *best = (n.index, d2);
        }
        let delta = q[n.axis] - n.point[n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if near >= 0 {
            self.search(near, q, best);
        }
        // the far side may still hold an equally close, lower-index point
        if far >= 0 && delta * delta <= best.1 {
            self.search(far, q, best);
        }
    }
}

/// Nearest-neighbor distance statistics of a test cloud against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudDistance {
    pub mean_abs_dist: f64,
    pub std_dist: f64,
    /// Test points that entered the statistics (all of them unless a
    /// max-distance cutoff excluded some).
    pub points_used: usize,
}

/// Per-point nearest-neighbor distances from `test` to `reference`,
/// summarized by mean and population standard deviation. Points farther
/// than `max_dist` are excluded when the cutoff is given.
pub fn cloud_to_cloud(
    test: &PointCloud,
    reference: &PointCloud,
    max_dist: Option<f64>,
) -> Result<CloudDistance> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let tree = KdTree::build(&reference.points);
    let mut distances: Vec<f64> = test
        .points
        .par_iter()
        .map(|p| {
            let (_, d2) = tree
                .nearest([p[0] as f64, p[1] as f64, p[2] as f64])
                .expect("non-empty reference");
            d2.sqrt()
        })
        .collect();
    if let Some(cutoff) = max_dist {
        distances.retain(|d| *d <= cutoff);
    }
    Ok(distance_stats(&distances))
}

/// Mean and population standard deviation, two-pass.
pub fn distance_stats(distances: &[f64]) -> CloudDistance {
    let n = distances.len();
    if n == 0 {
        return CloudDistance {
            mean_abs_dist: 0.0,
            std_dist: 0.0,
            points_used: 0,
        };
    }
    let mean = distances.iter().sum::<f64>() / n as f64;
    let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    CloudDistance {
        mean_abs_dist: mean,
        std_dist: var.sqrt(),
        points_used: n,
    }
}

/// Point counts of two clouds plus the signed percentage gain of `a` over
/// `b`; the gain is undefined when `b` is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Completeness {
    pub count_a: usize,
    pub count_b: usize,
    pub gain_pct: Option<f64>,
}

pub fn completeness(a: &PointCloud, b: &PointCloud) -> Completeness {
    let count_a = a.len();
    let count_b = b.len();
    let gain_pct = (count_b > 0)
        .then(|| 100.0 * (count_a as f64 - count_b as f64) / count_b as f64);
    Completeness {
        count_a,
        count_b,
        gain_pct,
    }
}

/// Combined evaluation record, serialized as the CLI's JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub count_a: usize,
    pub count_b: usize,
    pub completeness_gain_pct: Option<f64>,
    pub mean_abs_dist: f64,
    pub std_dist: f64,
    pub max_dist: Option<f64>,
    pub points_used: usize,
}

impl EvalReport {
    pub fn new(comp: Completeness, dist: CloudDistance, max_dist: Option<f64>) -> Self {
        EvalReport {
            count_a: comp.count_a,
            count_b: comp.count_b,
            completeness_gain_pct: comp.gain_pct,
            mean_abs_dist: dist.mean_abs_dist,
            std_dist: dist.std_dist,
            max_dist,
            points_used: dist.points_used,
        }
    }
}
