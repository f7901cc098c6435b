//! Multi-path cost aggregation.
//!
//! Along each scanline direction `r` the standard recurrence
//!
//! ```text
//! L_r(p, d) = C(p, d) - min_k L_r(p-r, k)
//!           + min( L_r(p-r, d),
//!                  L_r(p-r, d-1) + P1, L_r(p-r, d+1) + P1,
//!                  min_k L_r(p-r, k) + P2 )
//! ```
//!
//! is evaluated with rolling per-row buffers and the per-direction results
//! are summed. All arithmetic is integral, so the result is identical to a
//! naive full-volume evaluation and independent of thread count.

use rayon::prelude::*;

use super::volume::CostVolume;
use super::SgmParams;

const DIRS: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
];

/// Scanline directions used for a path count (4 = axis-aligned, 8 adds the
/// diagonals).
pub fn path_directions(num_paths: usize) -> &'static [(i32, i32)] {
    match num_paths {
        4 => &DIRS[..4],
        _ => &DIRS,
    }
}

/// Aggregate the volume along `params.num_paths` directions. The output
/// volume carries the summed path costs and inherits all metadata.
pub fn sgm_aggregate(volume: &CostVolume, params: &SgmParams) -> CostVolume {
    let mut out = CostVolume {
        costs: vec![0u16; volume.costs.len()],
        windows: volume.windows.clone(),
        valid_l: volume.valid_l.clone(),
        valid_r: volume.valid_r.clone(),
        ..*volume
    };
    // total stays far below u16::MAX: 8 * (saturation + P2)
    debug_assert!(
        (params.num_paths as u32) * (volume.saturation as u32 + params.p2 as u32) < u16::MAX as u32
    );

    for &(dx, dy) in path_directions(params.num_paths) {
        if dy == 0 {
            aggregate_horizontal(volume, params.p1, params.p2, dx, &mut out.costs);
        } else {
            aggregate_with_row_flow(volume, params.p1, params.p2, dx, dy, &mut out.costs);
        }
    }
    out
}

/// One disparity column of the recurrence given the predecessor's costs.
#[inline]
fn relax(
    cost: &[u16],
    prev: &[u16],
    min_prev: u32,
    p1: u32,
    p2: u32,
    cur: &mut [u16],
) {
    let nd = cost.len();
    for di in 0..nd {
        let mut best = prev[di] as u32;
        if di > 0 {
            best = best.min(prev[di - 1] as u32 + p1);
        }
        if di + 1 < nd {
            best = best.min(prev[di + 1] as u32 + p1);
        }
        best = best.min(min_prev + p2);
        cur[di] = (cost[di] as u32 + best - min_prev) as u16;
    }
}

#[inline]
fn slice_min(s: &[u16]) -> u32 {
    s.iter().copied().min().unwrap_or(0) as u32
}

/// Horizontal paths: rows are independent, so they run in parallel.
fn aggregate_horizontal(volume: &CostVolume, p1: u16, p2: u16, dx: i32, out: &mut [u16]) {
    let (w, nd) = (volume.width, volume.num_disp);
    let (p1, p2) = (p1 as u32, p2 as u32);

    out.par_chunks_mut(w * nd)
        .zip(volume.costs.par_chunks(w * nd))
        .for_each(|(out_row, cost_row)| {
            let mut prev = vec![0u16; nd];
            let mut cur = vec![0u16; nd];
            let xs: Box<dyn Iterator<Item = usize>> = if dx > 0 {
                Box::new(0..w)
            } else {
                Box::new((0..w).rev())
            };
            let mut first = true;
            for x in xs {
                let cost = &cost_row[x * nd..(x + 1) * nd];
                if first {
                    cur.copy_from_slice(cost);
                    first = false;
                } else {
                    let min_prev = slice_min(&prev);
                    relax(cost, &prev, min_prev, p1, p2, &mut cur);
                }
                for (o, l) in out_row[x * nd..(x + 1) * nd].iter_mut().zip(&cur) {
                    *o += *l;
                }
                std::mem::swap(&mut prev, &mut cur);
            }
        });
}

/// Vertical and diagonal paths: each row depends only on the previous row,
/// so rows are processed in order with a rolling buffer.
fn aggregate_with_row_flow(
    volume: &CostVolume,
    p1: u16,
    p2: u16,
    dx: i32,
    dy: i32,
    out: &mut [u16],
) {
    let (w, h, nd) = (volume.width, volume.height, volume.num_disp);
    let (p1, p2) = (p1 as u32, p2 as u32);

    let mut prev_row = vec![0u16; w * nd];
    let mut prev_mins = vec![0u32; w];
    let mut cur_row = vec![0u16; w * nd];
    let mut cur_mins = vec![0u32; w];

    let ys: Box<dyn Iterator<Item = usize>> = if dy > 0 {
        Box::new(0..h)
    } else {
        Box::new((0..h).rev())
    };
    let mut first_row = true;
    for y in ys {
        let cost_row = &volume.costs[y * w * nd..(y + 1) * w * nd];
        for x in 0..w {
            let cost = &cost_row[x * nd..(x + 1) * nd];
            let cur = &mut cur_row[x * nd..(x + 1) * nd];
            let px = x as i32 - dx;
            if first_row || px < 0 || px >= w as i32 {
                cur.copy_from_slice(cost);
            } else {
                let px = px as usize;
                relax(
                    cost,
                    &prev_row[px * nd..(px + 1) * nd],
                    prev_mins[px],
                    p1,
                    p2,
                    cur,
                );
            }
            cur_mins[x] = slice_min(cur);
        }
        let out_row = &mut out[y * w * nd..(y + 1) * w * nd];
        for (o, l) in out_row.iter_mut().zip(&cur_row) {
            *o += *l;
        }
        std::mem::swap(&mut prev_row, &mut cur_row);
        std::mem::swap(&mut prev_mins, &mut cur_mins);
        first_row = false;
    }
}
