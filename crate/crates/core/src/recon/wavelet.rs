//! Orthonormal multilevel Haar transform of `x`-fastest volumes.
//!
//! Each level splits the current approximation box along every axis longer
//! than one sample into `[approx | detail]`. An odd trailing sample is
//! carried into the approximation unchanged, which keeps the transform
//! orthonormal for any size.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::datamodel::Grid;

fn split_1d(line: &mut [f64], tmp: &mut Vec<f64>) {
    let m = line.len();
    let half = m / 2;
    let na = m.div_ceil(2);
    tmp.clear();
    tmp.resize(m, 0.0);
    for i in 0..half {
        let (a, b) = (line[2 * i], line[2 * i + 1]);
        tmp[i] = (a + b) * FRAC_1_SQRT_2;
        tmp[na + i] = (a - b) * FRAC_1_SQRT_2;
    }
    if m % 2 == 1 {
        tmp[half] = line[m - 1];
    }
    line.copy_from_slice(tmp);
}

fn merge_1d(line: &mut [f64], tmp: &mut Vec<f64>) {
    let m = line.len();
    let half = m / 2;
    let na = m.div_ceil(2);
    tmp.clear();
    tmp.resize(m, 0.0);
    for i in 0..half {
        let (a, d) = (line[i], line[na + i]);
        tmp[2 * i] = (a + d) * FRAC_1_SQRT_2;
        tmp[2 * i + 1] = (a - d) * FRAC_1_SQRT_2;
    }
    if m % 2 == 1 {
        tmp[m - 1] = line[half];
    }
    line.copy_from_slice(tmp);
}

/// Apply `f` to every line along `axis` inside the box `[0, ext)`.
fn along_axis(data: &mut [f64], grid: &Grid, ext: [usize; 3], axis: usize, f: fn(&mut [f64], &mut Vec<f64>)) {
    let m = ext[axis];
    if m < 2 {
        return;
    }
    let mut line = vec![0.0; m];
    let mut tmp = Vec::new();
    let (o1, o2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for b in 0..ext[o2] {
        for a in 0..ext[o1] {
            let idx = |i: usize| {
                let mut p = [0usize; 3];
                p[axis] = i;
                p[o1] = a;
                p[o2] = b;
                grid.index(p[0], p[1], p[2])
            };
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[idx(i)];
            }
            f(&mut line, &mut tmp);
            for (i, v) in line.iter().enumerate() {
                data[idx(i)] = *v;
            }
        }
    }
}

/// Extents of the approximation box before each level.
fn boxes(grid: &Grid, levels: usize) -> Vec<[usize; 3]> {
    let mut ext = [grid.nx, grid.ny, grid.nz];
    let mut out = Vec::new();
    for _ in 0..levels {
        if ext.iter().all(|&e| e < 2) {
            break;
        }
        out.push(ext);
        ext = ext.map(|e| if e < 2 { e } else { e.div_ceil(2) });
    }
    out
}

pub fn forward(data: &mut [f64], grid: &Grid, levels: usize) {
    for ext in boxes(grid, levels) {
        for axis in 0..3 {
            along_axis(data, grid, ext, axis, split_1d);
        }
    }
}

pub fn inverse(data: &mut [f64], grid: &Grid, levels: usize) {
    for ext in boxes(grid, levels).into_iter().rev() {
        for axis in (0..3).rev() {
            along_axis(data, grid, ext, axis, merge_1d);
        }
    }
}

/// Mask of detail coefficients (everything outside the coarsest approximation box).
pub fn detail_mask(grid: &Grid, levels: usize) -> Vec<bool> {
    let b = boxes(grid, levels);
    let coarse = match b.last() {
        Some(ext) => ext.map(|e| if e < 2 { e } else { e.div_ceil(2) }),
        None => [grid.nx, grid.ny, grid.nz],
    };
    (0..grid.len())
        .map(|i| {
            let (x, y, z) = grid.coords(i);
            !(x < coarse[0] && y < coarse[1] && z < coarse[2])
        })
        .collect()
}

/// `W^T soft(W v, tau)` with the coarsest approximation left unthresholded.
pub fn soft_threshold(data: &mut [f64], grid: &Grid, levels: usize, tau: f64) {
    if tau <= 0.0 {
        return;
    }
    forward(data, grid, levels);
    for (v, d) in data.iter_mut().zip(detail_mask(grid, levels)) {
        if d {
            *v = v.signum() * (v.abs() - tau).max(0.0);
        }
    }
    inverse(data, grid, levels);
}

/// `sum |W v|` over detail coefficients.
pub fn l1_norm(data: &[f64], grid: &Grid, levels: usize) -> f64 {
    let mut w = data.to_vec();
    forward(&mut w, grid, levels);
    w.iter().zip(detail_mask(grid, levels)).filter(|(_, d)| *d).map(|(v, _)| v.abs()).sum()
}
