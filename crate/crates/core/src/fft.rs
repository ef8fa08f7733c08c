//! Centered, unitary DFTs along the axes of an `x`-fastest volume.
//!
//! Index `n / 2` is both the spatial center and the DC frequency:
//! `X[k] = n^{-1/2} sum_y x[y] exp(-2 pi i (k - n/2)(y - n/2) / n)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::datamodel::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

struct AxisPlan {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl AxisPlan {
    fn new(planner: &mut FftPlanner<f64>, n: usize) -> Self {
        AxisPlan {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            scale: 1.0 / (n as f64).sqrt(),
        }
    }

    /// Transform `count` contiguous lines of length `n` in `buf`.
    fn run(&self, buf: &mut [C64], tmp: &mut Vec<C64>, dir: Direction) {
        let n = self.n;
        if n == 1 {
            return;
        }
        let half = n / 2;
        tmp.resize(n, C64::new(0.0, 0.0));
        for line in buf.chunks_exact_mut(n) {
            for j in 0..n {
                tmp[j] = line[(j + half) % n];
            }
            match dir {
                Direction::Forward => self.fwd.process(tmp),
                Direction::Inverse => self.inv.process(tmp),
            }
            for k in 0..n {
                line[k] = tmp[(k + n - half) % n] * self.scale;
            }
        }
    }
}

/// Plans for a fixed volume shape.
pub struct VolumeFft {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    px: AxisPlan,
    py: AxisPlan,
    pz: AxisPlan,
}

impl VolumeFft {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        let mut planner = FftPlanner::new();
        VolumeFft {
            nx,
            ny,
            nz,
            px: AxisPlan::new(&mut planner, nx),
            py: AxisPlan::new(&mut planner, ny),
            pz: AxisPlan::new(&mut planner, nz),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis(&self, data: &mut [C64], axis: Axis, dir: Direction) {
        debug_assert_eq!(data.len(), self.len());
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let mut tmp = Vec::new();
        match axis {
            Axis::X => self.px.run(data, &mut tmp, dir),
            Axis::Y => {
                if ny == 1 {
                    return;
                }
                let mut lines = vec![C64::new(0.0, 0.0); nx * ny];
                for z in 0..nz {
                    let plane = &mut data[z * nx * ny..(z + 1) * nx * ny];
                    for y in 0..ny {
                        for x in 0..nx {
                            lines[x * ny + y] = plane[y * nx + x];
                        }
                    }
                    self.py.run(&mut lines, &mut tmp, dir);
                    for y in 0..ny {
                        for x in 0..nx {
                            plane[y * nx + x] = lines[x * ny + y];
                        }
                    }
                }
            }
            Axis::Z => {
                if nz == 1 {
                    return;
                }
                let plane = nx * ny;
                let mut lines = vec![C64::new(0.0, 0.0); plane * nz];
                for z in 0..nz {
                    for p in 0..plane {
                        lines[p * nz + z] = data[z * plane + p];
                    }
                }
                self.pz.run(&mut lines, &mut tmp, dir);
                for z in 0..nz {
                    for p in 0..plane {
                        data[z * plane + p] = lines[p * nz + z];
                    }
                }
            }
        }
    }

    /// Transform along y and z (the phase-encoding axes).
    pub fn yz(&self, data: &mut [C64], dir: Direction) {
        self.axis(data, Axis::Y, dir);
        self.axis(data, Axis::Z, dir);
    }

    /// Transform along all three axes.
    pub fn xyz(&self, data: &mut [C64], dir: Direction) {
        self.axis(data, Axis::X, dir);
        self.yz(data, dir);
    }

    /// Transform a single line of length `nx` (readout axis).
    pub fn x_line(&self, line: &mut [C64], dir: Direction) {
        let mut tmp = Vec::new();
        self.px.run(line, &mut tmp, dir);
    }
}

/// Row `k` of the centered unitary DFT matrix of size `n`.
pub fn dft_row(k: usize, n: usize) -> Vec<C64> {
    let half = (n / 2) as f64;
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|y| {
            let arg = -2.0 * PI * (k as f64 - half) * (y as f64 - half) / n as f64;
            C64::from_polar(scale, arg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
    }

    fn naive_axis(data: &[C64], dims: (usize, usize, usize), axis: Axis) -> Vec<C64> {
        let (nx, ny, nz) = dims;
        let mut out = vec![C64::new(0.0, 0.0); data.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let (n, k) = match axis {
                        Axis::X => (nx, x),
                        Axis::Y => (ny, y),
                        Axis::Z => (nz, z),
                    };
                    let row = dft_row(k, n);
                    let mut acc = C64::new(0.0, 0.0);
                    for (j, w) in row.iter().enumerate() {
                        let (xx, yy, zz) = match axis {
                            Axis::X => (j, y, z),
                            Axis::Y => (x, j, z),
                            Axis::Z => (x, y, j),
                        };
                        acc += w * data[xx + nx * (yy + ny * zz)];
                    }
                    out[x + nx * (y + ny * z)] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_sizes() {
        for dims in [(4, 5, 3), (3, 6, 2), (5, 1, 4)] {
            let plan = VolumeFft::new(dims.0, dims.1, dims.2);
            let data = random(plan.len(), 7);
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                let mut fast = data.clone();
                plan.axis(&mut fast, axis, Direction::Forward);
                let slow = naive_axis(&data, dims, axis);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).norm() < 1e-12, "{dims:?} {axis:?}");
                }
            }
        }
    }

    #[test]
    fn inverse_undoes_forward_and_preserves_norm() {
        let plan = VolumeFft::new(6, 7, 5);
        let data = random(plan.len(), 1);
        let mut k = data.clone();
        plan.xyz(&mut k, Direction::Forward);
        let n0: f64 = data.iter().map(|v| v.norm_sqr()).sum();
        let n1: f64 = k.iter().map(|v| v.norm_sqr()).sum();
        assert!((n0 - n1).abs() < 1e-10 * n0);
        plan.xyz(&mut k, Direction::Inverse);
        for (a, b) in k.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn centered_delta_has_flat_spectrum() {
        let plan = VolumeFft::new(1, 8, 1);
        let mut d = vec![C64::new(0.0, 0.0); 8];
        d[4] = C64::new(1.0, 0.0);
        plan.axis(&mut d, Axis::Y, Direction::Forward);
        for v in d {
            assert!((v - C64::new(1.0 / 8f64.sqrt(), 0.0)).norm() < 1e-14);
        }
    }
}
