//! Synthetic tissue phantoms, coil maps, B0 fields and shot-to-shot
//! field variation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::{
    poly_basis, B0Map, CoilSet, Grid, Resolution, ShotVariation, TissuePhantom, C64, POLY_TERMS,
};
use crate::error::{Error, Result};
use crate::fft::{Direction, VolumeFft};

/// Ranges the per-region tissue parameters are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct TissueRanges {
    pub pd: (f64, f64),
    /// ms
    pub t2s: (f64, f64),
    /// T2 - T2* in ms.
    pub t2_extra: (f64, f64),
    pub se_scale: (f64, f64),
    /// rad
    pub phase: (f64, f64),
}

impl Default for TissueRanges {
    fn default() -> Self {
        TissueRanges {
            pd: (0.4, 1.0),
            t2s: (20.0, 100.0),
            t2_extra: (10.0, 80.0),
            se_scale: (0.8, 1.2),
            phase: (-0.6, 0.6),
        }
    }
}

impl TissueRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if ![self.pd, self.t2s, self.t2_extra, self.se_scale, self.phase].into_iter().all(ok) {
            return Err(Error::invalid("tissue ranges must be finite with lo <= hi"));
        }
        if self.pd.0 <= 0.0 || self.t2s.0 < 1.0 || self.t2s.1 > 500.0 || self.t2_extra.0 < 0.0 {
            return Err(Error::invalid("tissue ranges fall outside the dictionary bounds"));
        }
        if self.t2s.1 + self.t2_extra.1 > 600.0 || self.se_scale.0 <= 0.0 {
            return Err(Error::invalid("tissue ranges fall outside the dictionary bounds"));
        }
        Ok(())
    }
}

/// Ellipsoid: semi-axes, center (normalized coordinates) and rotation about z in degrees.
struct Ellipsoid {
    axes: [f64; 3],
    center: [f64; 3],
    phi: f64,
}

const fn ell(a: f64, b: f64, c: f64, x0: f64, y0: f64, z0: f64, phi: f64) -> Ellipsoid {
    Ellipsoid { axes: [a, b, c], center: [x0, y0, z0], phi }
}

/// Shepp-Logan style layout; later entries overwrite earlier ones.
const SHEPP_LOGAN: [Ellipsoid; 10] = [
    ell(0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 0.0),
    ell(0.6624, 0.874, 0.78, 0.0, -0.0184, 0.0, 0.0),
    ell(0.11, 0.31, 0.22, 0.22, 0.0, 0.0, -18.0),
    ell(0.16, 0.41, 0.28, -0.22, 0.0, 0.0, 18.0),
    ell(0.21, 0.25, 0.41, 0.0, 0.35, -0.15, 0.0),
    ell(0.046, 0.046, 0.05, 0.0, 0.1, 0.25, 0.0),
    ell(0.046, 0.046, 0.05, 0.0, -0.1, 0.25, 0.0),
    ell(0.046, 0.023, 0.05, -0.08, -0.605, 0.0, 0.0),
    ell(0.023, 0.023, 0.02, 0.0, -0.606, 0.0, 0.0),
    ell(0.023, 0.046, 0.02, 0.06, -0.605, 0.0, 0.0),
];

impl Ellipsoid {
    fn contains(&self, x: f64, y: f64, z: f64, planar: bool) -> bool {
        let (s, c) = (self.phi * PI / 180.0).sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let mut r = (u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2);
        if !planar {
            r += ((z - self.center[2]) / self.axes[2]).powi(2);
        }
        r <= 1.0
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Voxel center in normalized coordinates. Axes with one sample sit at 0.
fn norm_coords(grid: &Grid, idx: usize) -> (f64, f64, f64) {
    let (x, y, z) = grid.coords(idx);
    (Grid::normalized(x, grid.nx), Grid::normalized(y, grid.ny), Grid::normalized(z, grid.nz))
}

pub const PRESETS: [&str; 2] = ["ellipses", "random-smooth"];

pub fn make_phantom(grid: Grid, preset: &str, seed: u64) -> Result<TissuePhantom> {
    make_phantom_with(grid, preset, seed, &TissueRanges::default())
}

pub fn make_phantom_with(grid: Grid, preset: &str, seed: u64, ranges: &TissueRanges) -> Result<TissuePhantom> {
    grid.validate()?;
    ranges.validate()?;
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = TissuePhantom {
        grid,
        pd: vec![0.0; n],
        t2: vec![0.0; n],
        t2s: vec![0.0; n],
        b0: vec![0.0; n],
        phase0: vec![0.0; n],
        se_scale: vec![0.0; n],
        labels: vec![0; n],
    };
    match preset {
        "ellipses" => {
            for i in 0..n {
                let (x, y, z) = norm_coords(&grid, i);
                for (k, e) in SHEPP_LOGAN.iter().enumerate() {
                    if e.contains(x, y, z, grid.is_2d()) {
                        p.labels[i] = k as u32 + 1;
                    }
                }
            }
            let params: Vec<[f64; 5]> = (0..SHEPP_LOGAN.len())
                .map(|_| {
                    let t2s = draw(&mut rng, ranges.t2s);
                    [
                        draw(&mut rng, ranges.pd),
                        t2s,
                        t2s + draw(&mut rng, ranges.t2_extra),
                        draw(&mut rng, ranges.se_scale),
                        draw(&mut rng, ranges.phase),
                    ]
                })
                .collect();
            for i in 0..n {
                if let Some(l) = p.labels[i].checked_sub(1) {
                    let [pd, t2s, t2, sc, ph] = params[l as usize];
                    p.pd[i] = pd;
                    p.t2s[i] = t2s;
                    p.t2[i] = t2;
                    p.se_scale[i] = sc;
                    p.phase0[i] = ph;
                }
            }
        }
        "random-smooth" => {
            let fields: Vec<SmoothField> = (0..5).map(|_| SmoothField::random(&mut rng)).collect();
            let support = &SHEPP_LOGAN[0];
            for i in 0..n {
                let (x, y, z) = norm_coords(&grid, i);
                if !support.contains(x, y, z, grid.is_2d()) {
                    continue;
                }
                let u: Vec<f64> = fields.iter().map(|f| f.eval(x, y, z)).collect();
                let lerp = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t;
                p.pd[i] = lerp(ranges.pd, u[0]);
                p.t2s[i] = lerp(ranges.t2s, u[1]);
                p.t2[i] = p.t2s[i] + lerp(ranges.t2_extra, u[2]);
                p.se_scale[i] = lerp(ranges.se_scale, u[3]);
                p.phase0[i] = lerp(ranges.phase, u[4]);
                p.labels[i] = 1 + (u[1] * 4.0).min(3.0) as u32;
            }
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown phantom preset '{other}' (expected one of {PRESETS:?})"
            )))
        }
    }
    p.validate()?;
    Ok(p)
}

/// Low-frequency random field mapped into [0, 1].
struct SmoothField {
    modes: Vec<([f64; 3], f64, f64)>,
}

impl SmoothField {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let modes = (0..6)
            .map(|_| {
                let k = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)];
                (k, rng.random_range(0.0..2.0 * PI), rng.random_range(0.5..1.0))
            })
            .collect();
        SmoothField { modes }
    }

    fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        let total: f64 = self.modes.iter().map(|(_, _, a)| a).sum();
        let v: f64 = self
            .modes
            .iter()
            .map(|(k, ph, a)| a * (PI * (k[0] * x + k[1] * y + k[2] * z) + ph).cos())
            .sum();
        0.5 + 0.5 * v / total
    }
}

/// Gaussian-lobe receive coils with smooth linear phase, normalized so the
/// sum of squared magnitudes is one at every voxel.
pub fn make_coils(grid: Grid, n_coils: usize) -> Result<CoilSet> {
    grid.validate()?;
    if n_coils == 0 {
        return Err(Error::invalid("need at least one coil"));
    }
    let n = grid.len();
    if n_coils == 1 {
        return Ok(CoilSet { grid, sens: vec![vec![C64::new(1.0, 0.0); n]] });
    }
    let radius = 1.3;
    let width = 0.9;
    let golden = PI * (3.0 - 5f64.sqrt());
    let centers: Vec<[f64; 3]> = (0..n_coils)
        .map(|i| {
            if grid.is_2d() {
                let a = 2.0 * PI * i as f64 / n_coils as f64;
                [radius * a.cos(), radius * a.sin(), 0.0]
            } else {
                let zf = 1.0 - 2.0 * (i as f64 + 0.5) / n_coils as f64;
                let r = (1.0 - zf * zf).sqrt();
                let a = golden * i as f64;
                [radius * r * a.cos(), radius * r * a.sin(), radius * zf]
            }
        })
        .collect();
    let mut sens: Vec<Vec<C64>> = centers
        .iter()
        .enumerate()
        .map(|(c, ctr)| {
            let a = 2.0 * PI * c as f64 / n_coils as f64;
            let (gx, gy, gz) = (0.5 * a.cos(), 0.5 * a.sin(), 0.3 * (2.0 * a).sin());
            (0..n)
                .map(|i| {
                    let (x, y, z) = norm_coords(&grid, i);
                    let d2 = (x - ctr[0]).powi(2) + (y - ctr[1]).powi(2) + (z - ctr[2]).powi(2);
                    let mag = (-d2 / (2.0 * width * width)).exp();
                    C64::from_polar(mag, a + PI * (gx * x + gy * y + gz * z))
                })
                .collect()
        })
        .collect();
    let sos: Vec<f64> = (0..n).map(|i| sens.iter().map(|s| s[i].norm_sqr()).sum::<f64>().sqrt()).collect();
    for s in sens.iter_mut() {
        for (v, r) in s.iter_mut().zip(&sos) {
            *v /= r;
        }
    }
    let coils = CoilSet { grid, sens };
    coils.validate()?;
    Ok(coils)
}

/// Smooth polynomial field of peak `|smooth_amp|` plus a Gaussian bump of
/// peak `bump_amp` (FWHM 3 voxels) placed inside the central region.
pub fn make_b0(grid: Grid, smooth_amp: f64, bump_amp: f64, seed: u64) -> Result<B0Map> {
    grid.validate()?;
    if !smooth_amp.is_finite() || !bump_amp.is_finite() {
        return Err(Error::invalid("b0 amplitudes must be finite"));
    }
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut hz: Vec<f64> = (0..n)
        .map(|i| {
            let (x, y, z) = norm_coords(&grid, i);
            let terms = [x, y, x * x, x * y, y * y, z, z * z];
            terms.iter().zip(&coeffs).map(|(t, c)| t * c).sum()
        })
        .collect();
    let peak = hz.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smooth_scale = if peak > 0.0 { smooth_amp / peak } else { 0.0 };
    hz.iter_mut().for_each(|v| *v *= smooth_scale);

    let (cx, cy, cz) = bump_center(&grid, seed);
    let sigma = 3.0 / (2.0 * (2.0 * 2f64.ln()).sqrt());
    for (i, v) in hz.iter_mut().enumerate() {
        let (x, y, z) = grid.coords(i);
        let mut d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        if !grid.is_2d() {
            d2 += (z as f64 - cz).powi(2);
        }
        *v += bump_amp * (-d2 / (2.0 * sigma * sigma)).exp();
    }
    Ok(B0Map { grid, hz, resolution: Resolution::High })
}

/// Voxel position of the susceptibility bump used by [`make_b0`].
pub fn bump_center(grid: &Grid, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b0b0);
    let pick = |rng: &mut ChaCha8Rng, n: usize| {
        if n == 1 {
            0.0
        } else {
            let half = (n - 1) as f64 / 2.0;
            (half + rng.random_range(-0.3..0.3) * half).round()
        }
    };
    let cx = pick(&mut rng, grid.nx);
    let cy = pick(&mut rng, grid.ny);
    let cz = pick(&mut rng, grid.nz);
    (cx, cy, cz)
}

/// Keep the central `fraction` of k-space along every axis with more than
/// one sample. Mimics a map estimated from low-resolution calibration data.
pub fn low_res_b0(map: &B0Map, fraction: f64) -> Result<B0Map> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("crop fraction must lie in (0, 1]"));
    }
    let g = map.grid;
    let plan = VolumeFft::new(g.nx, g.ny, g.nz);
    let mut k: Vec<C64> = map.hz.iter().map(|&v| C64::new(v, 0.0)).collect();
    plan.xyz(&mut k, Direction::Forward);
    let keep = |i: usize, n: usize| {
        if n == 1 {
            return true;
        }
        let half_width = (fraction * n as f64 / 2.0).max(0.5);
        (i as f64 - (n / 2) as f64).abs() < half_width
    };
    for (i, v) in k.iter_mut().enumerate() {
        let (x, y, z) = g.coords(i);
        if !(keep(x, g.nx) && keep(y, g.ny) && keep(z, g.nz)) {
            *v = C64::new(0.0, 0.0);
        }
    }
    plan.xyz(&mut k, Direction::Inverse);
    Ok(B0Map { grid: g, hz: k.iter().map(|v| v.re).collect(), resolution: Resolution::Low })
}

/// Lattice used to measure field statistics on [-1, 1]^2.
const STAT_LATTICE: usize = 33;

fn lattice_fields(coeffs: &[[f64; POLY_TERMS]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(STAT_LATTICE * STAT_LATTICE);
    for j in 0..STAT_LATTICE {
        for i in 0..STAT_LATTICE {
            let a = poly_basis(Grid::normalized(i, STAT_LATTICE), Grid::normalized(j, STAT_LATTICE));
            out.push(coeffs.iter().map(|c| a.iter().zip(c).map(|(a, c)| a * c).sum()).collect());
        }
    }
    out
}

/// Mean over the lattice of the across-shot (population) standard deviation.
pub fn mean_shot_std(coeffs: &[[f64; POLY_TERMS]]) -> f64 {
    let fields = lattice_fields(coeffs);
    let n = coeffs.len() as f64;
    fields
        .iter()
        .map(|f| {
            let m = f.iter().sum::<f64>() / n;
            (f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .sum::<f64>()
        / fields.len() as f64
}

/// Largest absolute field value over the lattice and shots.
pub fn peak_field(coeffs: &[[f64; POLY_TERMS]]) -> f64 {
    lattice_fields(coeffs).iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Relative spread of the polynomial terms: mostly a global offset with
/// smaller linear and quadratic components.
const TERM_WEIGHTS: [f64; POLY_TERMS] = [1.0, 0.5, 0.5, 0.25, 0.25, 0.25];

fn draw_variation(n_shots: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; POLY_TERMS]> {
    let mut coeffs: Vec<[f64; POLY_TERMS]> = (0..n_shots)
        .map(|_| {
            let mut c = [0.0; POLY_TERMS];
            for (v, w) in c.iter_mut().zip(TERM_WEIGHTS) {
                let g: f64 = StandardNormal.sample(rng);
                *v = w * g;
            }
            c
        })
        .collect();
    for t in 0..POLY_TERMS {
        let mean = coeffs.iter().map(|c| c[t]).sum::<f64>() / n_shots as f64;
        coeffs.iter_mut().for_each(|c| c[t] -= mean);
    }
    let s = mean_shot_std(&coeffs);
    let scale = if s > 0.0 { sigma / s } else { 0.0 };
    coeffs.iter_mut().flatten().for_each(|v| *v *= scale);
    coeffs
}

/// Zero-mean per-shot 2nd-order polynomial fields whose voxelwise
/// across-shot standard deviation averages `sigma` Hz over [-1, 1]^2.
pub fn make_shot_variation(n_shots: usize, sigma: f64, seed: u64) -> Result<ShotVariation> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and nonnegative"));
    }
    if n_shots == 0 {
        return Err(Error::invalid("need at least one shot"));
    }
    if sigma == 0.0 || n_shots == 1 {
        return Ok(ShotVariation::zeros(n_shots));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ShotVariation { coeffs: draw_variation(n_shots, sigma, &mut rng), b_var: Vec::new() })
}

/// As [`make_shot_variation`], redrawing until every field stays within
/// `peak_cap` Hz.
pub fn make_shot_variation_capped(n_shots: usize, sigma: f64, peak_cap: f64, seed: u64) -> Result<ShotVariation> {
    let first = make_shot_variation(n_shots, sigma, seed)?;
    if first.is_zero() {
        return Ok(first);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let coeffs = draw_variation(n_shots, sigma, &mut rng);
        if peak_field(&coeffs) <= peak_cap {
            return Ok(ShotVariation { coeffs, b_var: Vec::new() });
        }
    }
    Err(Error::invalid(format!("no variation with sigma {sigma} Hz stays under {peak_cap} Hz")))
}
