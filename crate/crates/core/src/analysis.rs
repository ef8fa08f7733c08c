//! Error metrics, relaxometry and point-spread analysis.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::{
    B0Map, EchoTrain, Grid, ImageSeries, KtData, Layout, SamplingPattern, ShotVariation, SubspaceBasis, TrainKind,
    C64, POLY_TERMS,
};
use crate::error::{Error, Result};
use crate::fft::{Direction, VolumeFft};
use crate::operators::ForwardModel;
use crate::phantom::make_coils;
use crate::recon::{background_phase_images, estimate_bvar, solve_hybrid, ReconConfig};
use crate::signal::simulate_evolution;

/// `100 ||x| - |ref|| / ||ref||` over all echoes and masked voxels.
pub fn rmse_percent(x: &ImageSeries, reference: &ImageSeries, mask: &[bool]) -> Result<f64> {
    let echoes: Vec<usize> = (0..reference.len()).collect();
    rmse_percent_echoes(x, reference, mask, &echoes)
}

/// [`rmse_percent`] restricted to the listed echoes.
pub fn rmse_percent_echoes(x: &ImageSeries, reference: &ImageSeries, mask: &[bool], echoes: &[usize]) -> Result<f64> {
    if !x.grid.same_shape(&reference.grid) || x.len() != reference.len() || mask.len() != x.grid.len() {
        return Err(Error::dim("rmse inputs differ in shape"));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("rmse mask is empty"));
    }
    if echoes.is_empty() || echoes.iter().any(|&e| e >= x.len()) {
        return Err(Error::invalid("rmse echo selection is empty or out of range"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &e in echoes {
        for ((a, b), &m) in x.images[e].iter().zip(&reference.images[e]).zip(mask) {
            if m {
                num += (a.norm() - b.norm()).powi(2);
                den += b.norm_sqr();
            }
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("reference is zero inside the mask"));
    }
    Ok(100.0 * (num / den).sqrt())
}

pub const T2S_BOUNDS: (f64, f64) = (0.1, 2000.0);

/// Echo indices of the gradient-echo regime.
pub fn ge_echoes(train: &EchoTrain) -> Vec<usize> {
    match train.kind {
        TrainKind::Ge => (0..train.len()).collect(),
        TrainKind::Gese => (0..train.n_ge).collect(),
    }
}

/// Weighted log-linear T2* fit over the GE echoes. Returns `(t2s, pd)` maps;
/// voxels outside `mask` are zero.
pub fn fit_t2star(series: &ImageSeries, train: &EchoTrain, mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if series.len() != train.len() || mask.len() != series.grid.len() {
        return Err(Error::dim("series, train and mask disagree"));
    }
    let ge = ge_echoes(train);
    if ge.len() < 3 {
        return Err(Error::invalid("T2* fitting needs at least 3 gradient echoes"));
    }
    let n = series.grid.len();
    let mut t2s = vec![0.0; n];
    let mut pd = vec![0.0; n];
    for i in (0..n).filter(|&i| mask[i]) {
        let (mut sw, mut st, mut sv, mut stt, mut stv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &e in &ge {
            let s = series.images[e][i].norm();
            if s == 0.0 {
                continue;
            }
            let w = s * s;
            let t = train.echo_times[e];
            let v = s.ln();
            sw += w;
            st += w * t;
            sv += w * v;
            stt += w * t * t;
            stv += w * t * v;
        }
        if sw == 0.0 {
            return Err(Error::invalid(format!("voxel {i} is zero at every gradient echo")));
        }
        let den = sw * stt - st * st;
        let slope = if den > 0.0 { (sw * stv - st * sv) / den } else { 0.0 };
        let intercept = (sv - slope * st) / sw;
        t2s[i] = if slope < 0.0 { (-1.0 / slope).clamp(T2S_BOUNDS.0, T2S_BOUNDS.1) } else { T2S_BOUNDS.1 };
        pd[i] = intercept.exp();
    }
    Ok((t2s, pd))
}

/// Phase at the echo nearest `te_ref` with the B0 phase of that echo removed,
/// wrapped to `(-pi, pi]`.
pub fn tissue_phase(series: &ImageSeries, b0: &B0Map, train: &EchoTrain, te_ref: f64) -> Result<Vec<f64>> {
    if series.len() != train.len() || !b0.grid.same_shape(&series.grid) {
        return Err(Error::dim("series, b0 map and train disagree"));
    }
    let first = train.echo_times[0];
    let last = *train.echo_times.last().unwrap();
    if !(te_ref >= first && te_ref <= last) {
        return Err(Error::invalid(format!("te_ref {te_ref} ms outside [{first}, {last}]")));
    }
    let e = train.nearest_echo(te_ref);
    let w = 2.0 * PI * train.echo_times[e] / 1000.0;
    Ok(series.images[e].iter().zip(&b0.hz).map(|(v, &hz)| wrap(v.arg() - w * hz)).collect())
}

pub fn wrap(phi: f64) -> f64 {
    let mut p = phi % (2.0 * PI);
    if p <= -PI {
        p += 2.0 * PI;
    } else if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Median of `map` over masked voxels of each nonzero label, sorted by label.
pub fn region_medians(map: &[f64], labels: &[u32], mask: &[bool]) -> Vec<(u32, f64, usize)> {
    let mut by_label: std::collections::BTreeMap<u32, Vec<f64>> = Default::default();
    for ((&v, &l), &m) in map.iter().zip(labels).zip(mask) {
        if m && l != 0 {
            by_label.entry(l).or_default().push(v);
        }
    }
    by_label
        .into_iter()
        .map(|(l, mut v)| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let med = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
            (l, med, n)
        })
        .collect()
}

/// Point-spread function of per-shot phase errors.
#[derive(Clone, Debug, PartialEq)]
pub struct PsfReport {
    pub layout: Layout,
    pub sigma: f64,
    pub corrected: bool,
    /// Peak-normalized magnitude on the `(ny, nz)` phase-encoding grid, y fastest.
    pub psf: Vec<f64>,
    pub dims: (usize, usize),
    /// Largest value more than one voxel away from the peak (fraction of peak).
    pub max_side_lobe: f64,
    /// Per-shot field offsets that were applied (Hz).
    pub offsets: Vec<f64>,
    /// Per-shot offsets left after correction (Hz); equals `offsets` when uncorrected.
    pub residual: Vec<f64>,
}

#[derive(Clone)]
pub struct PsfSetup {
    pub pattern: Arc<SamplingPattern>,
    pub train: Arc<EchoTrain>,
    pub basis: Arc<SubspaceBasis>,
    pub n_coils: usize,
    /// Echo time at which the PSF is evaluated (ms).
    pub te_ref: f64,
    /// Estimation rounds of the correction.
    pub loops: usize,
    pub recon: ReconConfig,
}

/// The shot whose phase each (ky, kz) position carries.
///
/// Block patterns assign every position of a block to the shot that covers
/// it. Otherwise an acquired position takes the shot that acquires it
/// closest to `te_ref`, and a never-acquired one that of the nearest
/// acquired position.
pub fn shot_owner(pattern: &SamplingPattern, train: &EchoTrain, te_ref: f64) -> Vec<usize> {
    let (ny, nz) = (pattern.ny, pattern.nz);
    let mut owner = vec![usize::MAX; ny * nz];
    if pattern.layout == Layout::ThreeD && !pattern.family.is_vds() && pattern.n_shots > 0 {
        let (by, bz) = pattern.block;
        let nby = ny / by;
        let mut block_shot = vec![usize::MAX; nby * (nz / bz)];
        for s in 0..pattern.n_shots {
            let (ky, kz) = pattern.line(s, 0);
            block_shot[ky / by + nby * (kz / bz)] = s;
        }
        for kz in 0..nz {
            for ky in 0..ny {
                owner[ky + ny * kz] = block_shot[ky / by + nby * (kz / bz)];
            }
        }
        if owner.iter().all(|&o| o != usize::MAX) {
            return owner;
        }
        owner.iter_mut().for_each(|o| *o = usize::MAX);
    }
    let mut best_dt = vec![f64::INFINITY; ny * nz];
    for s in 0..pattern.n_shots {
        for e in 0..pattern.n_echoes {
            let (ky, kz) = pattern.line(s, e);
            let p = ky + ny * kz;
            let dt = (train.echo_times[e] - te_ref).abs();
            if dt < best_dt[p] {
                best_dt[p] = dt;
                owner[p] = s;
            }
        }
    }
    let acquired: Vec<(usize, usize)> =
        (0..ny * nz).filter(|&p| owner[p] != usize::MAX).map(|p| (p % ny, p / ny)).collect();
    let filled = owner.clone();
    for p in 0..ny * nz {
        if filled[p] != usize::MAX {
            continue;
        }
        let (y, z) = ((p % ny) as f64, (p / ny) as f64);
        let nearest = acquired
            .iter()
            .min_by(|a, b| {
                let da = (a.0 as f64 - y).powi(2) + (a.1 as f64 - z).powi(2);
                let db = (b.0 as f64 - y).powi(2) + (b.1 as f64 - z).powi(2);
                da.total_cmp(&db)
            })
            .expect("pattern acquires at least one line");
        owner[p] = filled[nearest.0 + ny * nearest.1];
    }
    owner
}

/// Peak-normalized PSF of the phase pattern `theta` on the `(ny, nz)` grid and its
/// largest side lobe outside one voxel of the peak.
pub fn psf_of_phase(theta: &[f64], ny: usize, nz: usize) -> (Vec<f64>, f64) {
    let mut k: Vec<C64> = theta.iter().map(|&t| C64::from_polar(1.0, t)).collect();
    let fft = VolumeFft::new(1, ny, nz);
    fft.yz(&mut k, Direction::Inverse);
    let mag: Vec<f64> = k.iter().map(|v| v.norm()).collect();
    let (peak_i, peak) = mag.iter().enumerate().fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let psf: Vec<f64> = mag.iter().map(|v| v / peak).collect();
    let (py, pz) = ((peak_i % ny) as isize, (peak_i / ny) as isize);
    let circ = |a: isize, b: isize, n: usize| {
        let d = (a - b).rem_euclid(n as isize);
        d.min(n as isize - d)
    };
    let mut side = 0.0f64;
    for (i, &v) in psf.iter().enumerate() {
        let (y, z) = ((i % ny) as isize, (i / ny) as isize);
        if circ(y, py, ny) > 1 || circ(z, pz, nz) > 1 {
            side = side.max(v);
        }
    }
    (psf, side)
}

fn constant_variation(offsets: &[f64]) -> ShotVariation {
    // The model phase is B0 - A c_var, so a field offset d is c_var = -d.
    ShotVariation {
        coeffs: offsets
            .iter()
            .map(|&d| {
                let mut c = [0.0; POLY_TERMS];
                c[0] = -d;
                c
            })
            .collect(),
        b_var: Vec::new(),
    }
}

/// Simulate a point source under per-shot field offsets, estimate the
/// offsets from the data as the coil-mean field change against the
/// reconstruction, and return the estimate (Hz per shot).
fn estimate_offsets(setup: &PsfSetup, offsets: &[f64]) -> Result<Vec<f64>> {
    let p = &setup.pattern;
    let grid = Grid::new(1, p.ny, p.nz)?;
    let coils = Arc::new(make_coils(grid, setup.n_coils)?);
    let signal = simulate_evolution(80.0, 50.0, 1.0, &setup.train)?;
    let centre = grid.index(0, p.ny / 2, p.nz / 2);
    let images = ImageSeries {
        grid,
        images: signal
            .iter()
            .map(|&s| {
                let mut img = vec![C64::new(0.0, 0.0); grid.len()];
                img[centre] = C64::new(s, 0.0);
                img
            })
            .collect(),
    };
    let truth = ForwardModel::new(grid, coils.clone(), p.clone(), setup.train.clone(), setup.basis.clone())?
        .with_variation(&constant_variation(offsets))?
        .force_generic(true);
    let yh: KtData = truth.forward_series_hybrid(&images)?;
    let mut model = ForwardModel::new(grid, coils, p.clone(), setup.train.clone(), setup.basis.clone())?;
    let mut estimate = vec![0.0; offsets.len()];
    let mut c: Option<Vec<C64>> = None;
    for _ in 0..setup.loops.max(1) {
        model.set_variation(Some(&constant_variation(&estimate)))?;
        let coef = solve_hybrid(&model, &yh, &setup.recon, c.as_deref())?;
        // Predict from TE-linear-phase-free images, as the pipeline does;
        // the raw solve has already absorbed most of the offsets.
        let images = model.unflatten(coef.clone()).to_images(&setup.basis);
        let fixed = background_phase_images(&images, &setup.train.echo_times)?;
        let pred = model.forward_series_hybrid(&fixed)?;
        let b_var = estimate_bvar(&yh, &pred)?;
        for (est, row) in estimate.iter_mut().zip(&b_var) {
            *est += row.iter().sum::<f64>() / row.len() as f64;
        }
        c = Some(coef);
    }
    Ok(estimate)
}

/// PSF at `te_ref` of a point source acquired with per-shot B0 offsets of
/// standard deviation `sigma` (Hz), optionally after data-driven correction.
pub fn psf_analysis(setup: &PsfSetup, sigma: f64, corrected: bool, seed: u64) -> Result<PsfReport> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and non-negative"));
    }
    let p = &setup.pattern;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<f64> = (0..p.n_shots)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();
    let residual = if corrected && sigma > 0.0 {
        let est = estimate_offsets(setup, &offsets)?;
        offsets.iter().zip(&est).map(|(d, e)| d - e).collect()
    } else {
        offsets.clone()
    };
    let owner = shot_owner(p, &setup.train, setup.te_ref);
    let w = 2.0 * PI * setup.te_ref / 1000.0;
    let theta: Vec<f64> = owner.iter().map(|&s| w * residual[s]).collect();
    let (psf, max_side_lobe) = psf_of_phase(&theta, p.ny, p.nz);
    Ok(PsfReport {
        layout: p.layout,
        sigma,
        corrected,
        psf,
        dims: (p.ny, p.nz),
        max_side_lobe,
        offsets,
        residual,
    })
}
