//! Synthetic k-t acquisition of a phantom.
//!
//! Noise is keyed by `(echo, coil, ky, kz)` rather than drawn in sequence,
//! so undersampling fully sampled data gives exactly the samples a direct
//! simulation of the undersampled pattern produces.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::datamodel::{
    B0Map, CoefficientMaps, CoilSet, EchoTrain, ImageSeries, KtData, SamplingPattern, ShotVariation,
    SubspaceBasis, TissuePhantom, C64,
};
use crate::error::{Error, Result};
use crate::fft::{Direction, VolumeFft};
use crate::operators::{to_kspace, ForwardModel};
use crate::signal::simulate_evolution;

#[derive(Clone, Debug, Default)]
pub struct SimOptions {
    /// Standard deviation of the complex noise per k-space sample.
    pub noise_std: f64,
    pub seed: u64,
    pub variation: Option<ShotVariation>,
}

/// Echo magnitudes `pd * s(TE)` of every voxel, without any phase.
pub fn truth_series(phantom: &TissuePhantom, train: &EchoTrain) -> Result<ImageSeries> {
    phantom.validate()?;
    let n = phantom.grid.len();
    let t = train.len();
    let per_voxel: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if phantom.pd[i] == 0.0 {
                return Ok(None);
            }
            simulate_evolution(phantom.t2[i], phantom.t2s[i], phantom.se_scale[i], train).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut images = vec![vec![C64::new(0.0, 0.0); n]; t];
    for (i, s) in per_voxel.iter().enumerate() {
        if let Some(s) = s {
            for e in 0..t {
                images[e][i] = C64::new(phantom.pd[i] * s[e], 0.0);
            }
        }
    }
    Ok(ImageSeries { grid: phantom.grid, images })
}

/// Echo images including the phantom's tissue phase and B0 phase.
pub fn phased_truth(phantom: &TissuePhantom, train: &EchoTrain) -> Result<ImageSeries> {
    let mut series = truth_series(phantom, train)?;
    for (e, img) in series.images.iter_mut().enumerate() {
        let w = 2.0 * PI * train.echo_times[e] / 1000.0;
        for (i, v) in img.iter_mut().enumerate() {
            *v *= C64::from_polar(1.0, phantom.phase0[i] + w * phantom.b0[i]);
        }
    }
    Ok(series)
}

/// Noise of one acquired line in k-space.
pub fn line_noise(seed: u64, echo: usize, coil: usize, ky: usize, kz: usize, nx: usize, std: f64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = ((echo as u64) << 40) ^ ((coil as u64) << 28) ^ ((kz as u64) << 16) ^ ky as u64;
    rng.set_stream(key);
    let s = std / 2f64.sqrt();
    (0..nx)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(s * re, s * im)
        })
        .collect()
}

/// Simulate the k-space samples that `pattern` acquires from `phantom`.
pub fn simulate_kt(
    phantom: &TissuePhantom,
    coils: Arc<CoilSet>,
    pattern: Arc<SamplingPattern>,
    train: Arc<EchoTrain>,
    basis: Arc<SubspaceBasis>,
    opts: &SimOptions,
) -> Result<KtData> {
    check_noise(opts)?;
    let grid = phantom.grid;
    let mut model = ForwardModel::new(grid, coils, pattern.clone(), train.clone(), basis)?
        .with_b0(&B0Map { grid, hz: phantom.b0.clone(), resolution: crate::datamodel::Resolution::High })?
        .with_static_phase(phantom.phase0.clone())?
        .force_generic(true);
    if let Some(v) = &opts.variation {
        model.set_variation(Some(v))?;
    }
    let series = truth_series(phantom, &train)?;
    let mut y = to_kspace(&model.forward_series_hybrid(&series)?);
    if opts.noise_std > 0.0 {
        let nc = y.n_coils;
        for s in 0..pattern.n_shots {
            for c in 0..nc {
                for e in 0..pattern.n_echoes {
                    let (ky, kz) = pattern.line(s, e);
                    let noise = line_noise(opts.seed, e, c, ky, kz, grid.nx, opts.noise_std);
                    y.line_mut(s, c, e).iter_mut().zip(&noise).for_each(|(v, n)| *v += n);
                }
            }
        }
    }
    Ok(y)
}

/// `A^H y_full` for fully sampled data, computed one echo and coil at a
/// time so the full data set is never stored. The adjoint uses `recon_b0`
/// (zero if `None`) and no tissue phase; with coil maps normalized to
/// `sum |S|^2 = 1` this is the least-squares fit to the full data.
pub fn reference_coefficients(
    phantom: &TissuePhantom,
    coils: &CoilSet,
    train: &EchoTrain,
    basis: &SubspaceBasis,
    recon_b0: Option<&B0Map>,
    opts: &SimOptions,
) -> Result<CoefficientMaps> {
    check_noise(opts)?;
    if opts.variation.as_ref().is_some_and(|v| !v.is_zero()) {
        return Err(Error::invalid("shot variation is undefined for the fully sampled reference"));
    }
    let grid = phantom.grid;
    if !coils.grid.same_shape(&grid) {
        return Err(Error::dim("coil maps do not match the phantom"));
    }
    if basis.n_echoes != train.len() {
        return Err(Error::dim("basis and echo train disagree on echo count"));
    }
    if let Some(b) = recon_b0 {
        if !b.grid.same_shape(&grid) {
            return Err(Error::dim("b0 map does not match the phantom"));
        }
    }
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let n = grid.len();
    let fft = VolumeFft::new(nx, ny, nz);
    let xfft = VolumeFft::new(nx, 1, 1);
    let truth = phased_truth(phantom, train)?;
    let mut maps = vec![vec![C64::new(0.0, 0.0); n]; basis.k];
    for e in 0..train.len() {
        let img = &truth.images[e];
        let per_coil: Vec<Vec<C64>> = (0..coils.n_coils())
            .into_par_iter()
            .map(|c| {
                let sens = &coils.sens[c];
                let mut tmp: Vec<C64> = sens.iter().zip(img).map(|(s, v)| s * v).collect();
                fft.yz(&mut tmp, Direction::Forward);
                if opts.noise_std > 0.0 {
                    for kz in 0..nz {
                        for ky in 0..ny {
                            let mut noise = line_noise(opts.seed, e, c, ky, kz, nx, opts.noise_std);
                            xfft.x_line(&mut noise, Direction::Inverse);
                            let o = nx * (ky + ny * kz);
                            tmp[o..o + nx].iter_mut().zip(&noise).for_each(|(v, w)| *v += w);
                        }
                    }
                }
                fft.yz(&mut tmp, Direction::Inverse);
                tmp.iter_mut().zip(sens).for_each(|(v, s)| *v *= s.conj());
                tmp
            })
            .collect();
        let mut acc = vec![C64::new(0.0, 0.0); n];
        for tmp in &per_coil {
            acc.iter_mut().zip(tmp).for_each(|(a, v)| *a += v);
        }
        if let Some(b) = recon_b0 {
            let w = 2.0 * PI * train.echo_times[e] / 1000.0;
            acc.iter_mut().zip(&b.hz).for_each(|(a, &hz)| *a *= C64::from_polar(1.0, -w * hz));
        }
        for (j, map) in maps.iter_mut().enumerate() {
            let w = basis.get(e, j).conj();
            map.iter_mut().zip(&acc).for_each(|(m, v)| *m += w * v);
        }
    }
    Ok(CoefficientMaps { grid, maps })
}

fn check_noise(opts: &SimOptions) -> Result<()> {
    if !(opts.noise_std >= 0.0 && opts.noise_std.is_finite()) {
        return Err(Error::invalid("noise_std must be finite and non-negative"));
    }
    Ok(())
}
