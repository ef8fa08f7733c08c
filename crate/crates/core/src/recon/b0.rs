//! B0 refinement with fixed echo images.
//!
//! Minimizes `0.5 ||y - U F S (I e^{j 2 pi t B0})||^2 + lambda ||W B0||_1`
//! over the real field map by proximal gradient descent with backtracking,
//! where `W` is a 3-level Haar transform. The data term is divided by the
//! mean energy per acquired sample, `||y||^2 / M`, so `lambda` does not
//! depend on the intensity scale or the amount of data.

use std::f64::consts::PI;

use super::{wavelet, ReconConfig};
use crate::datamodel::{B0Map, ImageSeries, KtData, Resolution, C64};
use crate::error::{Error, Result};
use crate::operators::{to_hybrid, ForwardModel};

const LEVELS: usize = 3;

/// Data term `0.5 ||F(I) - y||^2` of hybrid data for the model's current B0.
pub fn b0_objective(model: &ForwardModel, images: &ImageSeries, yh: &KtData) -> Result<f64> {
    let pred = model.forward_series_hybrid(images)?;
    Ok(0.5 * pred.samples.iter().zip(&yh.samples).map(|(p, y)| (p - y).norm_sqr()).sum::<f64>())
}

/// Residual `F(I) - y` and the data term scaled by `scale`.
fn residual(model: &ForwardModel, images: &ImageSeries, yh: &KtData, scale: f64) -> Result<(KtData, f64)> {
    let mut r = model.forward_series_hybrid(images)?;
    let mut f = 0.0;
    for (p, y) in r.samples.iter_mut().zip(&yh.samples) {
        *p -= y;
        f += p.norm_sqr();
    }
    Ok((r, 0.5 * scale * f))
}

/// Gradient of the scaled data term with respect to B0 (per Hz).
fn gradient(model: &ForwardModel, images: &ImageSeries, r: &KtData, scale: f64) -> Result<Vec<f64>> {
    let h = model.adjoint_series_hybrid(r)?;
    let n = images.grid.len();
    let mut g = vec![0.0; n];
    for (e, (he, ie)) in h.images.iter().zip(&images.images).enumerate() {
        let w = 2.0 * PI * model.train().echo_times[e] / 1000.0;
        for i in 0..n {
            g[i] -= scale * w * (he[i].conj() * ie[i]).im;
        }
    }
    Ok(g)
}

/// Echo images with their phase reduced to a per-voxel constant.
///
/// The phase of every voxel is unwrapped along the echoes and fitted by a
/// line in TE weighted by `|I_e|`. The intercept is kept and the slope, which
/// a reconstruction with a wrong field map absorbs, is dropped so the B0
/// update sees it as field error.
pub fn background_phase_images(images: &ImageSeries, echo_times: &[f64]) -> Result<ImageSeries> {
    if images.images.len() != echo_times.len() {
        return Err(Error::dim("one echo time per image is required"));
    }
    let n = images.grid.len();
    let t = echo_times.len();
    let mut out = images.clone();
    let mut phase = vec![0.0; t];
    let mut weight = vec![0.0; t];
    for i in 0..n {
        for e in 0..t {
            let v = images.images[e][i];
            phase[e] = v.arg();
            weight[e] = v.norm();
        }
        let sw: f64 = weight.iter().sum();
        if sw == 0.0 {
            continue;
        }
        for e in 1..t {
            let d = phase[e] - phase[e - 1];
            phase[e] = phase[e - 1] + d - 2.0 * PI * (d / (2.0 * PI)).round();
        }
        let mt = echo_times.iter().zip(&weight).map(|(a, w)| a * w).sum::<f64>() / sw;
        let mp = phase.iter().zip(&weight).map(|(a, w)| a * w).sum::<f64>() / sw;
        let (mut num, mut den) = (0.0, 0.0);
        for e in 0..t {
            num += weight[e] * (echo_times[e] - mt) * (phase[e] - mp);
            den += weight[e] * (echo_times[e] - mt).powi(2);
        }
        let slope = if den > 0.0 { num / den } else { 0.0 };
        let bg = mp - slope * mt;
        for e in 0..t {
            out.images[e][i] = C64::from_polar(weight[e], bg);
        }
    }
    Ok(out)
}

/// Refine `b0_init` against k-space data `y`. The model is left holding the result.
pub fn b0_update(
    model: &mut ForwardModel,
    y: &KtData,
    images: &ImageSeries,
    b0_init: &B0Map,
    cfg: &ReconConfig,
) -> Result<B0Map> {
    b0_update_hybrid(model, &to_hybrid(y), images, b0_init, cfg)
}

pub fn b0_update_hybrid(
    model: &mut ForwardModel,
    yh: &KtData,
    images: &ImageSeries,
    b0_init: &B0Map,
    cfg: &ReconConfig,
) -> Result<B0Map> {
    let grid = model.grid();
    if !b0_init.grid.same_shape(&grid) || !images.grid.same_shape(&grid) {
        return Err(Error::dim("b0 map or images do not match the model"));
    }
    let lambda = cfg.b0_lambda;
    let energy = yh.norm_sqr();
    let mut b = b0_init.hz.clone();
    if energy == 0.0 {
        return Ok(B0Map { grid, hz: b, resolution: Resolution::High });
    }
    let scale = yh.samples.len() as f64 / energy;
    model.set_b0(&B0Map { grid, hz: b.clone(), resolution: Resolution::High })?;
    let (r, mut f) = residual(model, images, yh, scale)?;
    let mut g = gradient(model, images, &r, scale)?;
    // Curvature bound of the data term for unit operator norm.
    let curv: f64 = images
        .images
        .iter()
        .enumerate()
        .map(|(e, img)| {
            let w = 2.0 * PI * model.train().echo_times[e] / 1000.0;
            w * w * img.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max)
        })
        .sum::<f64>()
        * scale;
    if curv == 0.0 {
        return Ok(B0Map { grid, hz: b, resolution: Resolution::High });
    }
    let mut t = 1.0 / curv;
    for it in 0..cfg.b0_iters {
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = b.iter().zip(&g).map(|(b, g)| b - t * g).collect();
            wavelet::soft_threshold(&mut cand, &grid, LEVELS, lambda * t);
            model.set_b0(&B0Map { grid, hz: cand.clone(), resolution: Resolution::High })?;
            let (rc, fc) = residual(model, images, yh, scale)?;
            if !fc.is_finite() {
                return Err(Error::numerical(format!("non-finite b0 objective at iteration {it}")));
            }
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..b.len() {
                let d = cand[i] - b[i];
                lin += g[i] * d;
                sq += d * d;
            }
            if fc <= f + lin + sq / (2.0 * t) {
                accepted = Some((cand, rc, fc, sq));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, rc, fc, sq)) = accepted else { break };
        let moved = sq.sqrt();
        b = cand;
        f = fc;
        log::debug!("b0 iteration {it}: data term {f:.6e}, step {t:.3e}, change {moved:.3e}");
        if moved == 0.0 {
            break;
        }
        g = gradient(model, images, &rc, scale)?;
        t *= 1.5;
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite b0 iterate"));
    }
    let out = B0Map { grid, hz: b, resolution: Resolution::High };
    model.set_b0(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{EchoTrain, Grid, SubspaceBasis};
    use crate::encoding::epti_2d_pattern;
    use crate::phantom::{make_b0, make_coils};
    use std::sync::Arc;

    fn setup() -> (ForwardModel, ImageSeries, B0Map) {
        let grid = Grid::new(4, 24, 1).unwrap();
        let coils = Arc::new(make_coils(grid, 4).unwrap());
        let train = Arc::new(EchoTrain::gradient_echo(12, 4.0, 2.0).unwrap());
        let pattern = Arc::new(epti_2d_pattern(24, 12, 2, 8).unwrap());
        let basis = Arc::new(SubspaceBasis {
            n_echoes: 12,
            k: 1,
            phi: vec![C64::new(1.0 / 12f64.sqrt(), 0.0); 12],
            descriptor: String::new(),
        });
        let model = ForwardModel::new(grid, coils, pattern, train.clone(), basis).unwrap();
        let images = ImageSeries {
            grid,
            images: (0..12)
                .map(|e| {
                    (0..grid.len())
                        .map(|i| C64::from_polar(1.0 + (i % 5) as f64 / 5.0, 0.1 * i as f64) * (-(e as f64) / 20.0).exp())
                        .collect()
                })
                .collect(),
        };
        let b0 = make_b0(grid, 6.0, 0.0, 2).unwrap();
        (model, images, b0)
    }

    fn finite_difference(model: &mut ForwardModel, images: &ImageSeries, yh: &KtData, b: &[f64], i: usize) -> f64 {
        let grid = model.grid();
        let h = 1e-5;
        let mut p = b.to_vec();
        p[i] += h;
        model.set_b0(&B0Map { grid, hz: p.clone(), resolution: Resolution::High }).unwrap();
        let fp = b0_objective(model, images, yh).unwrap();
        p[i] -= 2.0 * h;
        model.set_b0(&B0Map { grid, hz: p, resolution: Resolution::High }).unwrap();
        let fm = b0_objective(model, images, yh).unwrap();
        (fp - fm) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mut model, images, truth) = setup();
        model.set_b0(&truth).unwrap();
        let yh = model.forward_series_hybrid(&images).unwrap();
        let b: Vec<f64> = truth.hz.iter().enumerate().map(|(i, v)| v + 2.0 * ((i * 7) % 3) as f64 - 2.0).collect();
        model.set_b0(&B0Map { grid: truth.grid, hz: b.clone(), resolution: Resolution::High }).unwrap();
        let (r, _) = residual(&model, &images, &yh, 1.0).unwrap();
        let g = gradient(&model, &images, &r, 1.0).unwrap();
        for i in [0, 17, 40, 95] {
            let fd = finite_difference(&mut model, &images, &yh, &b, i);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn true_map_is_a_fixed_point() {
        let (mut model, images, truth) = setup();
        model.set_b0(&truth).unwrap();
        let yh = model.forward_series_hybrid(&images).unwrap();
        let cfg = ReconConfig { b0_lambda: 0.0, ..Default::default() };
        let out = b0_update_hybrid(&mut model, &yh, &images, &truth, &cfg).unwrap();
        let dev = out.hz.iter().zip(&truth.hz).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6, "{dev}");
    }

    #[test]
    fn recovers_a_small_offset() {
        let (mut model, images, truth) = setup();
        model.set_b0(&truth).unwrap();
        let yh = model.forward_series_hybrid(&images).unwrap();
        let init = B0Map { grid: truth.grid, hz: truth.hz.iter().map(|v| v + 1.5).collect(), resolution: Resolution::Low };
        let cfg = ReconConfig { b0_iters: 200, b0_lambda: 0.0, ..Default::default() };
        let out = b0_update_hybrid(&mut model, &yh, &images, &init, &cfg).unwrap();
        let err = |m: &[f64]| (m.iter().zip(&truth.hz).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m.len() as f64).sqrt();
        assert!(err(&out.hz) < 0.1 * err(&init.hz), "{} vs {}", err(&out.hz), err(&init.hz));
    }

    #[test]
    fn background_phase_drops_the_te_slope() {
        let (model, images, b0) = setup();
        let tes = model.train().echo_times.clone();
        let mut phased = images.clone();
        for (e, img) in phased.images.iter_mut().enumerate() {
            for (i, v) in img.iter_mut().enumerate() {
                *v *= C64::from_polar(1.0, 2.0 * PI * b0.hz[i] * tes[e] / 1000.0);
            }
        }
        let out = background_phase_images(&phased, &tes).unwrap();
        for (a, b) in out.images.iter().flatten().zip(images.images.iter().flatten()) {
            assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()), "{a} vs {b}");
        }
        assert!(background_phase_images(&images, &tes[1..]).is_err());
    }
}
