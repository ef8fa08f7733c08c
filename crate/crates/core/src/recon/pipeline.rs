//! The outer reconstruction loop: subspace solve, B0 refinement and
//! shot-variation correction, repeated.

use super::{background_phase_images, b0_update_hybrid, estimate_bvar, fit_variation_poly_truncated, solve_hybrid, ReconConfig};
use crate::datamodel::{B0Map, CoefficientMaps, ImageSeries, KtData, Layout, ShotVariation, C64};
use crate::error::Result;
use crate::operators::{to_hybrid, ForwardModel};

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub coefficients: CoefficientMaps,
    pub images: ImageSeries,
    pub b0: B0Map,
    pub variation: ShotVariation,
    pub history: Vec<LoopStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopStats {
    /// `||A c - y||` after the subspace solve.
    pub residual: f64,
    /// Residual after the variation update and a re-solve, if one ran.
    pub residual_after_variation: Option<f64>,
    /// Step applied to the fitted variation (1 = full update, 0 = rejected).
    pub variation_step: Option<f64>,
}

const VARIATION_TRIES: usize = 4;
const VARIATION_RCOND: f64 = 1e-2;

fn residual_norm(model: &ForwardModel, c: &[C64], yh: &KtData) -> f64 {
    let pred = model.forward_hybrid(c);
    pred.samples.iter().zip(&yh.samples).map(|(p, y)| (p - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Reconstruct k-space data `y` with `model` (its coils, pattern, train and
/// basis), starting from `b0_init`.
///
/// Each loop solves for the coefficients, then (if enabled) refines B0 with
/// the resulting echo images fixed, then (if enabled) estimates the per-shot
/// field change and folds it into the model. Both updates see the images
/// with their TE-linear phase removed (see [`background_phase_images`]), since
/// the solve absorbs part of any field error into the coefficients.
///
/// A variation update is kept only if re-solving with it does not raise the
/// data residual; otherwise its step is halved, and after
/// `VARIATION_TRIES` failures it is dropped. After the last loop the
/// coefficients are solved once more with the final phase model.
pub fn reconstruct_pipeline(
    mut model: ForwardModel,
    y: &KtData,
    b0_init: &B0Map,
    cfg: &ReconConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let yh = to_hybrid(y);
    let n_shots = model.pattern().n_shots;
    let correct_variation = cfg.variation_correction.unwrap_or(model.pattern().layout == Layout::TwoD);
    let updates = cfg.b0_update || correct_variation;
    let mut b0 = b0_init.clone();
    let mut variation = model.variation().cloned().unwrap_or_else(|| ShotVariation::zeros(n_shots));
    model.set_b0(&b0)?;
    let mut c: Option<Vec<C64>> = None;
    let mut history = Vec::new();
    for lp in 0..cfg.outer_loops {
        let coef = solve_hybrid(&model, &yh, cfg, c.as_deref())?;
        let mut stats = LoopStats {
            residual: residual_norm(&model, &coef, &yh),
            residual_after_variation: None,
            variation_step: None,
        };
        log::info!("loop {lp}: data residual {:.6e}", stats.residual);
        let mut coef = coef;
        if updates {
            let images = model.unflatten(coef.clone()).to_images(model.basis());
            let fixed = background_phase_images(&images, &model.train().echo_times)?;
            if cfg.b0_update {
                b0 = b0_update_hybrid(&mut model, &yh, &fixed, &b0, cfg)?;
            }
            if correct_variation {
                let before = residual_norm(&model, &coef, &yh);
                let pred = model.forward_series_hybrid(&fixed)?;
                let b_var = estimate_bvar(&yh, &pred)?;
                let fit = fit_variation_poly_truncated(&b_var, &fixed, model.coils(), VARIATION_RCOND)?;
                let mut step = 1.0;
                let mut accepted = None;
                for _ in 0..VARIATION_TRIES {
                    let mut cand = variation.clone();
                    for (cc, f) in cand.coeffs.iter_mut().zip(&fit.coeffs) {
                        for (a, b) in cc.iter_mut().zip(f) {
                            *a -= step * b;
                        }
                    }
                    cand.b_var = b_var.clone();
                    model.set_variation(Some(&cand))?;
                    let resolved = solve_hybrid(&model, &yh, cfg, Some(&coef))?;
                    let after = residual_norm(&model, &resolved, &yh);
                    if after <= before {
                        accepted = Some((cand, resolved, after));
                        break;
                    }
                    step *= 0.5;
                }
                match accepted {
                    Some((cand, resolved, after)) => {
                        variation = cand;
                        coef = resolved;
                        stats.residual_after_variation = Some(after);
                        stats.variation_step = Some(step);
                    }
                    None => {
                        model.set_variation(Some(&variation))?;
                        stats.residual_after_variation = Some(before);
                        stats.variation_step = Some(0.0);
                    }
                }
            }
        }
        history.push(stats);
        c = Some(coef);
    }
    let coef = if updates { solve_hybrid(&model, &yh, cfg, c.as_deref())? } else { c.unwrap_or_default() };
    let coefficients = model.unflatten(coef);
    let images = coefficients.to_images(model.basis());
    Ok(PipelineOutput {
        coefficients,
        images,
        b0,
        variation,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{EchoTrain, Grid, SamplingPattern, SubspaceBasis};
    use crate::encoding::{epti_2d_pattern, full_pattern};
    use crate::phantom::{make_coils, make_phantom, make_shot_variation};
    use crate::recon::subspace_solve;
    use crate::signal::{build_dictionary, extract_basis, DictionaryRanges};
    use crate::simulate::{phased_truth, simulate_kt, SimOptions};
    use std::sync::Arc;

    const T: usize = 12;

    fn identity_basis() -> Arc<SubspaceBasis> {
        let mut phi = vec![C64::new(0.0, 0.0); T * T];
        for e in 0..T {
            phi[e * T + e] = C64::new(1.0, 0.0);
        }
        Arc::new(SubspaceBasis { n_echoes: T, k: T, phi, descriptor: String::new() })
    }

    struct Case {
        model: ForwardModel,
        y: KtData,
        truth: ImageSeries,
    }

    fn dictionary_basis(train: &EchoTrain, k: usize) -> Arc<SubspaceBasis> {
        let ranges = DictionaryRanges { steps: (16, 16, 1), scale: (1.0, 1.0), ..DictionaryRanges::standard() };
        Arc::new(extract_basis(&build_dictionary(&ranges, train).unwrap(), k).unwrap())
    }

    fn case(pattern: SamplingPattern, variation: Option<ShotVariation>, k: Option<usize>) -> Case {
        let grid = Grid::new(8, 24, 1).unwrap();
        let ph = make_phantom(grid, "ellipses", 3).unwrap();
        let coils = Arc::new(make_coils(grid, 8).unwrap());
        let train = Arc::new(EchoTrain::gradient_echo(T, 5.0, 2.0).unwrap());
        let pattern = Arc::new(pattern);
        let basis = k.map_or_else(identity_basis, |k| dictionary_basis(&train, k));
        let opts = SimOptions { variation, ..Default::default() };
        let y = simulate_kt(&ph, coils.clone(), pattern.clone(), train.clone(), basis.clone(), &opts).unwrap();
        let truth = phased_truth(&ph, &train).unwrap();
        let model = ForwardModel::new(grid, coils, pattern, train, basis).unwrap();
        Case { model, y, truth }
    }

    fn no_updates() -> ReconConfig {
        ReconConfig { outer_loops: 1, b0_update: false, variation_correction: Some(false), ..Default::default() }
    }

    #[test]
    fn single_loop_without_updates_is_the_plain_solve() {
        let c = case(epti_2d_pattern(24, T, 2, 8).unwrap(), None, None);
        let zero = B0Map::zeros(c.model.grid());
        let direct = subspace_solve(&c.model, &c.y, &no_updates()).unwrap();
        let out = reconstruct_pipeline(c.model, &c.y, &zero, &no_updates()).unwrap();
        assert_eq!(out.coefficients.maps, direct.maps);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.b0.hz, zero.hz);
    }

    #[test]
    fn full_sampling_recovers_noiseless_images() {
        let c = case(full_pattern(Layout::TwoD, 24, 1, T).unwrap(), None, None);
        let zero = B0Map::zeros(c.model.grid());
        let out = reconstruct_pipeline(c.model, &c.y, &zero, &no_updates()).unwrap();
        let scale = c.truth.images.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in out.images.images.iter().flatten().zip(c.truth.images.iter().flatten()) {
            assert!((a - b).norm() < 1e-6 * scale);
        }
    }

    #[test]
    fn zero_data_gives_zero_coefficients() {
        let mut c = case(epti_2d_pattern(24, T, 2, 8).unwrap(), None, None);
        c.y.samples.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        let zero = B0Map::zeros(c.model.grid());
        let cfg = ReconConfig { outer_loops: 2, variation_correction: Some(false), ..Default::default() };
        let out = reconstruct_pipeline(c.model, &c.y, &zero, &cfg).unwrap();
        assert!(out.coefficients.maps.iter().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn variation_updates_never_raise_the_residual() {
        let pattern = epti_2d_pattern(24, T, 2, 8).unwrap();
        let truth_var = make_shot_variation(pattern.n_shots, 2.0, 5).unwrap();
        let c = case(pattern, Some(truth_var), Some(3));
        let zero = B0Map::zeros(c.model.grid());
        let cfg = ReconConfig { outer_loops: 3, b0_update: false, variation_correction: Some(true), ..Default::default() };
        let out = reconstruct_pipeline(c.model, &c.y, &zero, &cfg).unwrap();
        for s in &out.history {
            let after = s.residual_after_variation.unwrap();
            assert!(after <= s.residual * (1.0 + 1e-12), "{after} > {}", s.residual);
        }
        assert!(out.history.last().unwrap().residual < out.history[0].residual);
    }
}
