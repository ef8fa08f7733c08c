//! Subspace reconstruction, B0 refinement and shot-variation correction.

mod b0;
mod cg;
mod llr;
mod pipeline;
mod variation;
pub mod wavelet;

pub use b0::{b0_objective, background_phase_images, b0_update, b0_update_hybrid};
pub use cg::{conjugate_residual, CgReport};
pub use llr::{fista_llr, llr_prox, llr_prox_flat, power_iteration};
pub use pipeline::{reconstruct_pipeline, LoopStats, PipelineOutput};
pub use variation::{estimate_bvar, fit_variation_poly, fit_variation_poly_truncated, variation_design};

use crate::datamodel::{CoefficientMaps, KtData, C64};
use crate::error::{Error, Result};
use crate::operators::{to_hybrid, ForwardModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegKind {
    None,
    Tikhonov,
    Llr,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::Tikhonov => "tikhonov",
            RegKind::Llr => "llr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(RegKind::None),
            "tikhonov" => Ok(RegKind::Tikhonov),
            "llr" => Ok(RegKind::Llr),
            other => Err(Error::invalid(format!("unknown regularizer '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub max_iter: usize,
    pub lambda: f64,
    pub reg_kind: RegKind,
    /// Patch edge length for LLR, in voxels.
    pub llr_block: usize,
    pub b0_iters: usize,
    pub b0_lambda: f64,
    pub outer_loops: usize,
    /// Relative residual at which the solvers stop early.
    pub tol: f64,
    pub b0_update: bool,
    /// `None` enables the correction for 2D patterns only.
    pub variation_correction: Option<bool>,
    /// Seeds the LLR patch shifts and the power iteration.
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            max_iter: 60,
            lambda: 0.0,
            reg_kind: RegKind::None,
            llr_block: 8,
            b0_iters: 50,
            b0_lambda: 0.02,
            outer_loops: 5,
            tol: 1e-6,
            b0_update: true,
            variation_correction: None,
            seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.outer_loops == 0 {
            return Err(Error::invalid("max_iter and outer_loops must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.b0_lambda >= 0.0 && self.b0_lambda.is_finite()) {
            return Err(Error::invalid("b0_lambda must be finite and non-negative"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid("tol must lie in (0, 1)"));
        }
        if self.reg_kind == RegKind::Llr && self.llr_block < 2 {
            return Err(Error::invalid("llr_block must be at least 2"));
        }
        Ok(())
    }
}

/// Minimize `||A c - y||^2 + lambda R(c)` for k-space data `y`.
pub fn subspace_solve(model: &ForwardModel, y: &KtData, cfg: &ReconConfig) -> Result<CoefficientMaps> {
    let yh = to_hybrid(y);
    let c = solve_hybrid(model, &yh, cfg, None)?;
    Ok(model.unflatten(c))
}

/// [`subspace_solve`] on hybrid-space data, optionally warm started.
pub fn solve_hybrid(model: &ForwardModel, yh: &KtData, cfg: &ReconConfig, init: Option<&[C64]>) -> Result<Vec<C64>> {
    cfg.validate()?;
    if init.is_some_and(|c| c.len() != model.n_coef()) {
        return Err(Error::dim("initial coefficients do not match the model"));
    }
    let b = model.adjoint_hybrid(yh);
    let c = match cfg.reg_kind {
        RegKind::None | RegKind::Tikhonov => {
            let shift = if cfg.reg_kind == RegKind::Tikhonov { cfg.lambda } else { 0.0 };
            let apply = |v: &[C64]| {
                let mut out = model.normal(v);
                if shift > 0.0 {
                    out.iter_mut().zip(v).for_each(|(o, x)| *o += x * shift);
                }
                out
            };
            conjugate_residual(apply, &b, init, cfg.max_iter, cfg.tol)?.x
        }
        RegKind::Llr => fista_llr(model, &b, init, cfg)?,
    };
    Ok(c)
}
