//! Conjugate residual iteration for Hermitian positive semidefinite systems.
//!
//! Minimizes `||M x - b||` over growing Krylov spaces, so the normal-equation
//! residual never increases between iterations.

use crate::datamodel::C64;
use crate::error::{Error, Result};
use crate::operators::{inner, norm};

#[derive(Clone, Debug)]
pub struct CgReport {
    pub x: Vec<C64>,
    /// `||M x - b||` before the first iteration and after each one.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

pub fn conjugate_residual(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    init: Option<&[C64]>,
    max_iter: usize,
    tol: f64,
) -> Result<CgReport> {
    let n = b.len();
    let mut x = init.map_or_else(|| vec![C64::new(0.0, 0.0); n], |v| v.to_vec());
    let mut r: Vec<C64> = if init.is_some() {
        let mx = apply(&x);
        b.iter().zip(&mx).map(|(b, m)| b - m).collect()
    } else {
        b.to_vec()
    };
    let b_norm = norm(b);
    let mut residuals = vec![norm(&r)];
    if b_norm == 0.0 && init.is_none() {
        return Ok(CgReport { x, residuals, iterations: 0 });
    }
    let scale = if b_norm > 0.0 { b_norm } else { residuals[0].max(f64::MIN_POSITIVE) };
    let mut p = r.clone();
    let mut mr = apply(&r);
    let mut mp = mr.clone();
    let mut rmr = inner(&r, &mr).re;
    let mut iterations = 0;
    while iterations < max_iter && residuals[iterations] > tol * scale {
        let mp_sq = inner(&mp, &mp).re;
        if mp_sq <= 0.0 || rmr <= 0.0 {
            break;
        }
        let alpha = rmr / mp_sq;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= mp[i] * alpha;
        }
        iterations += 1;
        let rn = norm(&r);
        if !rn.is_finite() {
            return Err(Error::numerical(format!("non-finite residual at iteration {iterations}")));
        }
        residuals.push(rn);
        if rn <= tol * scale || iterations == max_iter {
            break;
        }
        mr = apply(&r);
        let rmr_new = inner(&r, &mr).re;
        let beta = rmr_new / rmr;
        rmr = rmr_new;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
            mp[i] = mr[i] + mp[i] * beta;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite iterate"));
    }
    Ok(CgReport { x, residuals, iterations })
}
