//! Data-driven estimation of shot-to-shot B0 variation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::datamodel::{poly_basis, CoilSet, Grid, ImageSeries, KtData, ShotVariation, POLY_TERMS};
use crate::error::{Error, Result};

/// Mean field change (Hz) of every (shot, coil) between `y` and `predicted`.
///
/// Per echo the phase of `<predicted_e, y_e>` is taken, unwrapped along the
/// echoes, and fitted by a straight line in TE weighted by `|<.,.>|`.
pub fn estimate_bvar(y: &KtData, predicted: &KtData) -> Result<Vec<Vec<f64>>> {
    y.validate()?;
    predicted.validate()?;
    if y.samples.len() != predicted.samples.len() || y.pattern.n_shots != predicted.pattern.n_shots {
        return Err(Error::dim("data and prediction differ in shape"));
    }
    let train = &y.train;
    let (ns, nc, t) = (y.pattern.n_shots, y.n_coils, y.pattern.n_echoes);
    let mut out = vec![vec![0.0; nc]; ns];
    for (s, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let mut phase = Vec::with_capacity(t);
            let mut weight = Vec::with_capacity(t);
            for e in 0..t {
                let z: crate::datamodel::C64 =
                    predicted.line(s, c, e).iter().zip(y.line(s, c, e)).map(|(p, q)| p.conj() * q).sum();
                phase.push(z.arg());
                weight.push(z.norm());
            }
            if weight.iter().all(|&w| w == 0.0) {
                return Err(Error::invalid(format!("prediction is zero for shot {s}, coil {c}")));
            }
            unwrap(&mut phase);
            let slope = weighted_slope(&train.echo_times, &phase, &weight);
            *v = slope * 1000.0 / (2.0 * PI);
        }
    }
    Ok(out)
}

fn unwrap(phase: &mut [f64]) {
    for i in 1..phase.len() {
        let mut d = phase[i] - phase[i - 1];
        d -= 2.0 * PI * (d / (2.0 * PI)).round();
        phase[i] = phase[i - 1] + d;
    }
}

/// Weighted least-squares slope of `v` against `t` (with intercept).
fn weighted_slope(t: &[f64], v: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mt = t.iter().zip(w).map(|(t, w)| t * w).sum::<f64>() / sw;
    let mv = v.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / sw;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..t.len() {
        num += w[i] * (t[i] - mt) * (v[i] - mv);
        den += w[i] * (t[i] - mt) * (t[i] - mt);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Rows `M S I' A`: the coil-weighted average of the polynomial basis, one
/// row per coil. Each coil weights voxel `r` by `|S_c(r)|^2 sum_e |I_e(r)|^2`.
pub fn variation_design(images: &ImageSeries, coils: &CoilSet) -> Result<DMatrix<f64>> {
    let grid = images.grid;
    if !coils.grid.same_shape(&grid) {
        return Err(Error::dim("coil maps do not match the images"));
    }
    let n = grid.len();
    let mut energy = vec![0.0; n];
    for img in &images.images {
        energy.iter_mut().zip(img).for_each(|(e, v)| *e += v.norm_sqr());
    }
    let basis: Vec<[f64; POLY_TERMS]> = (0..n)
        .map(|i| {
            let (x, y, _) = grid.coords(i);
            poly_basis(Grid::normalized(x, grid.nx), Grid::normalized(y, grid.ny))
        })
        .collect();
    let nc = coils.n_coils();
    let mut m = DMatrix::zeros(nc, POLY_TERMS);
    for c in 0..nc {
        let mut total = 0.0;
        let mut row = [0.0; POLY_TERMS];
        for i in 0..n {
            let w = coils.sens[c][i].norm_sqr() * energy[i];
            total += w;
            for (r, a) in row.iter_mut().zip(&basis[i]) {
                *r += w * a;
            }
        }
        if total == 0.0 {
            return Err(Error::invalid(format!("coil {c} sees no signal")));
        }
        for (j, r) in row.iter().enumerate() {
            m[(c, j)] = r / total;
        }
    }
    Ok(m)
}

/// Per shot, the polynomial coefficients whose coil-averaged field best
/// matches `b_var[shot]` in the least-squares sense.
pub fn fit_variation_poly(b_var: &[Vec<f64>], images: &ImageSeries, coils: &CoilSet) -> Result<ShotVariation> {
    fit_variation_poly_truncated(b_var, images, coils, 0.0)
}

/// [`fit_variation_poly`] restricted to singular directions of the design
/// above `rcond` times the largest. Coils on a ring barely see some
/// combinations of the quadratic terms; those are left at zero instead of
/// amplifying estimation noise.
pub fn fit_variation_poly_truncated(
    b_var: &[Vec<f64>],
    images: &ImageSeries,
    coils: &CoilSet,
    rcond: f64,
) -> Result<ShotVariation> {
    let nc = coils.n_coils();
    if nc < POLY_TERMS {
        return Err(Error::invalid(format!("{nc} coils cannot determine {POLY_TERMS} polynomial terms")));
    }
    if b_var.iter().any(|r| r.len() != nc) {
        return Err(Error::dim("b_var rows must have one entry per coil"));
    }
    if !(0.0..1.0).contains(&rcond) {
        return Err(Error::invalid("rcond must lie in [0, 1)"));
    }
    let m = variation_design(images, coils)?;
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::numerical(format!(
            "variation design is rank deficient (singular values {smin:.3e} / {smax:.3e})"
        )));
    }
    let mut coeffs = Vec::with_capacity(b_var.len());
    for row in b_var {
        let rhs = DVector::from_column_slice(row);
        let sol = svd.solve(&rhs, rcond * smax).map_err(|e| Error::numerical(e.to_string()))?;
        let mut c = [0.0; POLY_TERMS];
        c.copy_from_slice(sol.as_slice());
        coeffs.push(c);
    }
    Ok(ShotVariation { coeffs, b_var: b_var.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{EchoTrain, SamplingPattern, C64};
    use crate::encoding::epti_2d_pattern;
    use crate::phantom::{make_coils, make_phantom};
    use std::sync::Arc;

    fn data(pattern: Arc<SamplingPattern>, train: Arc<EchoTrain>) -> KtData {
        let mut y = KtData::zeros(5, 2, pattern, train);
        for (i, v) in y.samples.iter_mut().enumerate() {
            *v = C64::new(1.0 + (i % 7) as f64, (i % 3) as f64 - 1.0);
        }
        y
    }

    fn phased(y: &KtData, shot: usize, hz: f64) -> KtData {
        let mut out = y.clone();
        for c in 0..y.n_coils {
            for e in 0..y.pattern.n_echoes {
                let ph = C64::from_polar(1.0, 2.0 * PI * hz * y.train.echo_times[e] / 1000.0);
                out.line_mut(shot, c, e).iter_mut().for_each(|v| *v *= ph);
            }
        }
        out
    }

    fn setup() -> KtData {
        let pattern = Arc::new(epti_2d_pattern(24, 40, 2, 8).unwrap());
        let train = Arc::new(EchoTrain::gese(20, 8.4, 20, 70.8, 0.93, 80.0).unwrap());
        data(pattern, train)
    }

    #[test]
    fn identical_data_gives_zero() {
        let y = setup();
        for row in estimate_bvar(&y, &y).unwrap() {
            assert!(row.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn injected_shot_phase_is_recovered_and_linear() {
        let y = setup();
        let got = estimate_bvar(&phased(&y, 1, 1.5), &y).unwrap();
        for (s, row) in got.iter().enumerate() {
            for v in row {
                if s == 1 {
                    assert!((v - 1.5).abs() < 0.2, "{v}");
                } else {
                    assert!(v.abs() < 1e-9);
                }
            }
        }
        let doubled = estimate_bvar(&phased(&y, 1, 3.0), &y).unwrap();
        for (a, b) in got[1].iter().zip(&doubled[1]) {
            assert!((2.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_prediction_is_an_error() {
        let y = setup();
        let mut p = y.clone();
        p.samples.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        assert!(estimate_bvar(&y, &p).is_err());
    }

    fn images_and_coils(n_coils: usize) -> (ImageSeries, CoilSet) {
        let grid = Grid::new(24, 24, 1).unwrap();
        let ph = make_phantom(grid, "ellipses", 1).unwrap();
        let images = ImageSeries {
            grid,
            images: (0..4).map(|e| ph.pd.iter().map(|p| C64::new(p * (1.0 - 0.1 * e as f64), 0.0)).collect()).collect(),
        };
        (images, make_coils(grid, n_coils).unwrap())
    }

    #[test]
    fn recovers_coefficients_through_the_same_map() {
        let (images, coils) = images_and_coils(12);
        let m = variation_design(&images, &coils).unwrap();
        let truth = [[0.4, -0.3, 0.8, 0.2, -0.5, 0.1], [-1.0, 0.2, 0.0, 0.3, 0.3, -0.2]];
        let b_var: Vec<Vec<f64>> =
            truth.iter().map(|c| (&m * DVector::from_column_slice(c)).as_slice().to_vec()).collect();
        let fit = fit_variation_poly(&b_var, &images, &coils).unwrap();
        for (got, want) in fit.coeffs.iter().zip(&truth) {
            let err: f64 = got.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let nrm: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(err < 1e-8 * nrm, "{got:?}");
        }
    }

    #[test]
    fn zero_and_constant_fields() {
        let (images, coils) = images_and_coils(8);
        let fit = fit_variation_poly(&[vec![0.0; 8]], &images, &coils).unwrap();
        assert!(fit.coeffs[0].iter().all(|v| *v == 0.0));
        let fit = fit_variation_poly(&[vec![2.0; 8]], &images, &coils).unwrap();
        // Brute force normal equations as the reference.
        let m = variation_design(&images, &coils).unwrap();
        let mtm = m.transpose() * &m;
        let rhs = m.transpose() * DVector::from_element(8, 2.0);
        let brute = mtm.lu().solve(&rhs).unwrap();
        for (a, b) in fit.coeffs[0].iter().zip(brute.iter()) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
        }
        assert!((fit.coeffs[0][0] - 2.0).abs() < 1e-6);
        let dominant = fit.coeffs[0].iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        assert_eq!(dominant, 0);
    }

    #[test]
    fn too_few_coils_rejected() {
        let (images, coils) = images_and_coils(4);
        assert!(fit_variation_poly(&[vec![0.0; 4]], &images, &coils).is_err());
    }
}
