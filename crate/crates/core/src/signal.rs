//! Temporal signal model, dictionary simulation and PCA subspace extraction.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::datamodel::{EchoTrain, SubspaceBasis, TrainKind, C64};
use crate::error::{Error, Result};

/// Signal of one tissue at every echo of `train` for unit proton density.
///
/// GE echoes decay as `exp(-TE/T2*)`. In the SE readout of a GESE train the
/// signal is `se_scale * exp(-TE/T2) * exp(-|TE - te_se| / T2')` with
/// `1/T2' = 1/T2* - 1/T2`.
pub fn simulate_evolution(t2: f64, t2s: f64, se_scale: f64, train: &EchoTrain) -> Result<Vec<f64>> {
    if !(t2 > 0.0 && t2s > 0.0) {
        return Err(Error::invalid("relaxation times must be positive"));
    }
    if t2s > t2 {
        return Err(Error::invalid(format!("t2* ({t2s}) exceeds t2 ({t2})")));
    }
    let r2_prime = 1.0 / t2s - 1.0 / t2;
    Ok(train
        .echo_times
        .iter()
        .enumerate()
        .map(|(e, &te)| {
            if train.kind == TrainKind::Gese && e >= train.n_ge {
                se_scale * (-te / t2).exp() * (-(te - train.te_se).abs() * r2_prime).exp()
            } else {
                (-te / t2s).exp()
            }
        })
        .collect())
}

/// Spacing of the relaxation-time grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

impl Spacing {
    pub fn name(self) -> &'static str {
        match self {
            Spacing::Linear => "lin",
            Spacing::Log => "log",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lin" | "linear" => Ok(Spacing::Linear),
            "log" => Ok(Spacing::Log),
            other => Err(Error::invalid(format!("unknown grid spacing '{other}'"))),
        }
    }

    fn grid(self, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match self {
            Spacing::Linear => lin_space(lo, hi, n),
            Spacing::Log => log_space(lo, hi, n),
        }
    }
}

/// Parameter grid of a dictionary. Ranges are inclusive; a single step
/// uses the lower bound. The scale grid is always linear.
#[derive(Clone, Debug, PartialEq)]
pub struct DictionaryRanges {
    pub t2: (f64, f64),
    pub t2s: (f64, f64),
    pub scale: (f64, f64),
    pub steps: (usize, usize, usize),
    pub spacing: Spacing,
}

impl DictionaryRanges {
    /// T2 1-600 ms, T2* 1-500 ms, scaling 0.8-1.2 on a 64 x 64 x 5 grid.
    pub fn standard() -> Self {
        DictionaryRanges {
            t2: (1.0, 600.0),
            t2s: (1.0, 500.0),
            scale: (0.8, 1.2),
            steps: (64, 64, 5),
            spacing: Spacing::Linear,
        }
    }

    pub fn descriptor(&self) -> String {
        let sp = self.spacing.name();
        format!(
            "t2={}..{}ms/{} {sp}; t2s={}..{}ms/{} {sp}; scale={}..{}/{} lin",
            self.t2.0, self.t2.1, self.steps.0, self.t2s.0, self.t2s.1, self.steps.1, self.scale.0,
            self.scale.1, self.steps.2
        )
    }

    fn validate(&self) -> Result<()> {
        let (a, b, c) = self.steps;
        if a == 0 || b == 0 || c == 0 {
            return Err(Error::invalid("dictionary steps must be >= 1"));
        }
        for (lo, hi) in [self.t2, self.t2s] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::invalid("relaxation ranges must satisfy 0 < lo <= hi"));
            }
        }
        if !(self.scale.0 > 0.0 && self.scale.1 >= self.scale.0 && self.scale.1.is_finite()) {
            return Err(Error::invalid("scale range must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub fn lin_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Real dictionary, atom `d` occupies `signals[d * n_echoes..(d + 1) * n_echoes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalDictionary {
    pub n_echoes: usize,
    pub signals: Vec<f64>,
    /// (T2 ms, T2* ms, se_scale) per atom.
    pub params: Vec<(f64, f64, f64)>,
    pub descriptor: String,
}

impl SignalDictionary {
    pub fn n_atoms(&self) -> usize {
        self.params.len()
    }

    pub fn atom(&self, d: usize) -> &[f64] {
        &self.signals[d * self.n_echoes..(d + 1) * self.n_echoes]
    }
}

/// Simulate every grid tuple with `t2s <= t2`. Atoms whose peak exceeds
/// one (strong SE scaling) are divided by their peak.
pub fn build_dictionary(ranges: &DictionaryRanges, train: &EchoTrain) -> Result<SignalDictionary> {
    ranges.validate()?;
    train.validate()?;
    let t2s_grid = ranges.spacing.grid(ranges.t2s.0, ranges.t2s.1, ranges.steps.1);
    let t2_grid = ranges.spacing.grid(ranges.t2.0, ranges.t2.1, ranges.steps.0);
    let scale_grid = lin_space(ranges.scale.0, ranges.scale.1, ranges.steps.2);
    let mut params = Vec::new();
    for &t2 in &t2_grid {
        for &t2s in &t2s_grid {
            if t2s > t2 {
                continue;
            }
            for &s in &scale_grid {
                params.push((t2, t2s, s));
            }
        }
    }
    if params.is_empty() {
        return Err(Error::invalid("dictionary is empty after removing t2* > t2 tuples"));
    }
    let atoms: Vec<Vec<f64>> = params
        .par_iter()
        .map(|&(t2, t2s, s)| {
            let mut sig = simulate_evolution(t2, t2s, s, train).expect("grid tuple is valid");
            let peak = sig.iter().cloned().fold(0.0, f64::max);
            if peak > 1.0 {
                sig.iter_mut().for_each(|v| *v /= peak);
            }
            sig
        })
        .collect();
    Ok(SignalDictionary {
        n_echoes: train.len(),
        signals: atoms.concat(),
        params,
        descriptor: ranges.descriptor(),
    })
}

/// First `k` left singular vectors of the (uncentered) dictionary matrix.
pub fn extract_basis(dict: &SignalDictionary, k: usize) -> Result<SubspaceBasis> {
    let t = dict.n_echoes;
    if k == 0 || k > t.min(dict.n_atoms()) {
        return Err(Error::invalid(format!(
            "basis size {k} out of range 1..={}",
            t.min(dict.n_atoms())
        )));
    }
    let mut gram = DMatrix::<f64>::zeros(t, t);
    for d in 0..dict.n_atoms() {
        let a = dict.atom(d);
        for i in 0..t {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            for j in i..t {
                gram[(i, j)] += ai * a[j];
            }
        }
    }
    for i in 0..t {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut phi = vec![C64::new(0.0, 0.0); t * k];
    for (j, &col) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(col);
        let mut pivot = 0;
        for i in 0..t {
            if v[i].abs() > v[pivot].abs() + 1e-14 {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let norm = v.norm();
        for e in 0..t {
            phi[e * k + j] = C64::new(sign * v[e] / norm, 0.0);
        }
    }
    let basis = SubspaceBasis { n_echoes: t, k, phi, descriptor: dict.descriptor.clone() };
    basis.validate()?;
    Ok(basis)
}

/// Relative residual of projecting `signal` onto the basis span.
pub fn projection_error(signal: &[C64], basis: &SubspaceBasis) -> f64 {
    let t = basis.n_echoes;
    let coef: Vec<C64> = (0..basis.k)
        .map(|j| (0..t).map(|e| basis.get(e, j).conj() * signal[e]).sum())
        .collect();
    let mut res = 0.0;
    let mut tot = 0.0;
    for e in 0..t {
        let fit: C64 = (0..basis.k).map(|j| basis.get(e, j) * coef[j]).sum();
        res += (signal[e] - fit).norm_sqr();
        tot += signal[e].norm_sqr();
    }
    if tot == 0.0 {
        0.0
    } else {
        (res / tot).sqrt()
    }
}

/// `||D - phi phi^H D||_F / ||D||_F`.
pub fn approximation_error(dict: &SignalDictionary, basis: &SubspaceBasis) -> Result<f64> {
    if basis.n_echoes != dict.n_echoes {
        return Err(Error::dim("basis and dictionary disagree on echo count"));
    }
    let t = dict.n_echoes;
    let (res, tot) = (0..dict.n_atoms())
        .into_par_iter()
        .map(|d| {
            let a = dict.atom(d);
            let coef: Vec<C64> = (0..basis.k)
                .map(|j| (0..t).map(|e| basis.get(e, j).conj() * a[e]).sum())
                .collect();
            let mut res = 0.0;
            let mut tot = 0.0;
            for e in 0..t {
                let fit: C64 = (0..basis.k).map(|j| basis.get(e, j) * coef[j]).sum();
                res += (C64::new(a[e], 0.0) - fit).norm_sqr();
                tot += a[e] * a[e];
            }
            (res, tot)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    if tot == 0.0 {
        return Ok(0.0);
    }
    Ok((res / tot).sqrt())
}
