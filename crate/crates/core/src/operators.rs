//! The linear EPTI forward model `U F S B phi` and its adjoint.
//!
//! Samples handed to the model are in *hybrid* space: the readout axis is
//! already inverse transformed, so each acquired line is a profile along
//! `x`. [`to_hybrid`] and [`to_kspace`] convert whole data sets. Coefficient
//! vectors are flat: map `k` occupies `[k * N, (k + 1) * N)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::datamodel::{
    B0Map, CoefficientMaps, CoilSet, EchoTrain, Grid, ImageSeries, KtData, SamplingPattern,
    ShotVariation, SubspaceBasis, C64,
};
use crate::error::{Error, Result};
use crate::fft::{dft_row, Direction, VolumeFft};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ECHO_GROUP: usize = 8;

/// Inverse transform every line along kx.
pub fn to_hybrid(y: &KtData) -> KtData {
    let mut out = y.clone();
    let plan = VolumeFft::new(y.nx, 1, 1);
    out.samples.par_chunks_mut(y.nx).for_each(|line| plan.x_line(line, Direction::Inverse));
    out
}

/// Forward transform every line along x.
pub fn to_kspace(y: &KtData) -> KtData {
    let mut out = y.clone();
    let plan = VolumeFft::new(y.nx, 1, 1);
    out.samples.par_chunks_mut(y.nx).for_each(|line| plan.x_line(line, Direction::Forward));
    out
}

/// Run `work` for every coil (or other work item), a thread-sized group at a
/// time, and hand the results to `sink` in order so reductions do not
/// depend on the thread count.
fn for_coils<T: Send>(n_coils: usize, work: impl Fn(usize) -> T + Sync, mut sink: impl FnMut(usize, T)) {
    let group = rayon::current_num_threads().max(1);
    let mut start = 0;
    while start < n_coils {
        let end = (start + group).min(n_coils);
        let results: Vec<T> = (start..end).into_par_iter().map(&work).collect();
        for (i, r) in results.into_iter().enumerate() {
            sink(start + i, r);
        }
        start = end;
    }
}

pub struct ForwardModel {
    grid: Grid,
    coils: Arc<CoilSet>,
    pattern: Arc<SamplingPattern>,
    train: Arc<EchoTrain>,
    basis: Arc<SubspaceBasis>,
    b0: Option<Vec<f64>>,
    static_phase: Option<Vec<f64>>,
    variation: Option<ShotVariation>,
    /// Per-shot fields `A c_var` on the grid (Hz).
    fields: Vec<Vec<f64>>,
    fft: VolumeFft,
    /// Per echo: the (shot, ky, kz) lines acquired.
    echo_lines: Vec<Vec<(usize, usize, usize)>>,
    /// Per echo: acquisition count of each (ky, kz).
    multiplicity: Vec<Vec<f64>>,
    /// Per (ky, kz): the K x K matrix `sum_e m_e phi_e^H phi_e`, row-major.
    gram: Vec<Vec<C64>>,
    wy: Vec<Vec<C64>>,
    wz: Vec<Vec<C64>>,
    force_generic: bool,
}

impl ForwardModel {
    pub fn new(
        grid: Grid,
        coils: Arc<CoilSet>,
        pattern: Arc<SamplingPattern>,
        train: Arc<EchoTrain>,
        basis: Arc<SubspaceBasis>,
    ) -> Result<Self> {
        grid.validate()?;
        if !coils.grid.same_shape(&grid) {
            return Err(Error::dim("coil maps do not match the grid"));
        }
        if pattern.ny != grid.ny || pattern.nz != grid.nz {
            return Err(Error::dim(format!(
                "pattern matrix {}x{} does not match grid {}x{}",
                pattern.ny, pattern.nz, grid.ny, grid.nz
            )));
        }
        if pattern.n_echoes != train.len() || basis.n_echoes != train.len() {
            return Err(Error::dim("pattern, echo train and basis disagree on echo count"));
        }
        let (ny, nz) = (grid.ny, grid.nz);
        let t = train.len();
        let mut echo_lines = vec![Vec::new(); t];
        let mut multiplicity = vec![vec![0.0; ny * nz]; t];
        for s in 0..pattern.n_shots {
            for (e, lines) in echo_lines.iter_mut().enumerate() {
                let (ky, kz) = pattern.line(s, e);
                lines.push((s, ky, kz));
                multiplicity[e][ky + ny * kz] += 1.0;
            }
        }
        let k = basis.k;
        let mut gram = vec![Vec::new(); ny * nz];
        for (p, g) in gram.iter_mut().enumerate() {
            if multiplicity.iter().all(|m| m[p] == 0.0) {
                continue;
            }
            let mut mat = vec![ZERO; k * k];
            for (e, m) in multiplicity.iter().enumerate() {
                if m[p] == 0.0 {
                    continue;
                }
                for a in 0..k {
                    for b in 0..k {
                        mat[a * k + b] += m[p] * basis.get(e, a).conj() * basis.get(e, b);
                    }
                }
            }
            *g = mat;
        }
        Ok(ForwardModel {
            grid,
            coils,
            pattern,
            train,
            basis,
            b0: None,
            static_phase: None,
            variation: None,
            fields: Vec::new(),
            fft: VolumeFft::new(grid.nx, ny, nz),
            echo_lines,
            multiplicity,
            gram,
            wy: (0..ny).map(|k| dft_row(k, ny)).collect(),
            wz: (0..nz).map(|k| dft_row(k, nz)).collect(),
            force_generic: false,
        })
    }

    pub fn with_b0(mut self, b0: &B0Map) -> Result<Self> {
        self.set_b0(b0)?;
        Ok(self)
    }

    pub fn set_b0(&mut self, b0: &B0Map) -> Result<()> {
        if !b0.grid.same_shape(&self.grid) {
            return Err(Error::dim("b0 map does not match the grid"));
        }
        b0.validate()?;
        self.b0 = if b0.hz.iter().all(|&v| v == 0.0) { None } else { Some(b0.hz.clone()) };
        Ok(())
    }

    /// Echo-independent phase (rad) folded into the phase operator.
    pub fn with_static_phase(mut self, phase: Vec<f64>) -> Result<Self> {
        if phase.len() != self.grid.len() {
            return Err(Error::dim("static phase does not match the grid"));
        }
        self.static_phase = Some(phase);
        Ok(self)
    }

    pub fn with_variation(mut self, variation: &ShotVariation) -> Result<Self> {
        self.set_variation(Some(variation))?;
        Ok(self)
    }

    pub fn set_variation(&mut self, variation: Option<&ShotVariation>) -> Result<()> {
        match variation {
            Some(v) if !v.is_zero() => {
                if v.n_shots() != self.pattern.n_shots {
                    return Err(Error::dim(format!(
                        "variation has {} shots, pattern has {}",
                        v.n_shots(),
                        self.pattern.n_shots
                    )));
                }
                v.validate()?;
                self.fields = (0..v.n_shots()).map(|s| v.field(&self.grid, s)).collect();
                self.variation = Some(v.clone());
            }
            _ => {
                self.fields.clear();
                self.variation = None;
            }
        }
        Ok(())
    }

    /// Use the per-echo path even when the phase is echo independent.
    pub fn force_generic(mut self, on: bool) -> Self {
        self.force_generic = on;
        self
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn coils(&self) -> &Arc<CoilSet> {
        &self.coils
    }

    pub fn pattern(&self) -> &Arc<SamplingPattern> {
        &self.pattern
    }

    pub fn train(&self) -> &Arc<EchoTrain> {
        &self.train
    }

    pub fn basis(&self) -> &Arc<SubspaceBasis> {
        &self.basis
    }

    pub fn b0(&self) -> Option<&[f64]> {
        self.b0.as_deref()
    }

    pub fn variation(&self) -> Option<&ShotVariation> {
        self.variation.as_ref()
    }

    pub fn n_coef(&self) -> usize {
        self.basis.k * self.grid.len()
    }

    fn separable(&self) -> bool {
        !self.force_generic && self.b0.is_none() && self.variation.is_none()
    }

    fn check_data(&self, y: &KtData) -> Result<()> {
        y.validate()?;
        if y.nx != self.grid.nx
            || y.n_coils != self.coils.n_coils()
            || y.pattern.n_shots != self.pattern.n_shots
            || y.pattern.n_echoes != self.pattern.n_echoes
        {
            return Err(Error::dim("data do not match the model"));
        }
        Ok(())
    }

    /// `exp(j (phase0 + 2 pi TE_e B0 / 1000))` for echo `e`.
    fn phase_map(&self, e: usize) -> Vec<C64> {
        let w = 2.0 * PI * self.train.echo_times[e] / 1000.0;
        (0..self.grid.len())
            .map(|i| {
                let hz = self.b0.as_ref().map_or(0.0, |b| b[i]);
                C64::from_polar(1.0, self.static_phase.as_ref().map_or(0.0, |p| p[i]) + w * hz)
            })
            .collect()
    }

    /// `exp(-j 2 pi TE_e field_s / 1000)` for echo `e`, shot `s`.
    fn field_phasor(&self, e: usize, s: usize) -> Vec<C64> {
        let w = -2.0 * PI * self.train.echo_times[e] / 1000.0;
        self.fields[s].iter().map(|f| C64::from_polar(1.0, w * f)).collect()
    }

    fn echo_image(&self, c: &[C64], e: usize) -> Vec<C64> {
        let n = self.grid.len();
        let mut img = vec![ZERO; n];
        for k in 0..self.basis.k {
            let w = self.basis.get(e, k);
            for (o, v) in img.iter_mut().zip(&c[k * n..(k + 1) * n]) {
                *o += w * v;
            }
        }
        img
    }

    /// Centered DFT of `sens * img` evaluated on a single (ky, kz) line.
    fn dft_line(&self, sens: &[C64], img: &[C64], ky: usize, kz: usize, out: &mut [C64]) {
        let (nx, ny, nz) = (self.grid.nx, self.grid.ny, self.grid.nz);
        out.iter_mut().for_each(|v| *v = ZERO);
        for z in 0..nz {
            let wz = self.wz[kz][z];
            for y in 0..ny {
                let w = self.wy[ky][y] * wz;
                let r = nx * (y + ny * z)..nx * (y + ny * z + 1);
                for ((o, v), s) in out.iter_mut().zip(&img[r.clone()]).zip(&sens[r]) {
                    *o += w * s * v;
                }
            }
        }
    }

    /// Adjoint of [`Self::dft_line`], accumulated into `img`.
    fn dft_line_adjoint(&self, sens: &[C64], line: &[C64], ky: usize, kz: usize, img: &mut [C64]) {
        let (nx, ny, nz) = (self.grid.nx, self.grid.ny, self.grid.nz);
        for z in 0..nz {
            let wz = self.wz[kz][z].conj();
            for y in 0..ny {
                let w = self.wy[ky][y].conj() * wz;
                let r = nx * (y + ny * z)..nx * (y + ny * z + 1);
                for ((o, v), s) in img[r.clone()].iter_mut().zip(line).zip(&sens[r]) {
                    *o += w * s.conj() * v;
                }
            }
        }
    }

    fn empty_data(&self) -> KtData {
        KtData::zeros(self.grid.nx, self.coils.n_coils(), self.pattern.clone(), self.train.clone())
    }

    /// Hybrid-space samples of the echo images produced by `image_of`.
    fn forward_generic(&self, image_of: &(dyn Fn(usize) -> Vec<C64> + Sync)) -> KtData {
        let mut out = self.empty_data();
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let nc = self.coils.n_coils();
        for e in 0..self.train.len() {
            let img = image_of(e);
            if self.fields.is_empty() {
                let ph = self.phase_map(e);
                let j: Vec<C64> = img.iter().zip(&ph).map(|(a, b)| a * b).collect();
                for_coils(
                    nc,
                    |c| {
                        let mut tmp: Vec<C64> = self.coils.sens[c].iter().zip(&j).map(|(s, v)| s * v).collect();
                        self.fft.yz(&mut tmp, Direction::Forward);
                        tmp
                    },
                    |c, tmp| {
                        for &(s, ky, kz) in &self.echo_lines[e] {
                            let o = nx * (ky + ny * kz);
                            out.line_mut(s, c, e).copy_from_slice(&tmp[o..o + nx]);
                        }
                    },
                );
            } else {
                let ph = self.phase_map(e);
                let j: Vec<C64> = img.iter().zip(&ph).map(|(a, b)| a * b).collect();
                for &(s, ky, kz) in &self.echo_lines[e] {
                    let fp = self.field_phasor(e, s);
                    let js: Vec<C64> = j.iter().zip(&fp).map(|(a, b)| a * b).collect();
                    for c in 0..nc {
                        self.dft_line(&self.coils.sens[c], &js, ky, kz, out.line_mut(s, c, e));
                    }
                }
            }
        }
        out
    }

    /// Per-echo adjoint images `B_e^H S^H F^H U_e^H y_e`.
    fn adjoint_generic(&self, y: &KtData, sink: &mut dyn FnMut(usize, Vec<C64>)) {
        let n = self.grid.len();
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let nc = self.coils.n_coils();
        for e in 0..self.train.len() {
            let mut acc = vec![ZERO; n];
            if self.fields.is_empty() {
                for_coils(
                    nc,
                    |c| {
                        let mut tmp = vec![ZERO; n];
                        for &(s, ky, kz) in &self.echo_lines[e] {
                            let o = nx * (ky + ny * kz);
                            for (t, v) in tmp[o..o + nx].iter_mut().zip(y.line(s, c, e)) {
                                *t += v;
                            }
                        }
                        self.fft.yz(&mut tmp, Direction::Inverse);
                        for (t, s) in tmp.iter_mut().zip(&self.coils.sens[c]) {
                            *t *= s.conj();
                        }
                        tmp
                    },
                    |_, tmp| acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += t),
                );
            } else {
                let mut shot_acc = vec![ZERO; n];
                for &(s, ky, kz) in &self.echo_lines[e] {
                    shot_acc.iter_mut().for_each(|v| *v = ZERO);
                    for c in 0..nc {
                        self.dft_line_adjoint(&self.coils.sens[c], y.line(s, c, e), ky, kz, &mut shot_acc);
                    }
                    let fp = self.field_phasor(e, s);
                    acc.iter_mut().zip(shot_acc.iter().zip(&fp)).for_each(|(a, (v, p))| *a += v * p.conj());
                }
            }
            let ph = self.phase_map(e);
            acc.iter_mut().zip(&ph).for_each(|(a, p)| *a *= p.conj());
            sink(e, acc);
        }
    }

    fn coil_phase(&self, c: usize) -> Vec<C64> {
        match &self.static_phase {
            None => self.coils.sens[c].clone(),
            Some(p) => self.coils.sens[c].iter().zip(p).map(|(s, &ph)| s * C64::from_polar(1.0, ph)).collect(),
        }
    }

    /// FFTs of `S_c e^{j phase0} c_k` for every component.
    fn coil_spectra(&self, c: &[C64], coil: usize) -> (Vec<C64>, Vec<C64>) {
        let n = self.grid.len();
        let sp = self.coil_phase(coil);
        let mut spec = vec![ZERO; c.len()];
        for k in 0..self.basis.k {
            let dst = &mut spec[k * n..(k + 1) * n];
            for ((d, s), v) in dst.iter_mut().zip(&sp).zip(&c[k * n..(k + 1) * n]) {
                *d = s * v;
            }
            self.fft.yz(dst, Direction::Forward);
        }
        (spec, sp)
    }

    /// Hybrid-space forward model of coefficient vector `c`.
    pub fn forward_hybrid(&self, c: &[C64]) -> KtData {
        assert_eq!(c.len(), self.n_coef());
        if !self.separable() {
            return self.forward_generic(&|e| self.echo_image(c, e));
        }
        let mut out = self.empty_data();
        let (nx, ny, n, k) = (self.grid.nx, self.grid.ny, self.grid.len(), self.basis.k);
        for_coils(
            self.coils.n_coils(),
            |coil| self.coil_spectra(c, coil).0,
            |coil, spec| {
                for (e, lines) in self.echo_lines.iter().enumerate() {
                    for &(s, ky, kz) in lines {
                        let o = nx * (ky + ny * kz);
                        let dst = out.line_mut(s, coil, e);
                        dst.iter_mut().for_each(|v| *v = ZERO);
                        for j in 0..k {
                            let w = self.basis.get(e, j);
                            for (d, v) in dst.iter_mut().zip(&spec[j * n + o..j * n + o + nx]) {
                                *d += w * v;
                            }
                        }
                    }
                }
            },
        );
        out
    }

    /// Adjoint of [`Self::forward_hybrid`].
    pub fn adjoint_hybrid(&self, y: &KtData) -> Vec<C64> {
        let n = self.grid.len();
        let k = self.basis.k;
        let mut c = vec![ZERO; k * n];
        if !self.separable() {
            self.adjoint_generic(y, &mut |e, img| {
                for j in 0..k {
                    let w = self.basis.get(e, j).conj();
                    for (o, v) in c[j * n..(j + 1) * n].iter_mut().zip(&img) {
                        *o += w * v;
                    }
                }
            });
            return c;
        }
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        for_coils(
            self.coils.n_coils(),
            |coil| {
                let mut z = vec![ZERO; k * n];
                for (e, lines) in self.echo_lines.iter().enumerate() {
                    for &(s, ky, kz) in lines {
                        let o = nx * (ky + ny * kz);
                        let src = y.line(s, coil, e);
                        for j in 0..k {
                            let w = self.basis.get(e, j).conj();
                            for (d, v) in z[j * n + o..j * n + o + nx].iter_mut().zip(src) {
                                *d += w * v;
                            }
                        }
                    }
                }
                let sp = self.coil_phase(coil);
                for j in 0..k {
                    let dst = &mut z[j * n..(j + 1) * n];
                    self.fft.yz(dst, Direction::Inverse);
                    dst.iter_mut().zip(&sp).for_each(|(d, s)| *d *= s.conj());
                }
                z
            },
            |_, z| c.iter_mut().zip(&z).for_each(|(a, v)| *a += v),
        );
        c
    }

    /// `A^H A c` without materializing the data.
    pub fn normal(&self, c: &[C64]) -> Vec<C64> {
        assert_eq!(c.len(), self.n_coef());
        let n = self.grid.len();
        let k = self.basis.k;
        let (nx, ny, nz) = (self.grid.nx, self.grid.ny, self.grid.nz);
        let mut out = vec![ZERO; k * n];
        if !self.fields.is_empty() {
            return self.normal_per_shot(c);
        }
        if !self.separable() {
            for e in 0..self.train.len() {
                let ph = self.phase_map(e);
                let j: Vec<C64> = self.echo_image(c, e).iter().zip(&ph).map(|(a, b)| a * b).collect();
                let mut acc = vec![ZERO; n];
                for_coils(
                    self.coils.n_coils(),
                    |coil| {
                        let sens = &self.coils.sens[coil];
                        let mut tmp: Vec<C64> = sens.iter().zip(&j).map(|(s, v)| s * v).collect();
                        self.fft.yz(&mut tmp, Direction::Forward);
                        for (p, &m) in self.multiplicity[e].iter().enumerate() {
                            let row = &mut tmp[p * nx..(p + 1) * nx];
                            if m == 0.0 {
                                row.iter_mut().for_each(|v| *v = ZERO);
                            } else if m != 1.0 {
                                row.iter_mut().for_each(|v| *v *= m);
                            }
                        }
                        self.fft.yz(&mut tmp, Direction::Inverse);
                        tmp.iter_mut().zip(sens).for_each(|(t, s)| *t *= s.conj());
                        tmp
                    },
                    |_, tmp| acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += t),
                );
                for jk in 0..k {
                    let w = self.basis.get(e, jk).conj();
                    for ((o, v), p) in out[jk * n..(jk + 1) * n].iter_mut().zip(&acc).zip(&ph) {
                        *o += w * v * p.conj();
                    }
                }
            }
            return out;
        }
        for_coils(
            self.coils.n_coils(),
            |coil| {
                let (mut spec, sp) = self.coil_spectra(c, coil);
                let mut v = vec![ZERO; k];
                for p in 0..ny * nz {
                    let g = &self.gram[p];
                    if g.is_empty() {
                        for j in 0..k {
                            spec[j * n + p * nx..j * n + (p + 1) * nx].iter_mut().for_each(|x| *x = ZERO);
                        }
                        continue;
                    }
                    for x in 0..nx {
                        for (a, va) in v.iter_mut().enumerate() {
                            *va = (0..k).map(|b| g[a * k + b] * spec[b * n + p * nx + x]).sum();
                        }
                        for (a, va) in v.iter().enumerate() {
                            spec[a * n + p * nx + x] = *va;
                        }
                    }
                }
                for j in 0..k {
                    let dst = &mut spec[j * n..(j + 1) * n];
                    self.fft.yz(dst, Direction::Inverse);
                    dst.iter_mut().zip(&sp).for_each(|(d, s)| *d *= s.conj());
                }
                spec
            },
            |_, z| out.iter_mut().zip(&z).for_each(|(a, v)| *a += v),
        );
        out
    }

    /// [`Self::normal`] with per-shot fields, one acquired line at a time.
    fn normal_per_shot(&self, c: &[C64]) -> Vec<C64> {
        let n = self.grid.len();
        let k = self.basis.k;
        let nc = self.coils.n_coils();
        let nx = self.grid.nx;
        let t = self.train.len();
        let mut out = vec![ZERO; k * n];
        // Fixed-size echo groups keep the summation order independent of the thread count.
        for_coils(
            t.div_ceil(ECHO_GROUP),
            |g| {
                let mut part = vec![ZERO; k * n];
                let mut acc = vec![ZERO; n];
                let mut shot_acc = vec![ZERO; n];
                let mut js = vec![ZERO; n];
                let mut line = vec![ZERO; nx];
                for e in g * ECHO_GROUP..((g + 1) * ECHO_GROUP).min(t) {
                    let ph = self.phase_map(e);
                    let j: Vec<C64> = self.echo_image(c, e).iter().zip(&ph).map(|(a, b)| a * b).collect();
                    acc.iter_mut().for_each(|v| *v = ZERO);
                    for &(s, ky, kz) in &self.echo_lines[e] {
                        let fp = self.field_phasor(e, s);
                        js.iter_mut().zip(j.iter().zip(&fp)).for_each(|(o, (a, b))| *o = a * b);
                        shot_acc.iter_mut().for_each(|v| *v = ZERO);
                        for coil in 0..nc {
                            let sens = &self.coils.sens[coil];
                            self.dft_line(sens, &js, ky, kz, &mut line);
                            self.dft_line_adjoint(sens, &line, ky, kz, &mut shot_acc);
                        }
                        acc.iter_mut().zip(shot_acc.iter().zip(&fp)).for_each(|(a, (v, p))| *a += v * p.conj());
                    }
                    for jk in 0..k {
                        let w = self.basis.get(e, jk).conj();
                        for ((o, v), p) in part[jk * n..(jk + 1) * n].iter_mut().zip(&acc).zip(&ph) {
                            *o += w * v * p.conj();
                        }
                    }
                }
                part
            },
            |_, part| out.iter_mut().zip(&part).for_each(|(a, b)| *a += b),
        );
        out
    }

    /// k-space forward model of coefficient maps.
    pub fn forward(&self, c: &CoefficientMaps) -> Result<KtData> {
        self.check_coef(c)?;
        let flat: Vec<C64> = c.maps.concat();
        Ok(to_kspace(&self.forward_hybrid(&flat)))
    }

    /// Adjoint of [`Self::forward`].
    pub fn adjoint(&self, y: &KtData) -> Result<CoefficientMaps> {
        self.check_data(y)?;
        Ok(self.unflatten(self.adjoint_hybrid(&to_hybrid(y))))
    }

    /// k-space samples of an arbitrary echo series (not restricted to the subspace).
    pub fn forward_series(&self, images: &ImageSeries) -> Result<KtData> {
        Ok(to_kspace(&self.forward_series_hybrid(images)?))
    }

    pub fn forward_series_hybrid(&self, images: &ImageSeries) -> Result<KtData> {
        if !images.grid.same_shape(&self.grid) || images.len() != self.train.len() {
            return Err(Error::dim("image series does not match the model"));
        }
        Ok(self.forward_generic(&|e| images.images[e].clone()))
    }

    /// Per-echo adjoint images of hybrid-space data.
    pub fn adjoint_series_hybrid(&self, y: &KtData) -> Result<ImageSeries> {
        self.check_data(y)?;
        let mut images = vec![Vec::new(); self.train.len()];
        self.adjoint_generic(y, &mut |e, img| images[e] = img);
        Ok(ImageSeries { grid: self.grid, images })
    }

    pub fn check_coef(&self, c: &CoefficientMaps) -> Result<()> {
        if !c.grid.same_shape(&self.grid) || c.k() != self.basis.k {
            return Err(Error::dim("coefficient maps do not match the model"));
        }
        Ok(())
    }

    pub fn unflatten(&self, flat: Vec<C64>) -> CoefficientMaps {
        let n = self.grid.len();
        CoefficientMaps { grid: self.grid, maps: flat.chunks(n).map(|m| m.to_vec()).collect() }
    }
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}
