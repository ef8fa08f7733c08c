//! Array and domain types shared by every stage of the toolkit.
//!
//! Spatial maps are flat vectors in row-major order with `x` fastest:
//! `idx = x + nx * (y + ny * z)`. k-space line indices are centered, so
//! index `n / 2` along an axis is the DC sample.

pub mod container;

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Cartesian voxel grid. `nz == 1` is a 2D problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Voxel size in mm.
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let grid = Grid { nx, ny, nz, dx: 1.0, dy: 1.0, dz: 1.0 };
        grid.validate()?;
        Ok(grid)
    }

    pub fn with_spacing(mut self, dx: f64, dy: f64, dz: f64) -> Self {
        self.dx = dx;
        self.dy = dy;
        self.dz = dz;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        for d in [self.dx, self.dy, self.dz] {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid("voxel spacing must be positive"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn is_2d(&self) -> bool {
        self.nz == 1
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / (self.nx * self.ny);
        (x, y, z)
    }

    /// Map index `i` of an axis with `n` samples onto [-1, 1].
    #[inline]
    pub fn normalized(i: usize, n: usize) -> f64 {
        if n <= 1 {
            0.0
        } else {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        }
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.nz == other.nz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainKind {
    /// Gradient echo only.
    Ge,
    /// Gradient echo readout followed by a spin-echo readout.
    Gese,
}

impl TrainKind {
    pub fn name(self) -> &'static str {
        match self {
            TrainKind::Ge => "GE",
            TrainKind::Gese => "GESE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GE" => Ok(TrainKind::Ge),
            "GESE" => Ok(TrainKind::Gese),
            other => Err(Error::invalid(format!("unknown echo train kind '{other}'"))),
        }
    }
}

/// Echo times of one EPTI readout. Times are in ms.
#[derive(Clone, Debug, PartialEq)]
pub struct EchoTrain {
    pub kind: TrainKind,
    pub esp: f64,
    pub echo_times: Vec<f64>,
    /// Spin-echo time (GESE only, 0 otherwise).
    pub te_se: f64,
    pub n_ge: usize,
    pub n_se: usize,
}

impl EchoTrain {
    pub fn gradient_echo(n_echoes: usize, first_te: f64, esp: f64) -> Result<Self> {
        let echo_times = (0..n_echoes).map(|i| first_te + i as f64 * esp).collect();
        let train = EchoTrain {
            kind: TrainKind::Ge,
            esp,
            echo_times,
            te_se: 0.0,
            n_ge: n_echoes,
            n_se: 0,
        };
        train.validate()?;
        Ok(train)
    }

    pub fn gese(
        n_ge: usize,
        first_ge: f64,
        n_se: usize,
        first_se: f64,
        esp: f64,
        te_se: f64,
    ) -> Result<Self> {
        let mut echo_times: Vec<f64> = (0..n_ge).map(|i| first_ge + i as f64 * esp).collect();
        echo_times.extend((0..n_se).map(|i| first_se + i as f64 * esp));
        let train = EchoTrain { kind: TrainKind::Gese, esp, echo_times, te_se, n_ge, n_se };
        train.validate()?;
        Ok(train)
    }

    /// 40 GE + 80 SE echoes at 0.93 ms spacing (8.4-44.7 / 70.8-144.3 ms),
    /// spin echo at the center of the SE readout.
    pub fn gese_2d_preset() -> Self {
        let esp = 0.93;
        let first_se = 70.8;
        let te_se = first_se + 0.5 * 79.0 * esp;
        EchoTrain::gese(40, 8.4, 80, first_se, esp, te_se).expect("preset is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.esp.is_finite() && self.esp > 0.0) {
            return Err(Error::invalid("echo spacing must be positive"));
        }
        if self.echo_times.is_empty() {
            return Err(Error::invalid("echo train is empty"));
        }
        if self.n_ge + self.n_se != self.echo_times.len() {
            return Err(Error::invalid("n_ge + n_se must equal the number of echo times"));
        }
        if self.echo_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("echo times must be finite and nonnegative"));
        }
        if self.echo_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("echo times must be strictly increasing"));
        }
        let tol = 1e-9 * self.esp.max(1.0);
        let consecutive = |r: std::ops::Range<usize>| {
            self.echo_times[r].windows(2).all(|w| ((w[1] - w[0]) - self.esp).abs() <= tol)
        };
        if !consecutive(0..self.n_ge) {
            return Err(Error::invalid("GE echoes must be spaced by esp"));
        }
        match self.kind {
            TrainKind::Ge => {
                if self.n_se != 0 {
                    return Err(Error::invalid("GE train cannot have spin echoes"));
                }
            }
            TrainKind::Gese => {
                if self.n_se == 0 {
                    return Err(Error::invalid("GESE train needs spin-echo samples"));
                }
                if !consecutive(self.n_ge..self.echo_times.len()) {
                    return Err(Error::invalid("SE echoes must be spaced by esp"));
                }
                let floor = self.te_se - self.n_se as f64 * self.esp;
                if self.echo_times[self.n_ge..].iter().any(|&t| t <= floor) {
                    return Err(Error::invalid("SE echo precedes the refocusing window"));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.echo_times.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.echo_times.is_empty()
    }

    #[inline]
    pub fn is_spin_echo(&self, e: usize) -> bool {
        self.kind == TrainKind::Gese && e >= self.n_ge
    }

    /// Index of the echo whose TE is closest to `te`.
    pub fn nearest_echo(&self, te: f64) -> usize {
        let mut best = 0;
        for (i, t) in self.echo_times.iter().enumerate() {
            if (t - te).abs() < (self.echo_times[best] - te).abs() {
                best = i;
            }
        }
        best
    }
}

/// Per-voxel quantitative maps.
#[derive(Clone, Debug, PartialEq)]
pub struct TissuePhantom {
    pub grid: Grid,
    pub pd: Vec<f64>,
    /// ms
    pub t2: Vec<f64>,
    /// ms
    pub t2s: Vec<f64>,
    /// Hz
    pub b0: Vec<f64>,
    /// rad
    pub phase0: Vec<f64>,
    pub se_scale: Vec<f64>,
    /// Region label, 0 is background.
    pub labels: Vec<u32>,
}

impl TissuePhantom {
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        let maps: [&[f64]; 6] =
            [&self.pd, &self.t2, &self.t2s, &self.b0, &self.phase0, &self.se_scale];
        if maps.iter().any(|m| m.len() != n) || self.labels.len() != n {
            return Err(Error::dim("phantom maps do not match the grid"));
        }
        if maps.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("phantom maps must be finite"));
        }
        for i in 0..n {
            if self.pd[i] < 0.0 {
                return Err(Error::invalid("proton density must be nonnegative"));
            }
            if self.pd[i] > 0.0 {
                if self.t2s[i] > self.t2[i] || self.t2s[i] <= 0.0 {
                    return Err(Error::invalid(format!("t2* > t2 or t2* <= 0 at voxel {i}")));
                }
                if self.se_scale[i] <= 0.0 {
                    return Err(Error::invalid("se_scale must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Object support: voxels with nonzero proton density.
    pub fn support(&self) -> Vec<bool> {
        self.pd.iter().map(|&p| p > 0.0).collect()
    }
}

/// Complex receive sensitivities, one map per coil.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSet {
    pub grid: Grid,
    pub sens: Vec<Vec<C64>>,
}

impl CoilSet {
    #[inline]
    pub fn n_coils(&self) -> usize {
        self.sens.len()
    }

    pub fn sum_of_squares(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.len()];
        for s in &self.sens {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v.norm_sqr();
            }
        }
        acc
    }

    pub fn validate(&self) -> Result<()> {
        if self.sens.is_empty() {
            return Err(Error::invalid("coil set is empty"));
        }
        if self.sens.iter().any(|s| s.len() != self.grid.len()) {
            return Err(Error::dim("coil map does not match the grid"));
        }
        if self.sens.iter().flatten().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::invalid("coil sensitivities must be finite"));
        }
        Ok(())
    }

    /// Check the sensitivity-coverage invariant on the given support.
    pub fn covers(&self, support: &[bool]) -> bool {
        self.sum_of_squares().iter().zip(support).all(|(s, &m)| !m || *s > 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    TwoD,
    ThreeD,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::TwoD => "2D",
            Layout::ThreeD => "3D",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "2D" => Ok(Layout::TwoD),
            "3D" => Ok(Layout::ThreeD),
            other => Err(Error::invalid(format!("unknown layout '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatternFamily {
    Caipi,
    TvCaipi,
    Random,
    VdsTvCaipi,
    VdsRandom,
    Epti2d,
}

impl PatternFamily {
    pub fn name(self) -> &'static str {
        match self {
            PatternFamily::Caipi => "CAIPI",
            PatternFamily::TvCaipi => "TV-CAIPI",
            PatternFamily::Random => "RANDOM",
            PatternFamily::VdsTvCaipi => "VDS-TV-CAIPI",
            PatternFamily::VdsRandom => "VDS-RANDOM",
            PatternFamily::Epti2d => "EPTI-2D",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "CAIPI" => Ok(PatternFamily::Caipi),
            "TV-CAIPI" => Ok(PatternFamily::TvCaipi),
            "RANDOM" => Ok(PatternFamily::Random),
            "VDS-TV-CAIPI" => Ok(PatternFamily::VdsTvCaipi),
            "VDS-RANDOM" => Ok(PatternFamily::VdsRandom),
            "EPTI-2D" | "EPTI2D" => Ok(PatternFamily::Epti2d),
            other => Err(Error::invalid(format!("unknown pattern family '{other}'"))),
        }
    }

    pub fn is_vds(self) -> bool {
        matches!(self, PatternFamily::VdsTvCaipi | PatternFamily::VdsRandom)
    }
}

/// Binary k-t sampling mask: one (ky, kz) line per shot and echo.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPattern {
    pub layout: Layout,
    pub family: PatternFamily,
    pub ny: usize,
    pub nz: usize,
    /// Block size (by, bz). For 2D EPTI this is (r_seg, 1).
    pub block: (usize, usize),
    pub n_echoes: usize,
    pub n_shots: usize,
    pub shift: (usize, usize),
    pub seed: u64,
    /// PE step between consecutive lines (2D EPTI only, 0 otherwise).
    pub r_pe: usize,
    /// Block of the dense central zone (VDS only).
    pub center_block: Option<(usize, usize)>,
    pub ellipse: bool,
    entries: Vec<(u32, u32)>,
}

impl SamplingPattern {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_entries(
        layout: Layout,
        family: PatternFamily,
        ny: usize,
        nz: usize,
        block: (usize, usize),
        n_echoes: usize,
        entries: Vec<(u32, u32)>,
    ) -> Result<Self> {
        if n_echoes == 0 || entries.len() % n_echoes != 0 {
            return Err(Error::dim("pattern entries must fill whole shots"));
        }
        let pattern = SamplingPattern {
            layout,
            family,
            ny,
            nz,
            block,
            n_echoes,
            n_shots: entries.len() / n_echoes,
            shift: (0, 0),
            seed: 0,
            r_pe: 0,
            center_block: None,
            ellipse: false,
            entries,
        };
        pattern.validate()?;
        Ok(pattern)
    }

    /// The (ky, kz) line acquired by `shot` at echo `echo`.
    #[inline]
    pub fn line(&self, shot: usize, echo: usize) -> (usize, usize) {
        let (ky, kz) = self.entries[shot * self.n_echoes + echo];
        (ky as usize, kz as usize)
    }

    /// Raw entries, shot-major.
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn validate(&self) -> Result<()> {
        if self.ny == 0 || self.nz == 0 {
            return Err(Error::invalid("pattern matrix must be nonempty"));
        }
        if self.layout == Layout::TwoD && self.nz != 1 {
            return Err(Error::invalid("2D pattern must have nz = 1"));
        }
        if self.entries.len() != self.n_shots * self.n_echoes {
            return Err(Error::dim("pattern needs exactly one line per (shot, echo)"));
        }
        if self.entries.iter().any(|&(y, z)| y as usize >= self.ny || z as usize >= self.nz) {
            return Err(Error::invalid("pattern line out of bounds"));
        }
        let blockwise = self.layout == Layout::ThreeD && !self.family.is_vds();
        if blockwise {
            let (by, bz) = self.block;
            if by == 0 || bz == 0 {
                return Err(Error::invalid("block size must be positive"));
            }
            for s in 0..self.n_shots {
                let (y0, z0) = self.line(s, 0);
                let home = (y0 / by, z0 / bz);
                if (0..self.n_echoes).any(|e| {
                    let (y, z) = self.line(s, e);
                    (y / by, z / bz) != home
                }) {
                    return Err(Error::invalid(format!("shot {s} leaves its block")));
                }
            }
        }
        Ok(())
    }

    /// Number of (ky, kz) positions in the matrix.
    pub fn matrix_size(&self) -> usize {
        self.ny * self.nz
    }
}

/// Acquired k-t samples, stored `[shot][coil][echo][kx]` with kx fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct KtData {
    pub nx: usize,
    pub n_coils: usize,
    pub pattern: Arc<SamplingPattern>,
    pub train: Arc<EchoTrain>,
    pub samples: Vec<C64>,
}

impl KtData {
    pub fn zeros(
        nx: usize,
        n_coils: usize,
        pattern: Arc<SamplingPattern>,
        train: Arc<EchoTrain>,
    ) -> Self {
        let len = pattern.n_shots * n_coils * pattern.n_echoes * nx;
        KtData { nx, n_coils, pattern, train, samples: vec![C64::new(0.0, 0.0); len] }
    }

    #[inline]
    pub fn offset(&self, shot: usize, coil: usize, echo: usize) -> usize {
        ((shot * self.n_coils + coil) * self.pattern.n_echoes + echo) * self.nx
    }

    pub fn line(&self, shot: usize, coil: usize, echo: usize) -> &[C64] {
        let o = self.offset(shot, coil, echo);
        &self.samples[o..o + self.nx]
    }

    pub fn line_mut(&mut self, shot: usize, coil: usize, echo: usize) -> &mut [C64] {
        let o = self.offset(shot, coil, echo);
        &mut self.samples[o..o + self.nx]
    }

    pub fn validate(&self) -> Result<()> {
        let expect = self.pattern.n_shots * self.n_coils * self.pattern.n_echoes * self.nx;
        if self.samples.len() != expect {
            return Err(Error::dim(format!(
                "kt data has {} samples, pattern implies {expect}",
                self.samples.len()
            )));
        }
        if self.train.len() != self.pattern.n_echoes {
            return Err(Error::dim("echo train and pattern disagree on echo count"));
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Keep the lines of `self` that `target` acquires. Every target line
    /// must exist in `self` at the same echo.
    pub fn retrospective_undersample(&self, target: Arc<SamplingPattern>) -> Result<KtData> {
        use std::collections::HashMap;
        if target.ny != self.pattern.ny
            || target.nz != self.pattern.nz
            || target.n_echoes != self.pattern.n_echoes
        {
            return Err(Error::dim("target pattern does not match the source matrix"));
        }
        let mut out = KtData::zeros(self.nx, self.n_coils, target.clone(), self.train.clone());
        for e in 0..target.n_echoes {
            let mut by_line: HashMap<(usize, usize), usize> = HashMap::new();
            for s in 0..self.pattern.n_shots {
                by_line.entry(self.pattern.line(s, e)).or_insert(s);
            }
            for s in 0..target.n_shots {
                let src = *by_line.get(&target.line(s, e)).ok_or_else(|| {
                    Error::invalid(format!("line {:?} not acquired at echo {e}", target.line(s, e)))
                })?;
                for c in 0..self.n_coils {
                    let line = self.line(src, c, e).to_vec();
                    out.line_mut(s, c, e).copy_from_slice(&line);
                }
            }
        }
        Ok(out)
    }
}

/// Orthonormal temporal basis, `phi[e * k + j]` is echo `e` of component `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBasis {
    pub n_echoes: usize,
    pub k: usize,
    pub phi: Vec<C64>,
    /// Free-text description of the dictionary ranges that produced the basis.
    pub descriptor: String,
}

impl SubspaceBasis {
    #[inline]
    pub fn get(&self, echo: usize, comp: usize) -> C64 {
        self.phi[echo * self.k + comp]
    }

    /// Max deviation of phi^H phi from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.k {
            for b in 0..self.k {
                let mut acc = C64::new(0.0, 0.0);
                for e in 0..self.n_echoes {
                    acc += self.get(e, a).conj() * self.get(e, b);
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).norm());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n_echoes {
            return Err(Error::invalid("basis size must satisfy 1 <= k <= T"));
        }
        if self.phi.len() != self.n_echoes * self.k {
            return Err(Error::dim("basis matrix has the wrong size"));
        }
        let err = self.orthonormality_error();
        if !(err <= 1e-10) {
            return Err(Error::invalid(format!("basis columns not orthonormal (err {err:.3e})")));
        }
        Ok(())
    }
}

/// Coefficient maps `c`, one complex map per basis component.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMaps {
    pub grid: Grid,
    pub maps: Vec<Vec<C64>>,
}

impl CoefficientMaps {
    pub fn zeros(grid: Grid, k: usize) -> Self {
        CoefficientMaps { grid, maps: vec![vec![C64::new(0.0, 0.0); grid.len()]; k] }
    }

    pub fn k(&self) -> usize {
        self.maps.len()
    }

    pub fn norm(&self) -> f64 {
        self.maps.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.maps.iter().flatten().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Echo images `phi * c`.
    pub fn to_images(&self, basis: &SubspaceBasis) -> ImageSeries {
        let n = self.grid.len();
        let images = (0..basis.n_echoes)
            .map(|e| {
                let mut img = vec![C64::new(0.0, 0.0); n];
                for (j, map) in self.maps.iter().enumerate() {
                    let w = basis.get(e, j);
                    for (o, v) in img.iter_mut().zip(map) {
                        *o += w * v;
                    }
                }
                img
            })
            .collect();
        ImageSeries { grid: self.grid, images }
    }
}

/// Multi-echo complex images, one map per echo.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSeries {
    pub grid: Grid,
    pub images: Vec<Vec<C64>>,
}

impl ImageSeries {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.images.iter().map(|m| m.iter().map(|v| v.norm()).collect()).collect()
    }

    /// Project onto a basis: `c = phi^H I`.
    pub fn project(&self, basis: &SubspaceBasis) -> CoefficientMaps {
        let n = self.grid.len();
        let mut maps = vec![vec![C64::new(0.0, 0.0); n]; basis.k];
        for (e, img) in self.images.iter().enumerate() {
            for (j, map) in maps.iter_mut().enumerate() {
                let w = basis.get(e, j).conj();
                for (o, v) in map.iter_mut().zip(img) {
                    *o += w * v;
                }
            }
        }
        CoefficientMaps { grid: self.grid, maps }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    Low,
    High,
}

impl Resolution {
    pub fn name(self) -> &'static str {
        match self {
            Resolution::Low => "low",
            Resolution::High => "high",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Resolution::Low),
            "high" => Ok(Resolution::High),
            other => Err(Error::invalid(format!("unknown resolution tag '{other}'"))),
        }
    }
}

/// Static off-resonance map in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct B0Map {
    pub grid: Grid,
    pub hz: Vec<f64>,
    pub resolution: Resolution,
}

impl B0Map {
    pub fn zeros(grid: Grid) -> Self {
        B0Map { grid, hz: vec![0.0; grid.len()], resolution: Resolution::High }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hz.len() != self.grid.len() {
            return Err(Error::dim("b0 map does not match the grid"));
        }
        if self.hz.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("b0 map must be finite"));
        }
        Ok(())
    }
}

/// Number of terms in the 2nd-order 2D polynomial basis.
pub const POLY_TERMS: usize = 6;

/// Polynomial basis `[1, x, y, x^2, xy, y^2]` at normalized coordinates.
#[inline]
pub fn poly_basis(x: f64, y: f64) -> [f64; POLY_TERMS] {
    [1.0, x, y, x * x, x * y, y * y]
}

/// Per-shot polynomial B0 variation and per-shot, per-coil mean field changes.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotVariation {
    /// Polynomial coefficients per shot (Hz per normalized-coordinate power).
    pub coeffs: Vec<[f64; POLY_TERMS]>,
    /// `b_var[shot][coil]` in Hz. Empty when not estimated from data.
    pub b_var: Vec<Vec<f64>>,
}

impl ShotVariation {
    pub fn zeros(n_shots: usize) -> Self {
        ShotVariation { coeffs: vec![[0.0; POLY_TERMS]; n_shots], b_var: Vec::new() }
    }

    pub fn n_shots(&self) -> usize {
        self.coeffs.len()
    }

    /// Field `A c_var` of one shot on the grid, in Hz. Constant along z.
    pub fn field(&self, grid: &Grid, shot: usize) -> Vec<f64> {
        let c = &self.coeffs[shot];
        let mut out = vec![0.0; grid.len()];
        for z in 0..grid.nz {
            for y in 0..grid.ny {
                let yn = Grid::normalized(y, grid.ny);
                for x in 0..grid.nx {
                    let xn = Grid::normalized(x, grid.nx);
                    let a = poly_basis(xn, yn);
                    out[grid.index(x, y, z)] = a.iter().zip(c).map(|(a, c)| a * c).sum();
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().all(|&c| c == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.iter().flatten().any(|c| !c.is_finite())
            || self.b_var.iter().flatten().any(|c| !c.is_finite())
        {
            return Err(Error::invalid("shot variation must be finite"));
        }
        if !self.b_var.is_empty() {
            if self.b_var.len() != self.coeffs.len() {
                return Err(Error::dim("b_var needs one row per shot"));
            }
            let nc = self.b_var[0].len();
            if self.b_var.iter().any(|r| r.len() != nc) {
                return Err(Error::dim("b_var rows must have equal coil counts"));
            }
        }
        Ok(())
    }
}
