//! Experiment configuration: a JSON document with one section per stage.
//!
//! Every section is optional and falls back to the desk-scale defaults.
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use eptikit_core::encoding::{
    block_for_rate, caipi_3d_pattern, epti_2d_pattern, random_3d_pattern, tv_caipi_3d_pattern, vds_pattern,
};
use eptikit_core::phantom::PRESETS;
use eptikit_core::recon::{ReconConfig, RegKind};
use eptikit_core::signal::{DictionaryRanges, Spacing};
use eptikit_core::{EchoTrain, Grid, Layout, PatternFamily, SamplingPattern};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment_id: Option<String>,
    pub grid: Option<GridConfig>,
    pub phantom: PhantomConfig,
    pub coils: CoilConfig,
    pub echo_train: Option<TrainConfig>,
    pub basis: BasisConfig,
    pub patterns: Vec<PatternConfig>,
    pub recon: ReconSection,
    pub analysis: AnalysisConfig,
    pub seeds: SeedConfig,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub preset: String,
    /// One phantom per seed; metrics are averaged over them.
    pub seeds: Vec<u64>,
    /// Smooth B0 amplitude (Hz).
    pub b0_smooth_hz: f64,
    /// Localized B0 bump amplitude (Hz).
    pub b0_bump_hz: f64,
    /// Complex noise std per k-space sample.
    pub noise_std: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { preset: "ellipses".into(), seeds: vec![1], b0_smooth_hz: 0.0, b0_bump_hz: 0.0, noise_std: 0.0 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoilConfig {
    pub n_coils: usize,
}

impl Default for CoilConfig {
    fn default() -> Self {
        CoilConfig { n_coils: 8 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrainConfig {
    Ge { n_echoes: usize, first_te_ms: f64, esp_ms: f64 },
    Gese { n_ge: usize, first_ge_ms: f64, n_se: usize, first_se_ms: f64, esp_ms: f64, te_se_ms: f64 },
    /// 40 GE + 80 SE echoes at 0.93 ms.
    Gese2dPreset,
}

impl TrainConfig {
    pub fn build(&self) -> CliResult<EchoTrain> {
        Ok(match *self {
            TrainConfig::Ge { n_echoes, first_te_ms, esp_ms } => EchoTrain::gradient_echo(n_echoes, first_te_ms, esp_ms)?,
            TrainConfig::Gese { n_ge, first_ge_ms, n_se, first_se_ms, esp_ms, te_se_ms } => {
                EchoTrain::gese(n_ge, first_ge_ms, n_se, first_se_ms, esp_ms, te_se_ms)?
            }
            TrainConfig::Gese2dPreset => EchoTrain::gese_2d_preset(),
        })
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub k: usize,
    pub t2_ms: (f64, f64),
    pub t2s_ms: (f64, f64),
    pub scale: (f64, f64),
    pub steps: (usize, usize, usize),
    pub spacing: String,
}

impl Default for BasisConfig {
    fn default() -> Self {
        let p = DictionaryRanges::standard();
        BasisConfig { k: 8, t2_ms: p.t2, t2s_ms: p.t2s, scale: p.scale, steps: p.steps, spacing: "linear".into() }
    }
}

impl BasisConfig {
    pub fn ranges(&self) -> CliResult<DictionaryRanges> {
        Ok(DictionaryRanges {
            t2: self.t2_ms,
            t2s: self.t2s_ms,
            scale: self.scale,
            steps: self.steps,
            spacing: Spacing::parse(&self.spacing)?,
        })
    }
}

/// One sampling pattern, with optional per-pattern regularization.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PatternConfig {
    pub family: String,
    #[serde(default)]
    pub block: Option<(usize, usize)>,
    #[serde(default)]
    pub shift: Option<(usize, usize)>,
    /// Pattern seed for random families (defaults to `seeds.pattern`).
    #[serde(default)]
    pub seed: Option<u64>,
    /// Center-zone rate for VDS families.
    #[serde(default)]
    pub r_center: Option<usize>,
    #[serde(default)]
    pub ellipse: Option<bool>,
    /// 2D only.
    #[serde(default)]
    pub r_pe: Option<usize>,
    #[serde(default)]
    pub r_seg: Option<usize>,
    #[serde(default)]
    pub reg: Option<String>,
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl PatternConfig {
    pub fn new(family: &str, block: (usize, usize)) -> Self {
        PatternConfig {
            family: family.into(),
            block: Some(block),
            shift: None,
            seed: None,
            r_center: None,
            ellipse: None,
            r_pe: None,
            r_seg: None,
            reg: None,
            lambda: None,
        }
    }

    pub fn with_shift(mut self, shift: (usize, usize)) -> Self {
        self.shift = Some(shift);
        self
    }

    /// Family tag for output tables ("tv-caipi", "vds-random", ...).
    pub fn family(&self) -> CliResult<PatternFamily> {
        Ok(PatternFamily::parse(&self.family)?)
    }

    pub fn build(&self, ny: usize, nz: usize, n_echo: usize, default_seed: u64) -> CliResult<SamplingPattern> {
        let family = self.family()?;
        let seed = self.seed.unwrap_or(default_seed);
        if self.shift.is_some() && !matches!(family, PatternFamily::TvCaipi | PatternFamily::VdsTvCaipi) {
            return Err(CliError::config(format!("a shift is only valid for tv-caipi patterns, not {}", self.family)));
        }
        if family == PatternFamily::Epti2d {
            if nz != 1 {
                return Err(CliError::config("epti-2d needs a 2D grid (nz = 1)"));
            }
            return Ok(epti_2d_pattern(ny, n_echo, self.r_pe.unwrap_or(4), self.r_seg.unwrap_or(24))?);
        }
        if self.r_pe.is_some() || self.r_seg.is_some() {
            return Err(CliError::config("r_pe / r_seg apply to epti-2d patterns only"));
        }
        let (by, bz) = self.block.ok_or_else(|| CliError::config(format!("pattern {} needs a block", self.family)))?;
        let (sy, sz) = self.shift.unwrap_or((0, 0));
        let base = match family {
            PatternFamily::Caipi => caipi_3d_pattern(ny, nz, by, bz, n_echo)?,
            PatternFamily::TvCaipi | PatternFamily::VdsTvCaipi => tv_caipi_3d_pattern(ny, nz, by, bz, n_echo, sy, sz)?,
            PatternFamily::Random | PatternFamily::VdsRandom => random_3d_pattern(ny, nz, by, bz, n_echo, seed)?,
            other => return Err(CliError::config(format!("pattern family {} cannot be configured", other.name()))),
        };
        if family.is_vds() {
            let r_outer = by * bz;
            let r_center = self.r_center.unwrap_or(r_outer);
            // Surface an infeasible center block as a config error before building.
            block_for_rate(r_center, ny, nz, (by, bz))?;
            return Ok(vds_pattern(&base, r_center, r_outer, self.ellipse.unwrap_or(true))?);
        }
        if self.r_center.is_some() || self.ellipse.is_some() {
            return Err(CliError::config("r_center / ellipse apply to vds patterns only"));
        }
        Ok(base)
    }

    /// Shift label "sy-sz" (empty for unshifted families).
    pub fn shift_label(&self) -> String {
        self.shift.map(|(a, b)| format!("{a}-{b}")).unwrap_or_default()
    }
}

/// Solver settings; unset fields keep the library defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub max_iter: Option<usize>,
    pub lambda: Option<f64>,
    pub reg: Option<String>,
    pub llr_block: Option<usize>,
    pub b0_iters: Option<usize>,
    pub b0_lambda: Option<f64>,
    pub outer_loops: Option<usize>,
    pub tol: Option<f64>,
    pub b0_update: Option<bool>,
    pub variation_correction: Option<bool>,
}

impl ReconSection {
    pub fn build(&self, seed: u64) -> CliResult<ReconConfig> {
        let d = ReconConfig::default();
        let cfg = ReconConfig {
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            lambda: self.lambda.unwrap_or(d.lambda),
            reg_kind: self.reg.as_deref().map(RegKind::parse).transpose()?.unwrap_or(d.reg_kind),
            llr_block: self.llr_block.unwrap_or(d.llr_block),
            b0_iters: self.b0_iters.unwrap_or(d.b0_iters),
            b0_lambda: self.b0_lambda.unwrap_or(d.b0_lambda),
            outer_loops: self.outer_loops.unwrap_or(d.outer_loops),
            tol: self.tol.unwrap_or(d.tol),
            b0_update: self.b0_update.unwrap_or(d.b0_update),
            variation_correction: self.variation_correction,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Echo time of the tissue phase and PSF evaluation (ms); defaults to the train center.
    pub te_ref_ms: Option<f64>,
    /// Regions smaller than this are left out of the T2* medians.
    pub min_region_voxels: usize,
    /// Write reconstructed echo images of the first phantom seed.
    pub save_images: bool,
    /// Shift-sweep block.
    pub sweep_block: (usize, usize),
    pub psf_sigmas_hz: Vec<f64>,
    pub psf_seeds: usize,
    /// Correction rounds of the PSF estimate.
    pub psf_loops: usize,
    /// Shot-variation level (Hz) for the variation experiment.
    pub variation_sigma_hz: f64,
    /// Fraction of k-space kept for the low-resolution B0 start map.
    pub b0_low_res_fraction: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            te_ref_ms: None,
            min_region_voxels: 20,
            save_images: true,
            sweep_block: (8, 4),
            psf_sigmas_hz: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            psf_seeds: 5,
            psf_loops: 3,
            variation_sigma_hz: 1.5,
            b0_low_res_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub noise: u64,
    pub pattern: u64,
    pub recon: u64,
    pub b0: u64,
    pub variation: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { noise: 11, pattern: 7, recon: 0, b0: 1, variation: 5 }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Schema checks that need no computation.
    pub fn validate(&self) -> CliResult<()> {
        if let Some(g) = self.grid {
            Grid::new(g.nx, g.ny, g.nz)?;
        }
        if !PRESETS.contains(&self.phantom.preset.as_str()) {
            return Err(CliError::config(format!(
                "unknown phantom preset '{}' (expected one of {PRESETS:?})",
                self.phantom.preset
            )));
        }
        if self.phantom.seeds.is_empty() {
            return Err(CliError::config("phantom.seeds must not be empty"));
        }
        let p = &self.phantom;
        if ![p.b0_smooth_hz, p.b0_bump_hz, p.noise_std].iter().all(|v| v.is_finite()) || p.noise_std < 0.0 {
            return Err(CliError::config("phantom amplitudes must be finite and noise_std non-negative"));
        }
        if self.coils.n_coils == 0 {
            return Err(CliError::config("coils.n_coils must be positive"));
        }
        if self.basis.k == 0 {
            return Err(CliError::config("basis.k must be positive"));
        }
        self.basis.ranges()?;
        if let Some(t) = &self.echo_train {
            t.build()?;
        }
        for p in &self.patterns {
            p.family()?;
            if let Some(r) = &p.reg {
                RegKind::parse(r)?;
            }
            if p.lambda.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
                return Err(CliError::config("pattern lambda must be finite and non-negative"));
            }
        }
        self.recon.build(self.seeds.recon)?;
        let a = &self.analysis;
        if a.psf_seeds == 0 || a.psf_sigmas_hz.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(CliError::config("psf sigmas must be finite and non-negative with at least one seed"));
        }
        if !(a.b0_low_res_fraction > 0.0 && a.b0_low_res_fraction <= 1.0) {
            return Err(CliError::config("b0_low_res_fraction must lie in (0, 1]"));
        }
        if !(a.variation_sigma_hz >= 0.0 && a.variation_sigma_hz.is_finite()) {
            return Err(CliError::config("variation_sigma_hz must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn id(&self, fallback: &str) -> String {
        self.experiment_id.clone().unwrap_or_else(|| fallback.to_string())
    }

    /// The configured grid, or the scale's default for `layout`.
    pub fn grid(&self, scale: Scale, layout: Layout) -> CliResult<Grid> {
        let g = match (self.grid, scale, layout) {
            (Some(g), _, _) => g,
            (None, Scale::Desk, Layout::ThreeD) => GridConfig { nx: 96, ny: 96, nz: 32 },
            (None, Scale::Paper, Layout::ThreeD) => GridConfig { nx: 200, ny: 200, nz: 96 },
            (None, Scale::Desk, Layout::TwoD) => GridConfig { nx: 48, ny: 216, nz: 1 },
            (None, Scale::Paper, Layout::TwoD) => GridConfig { nx: 216, ny: 216, nz: 1 },
        };
        Ok(Grid::new(g.nx, g.ny, g.nz)?)
    }

    /// The configured train, or the default for `layout` (20 GE echoes
    /// over 9.1-54.7 ms in 3D, the GESE preset in 2D).
    pub fn train(&self, scale: Scale, layout: Layout) -> CliResult<EchoTrain> {
        match (&self.echo_train, scale, layout) {
            (Some(t), _, _) => t.build(),
            (None, Scale::Desk, Layout::ThreeD) => Ok(EchoTrain::gradient_echo(20, 9.1, 2.4)?),
            (None, Scale::Paper, Layout::ThreeD) => Ok(EchoTrain::gradient_echo(50, 9.1, 0.93)?),
            (None, _, Layout::TwoD) => Ok(EchoTrain::gese_2d_preset()),
        }
    }

    pub fn layout(&self) -> Layout {
        match self.grid {
            Some(g) if g.nz == 1 => Layout::TwoD,
            Some(_) => Layout::ThreeD,
            None if self.patterns.iter().any(|p| p.family().is_ok_and(|f| f == PatternFamily::Epti2d)) => Layout::TwoD,
            None => Layout::ThreeD,
        }
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).or_else(|| self.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Recon settings for one pattern: the shared section with the
    /// pattern's regularization override.
    pub fn recon_for(&self, pattern: &PatternConfig) -> CliResult<ReconConfig> {
        let mut cfg = self.recon.build(self.seeds.recon)?;
        if let Some(r) = &pattern.reg {
            cfg.reg_kind = RegKind::parse(r)?;
        }
        if let Some(l) = pattern.lambda {
            cfg.lambda = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub const PRESET_NAMES: [&str; 6] = ["encodings", "two-rates", "shift-sweep", "psf", "b0-update", "shot-variation"];

/// Built-in experiment configurations.
pub fn preset(name: &str) -> CliResult<ExperimentConfig> {
    let llr = |p: PatternConfig| PatternConfig { reg: Some("llr".into()), lambda: Some(VDS_LLR_LAMBDA), ..p };
    let mut cfg = ExperimentConfig { experiment_id: Some(name.to_string()), ..Default::default() };
    cfg.recon.b0_update = Some(false);
    // Retrospective 3D runs: readout shortened to keep the sweep cheap (the
    // problem separates along x), single pass, fixed CG budget.
    let retro_3d = |cfg: &mut ExperimentConfig, nx: usize, nz: usize| {
        cfg.grid = Some(GridConfig { nx, ny: 96, nz });
        cfg.phantom.noise_std = DESK_NOISE;
        cfg.basis.k = 3;
        cfg.recon.outer_loops = Some(1);
        cfg.recon.max_iter = Some(RETRO_MAX_ITER);
    };
    match name {
        "encodings" => {
            retro_3d(&mut cfg, 16, 32);
            cfg.phantom.seeds = vec![1, 2, 3];
            cfg.patterns = vec![
                PatternConfig::new("caipi", (8, 4)),
                PatternConfig::new("tv-caipi", (8, 4)).with_shift(BEST_SHIFT_8X4),
                PatternConfig::new("random", (8, 4)),
                llr(PatternConfig { r_center: Some(16), ..PatternConfig::new("vds-tv-caipi", (8, 4)).with_shift(BEST_SHIFT_8X4) }),
                llr(PatternConfig { r_center: Some(16), ..PatternConfig::new("vds-random", (8, 4)) }),
            ];
        }
        "two-rates" => {
            // 72 = 12x6 does not tile 32 partitions.
            retro_3d(&mut cfg, 16, 36);
            cfg.phantom.seeds = vec![1, 2, 3];
            cfg.echo_train = Some(TrainConfig::Ge { n_echoes: 50, first_te_ms: 9.1, esp_ms: 0.93 });
            cfg.patterns = vec![
                llr(PatternConfig { r_center: Some(32), ..PatternConfig::new("vds-tv-caipi", (12, 6)).with_shift((6, 0)) }),
                llr(PatternConfig { r_center: Some(16), ..PatternConfig::new("vds-tv-caipi", (8, 4)).with_shift(BEST_SHIFT_8X4) }),
            ];
        }
        "shift-sweep" => {
            retro_3d(&mut cfg, 8, 32);
            cfg.analysis.save_images = false;
        }
        "psf" => {
            cfg.basis.k = 8;
        }
        "b0-update" => {
            cfg.basis.k = 8;
            cfg.phantom.b0_smooth_hz = 20.0;
            cfg.phantom.b0_bump_hz = 30.0;
            cfg.recon.b0_update = Some(true);
            cfg.recon.variation_correction = Some(false);
        }
        "shot-variation" => {
            cfg.basis.k = 8;
            cfg.seeds.variation = 7;
            cfg.recon.outer_loops = Some(3);
        }
        other => {
            return Err(CliError::config(format!(
                "unknown preset '{other}' (expected encodings, two-rates, shift-sweep, psf, b0-update or shot-variation)"
            )))
        }
    }
    Ok(cfg)
}

/// Noise std of the retrospective 3D presets.
pub const DESK_NOISE: f64 = 0.0005;
/// Lowest-RMSE shift of the 8x4 `shift-sweep` preset.
pub const BEST_SHIFT_8X4: (usize, usize) = (4, 0);
/// CG iterations of the retrospective 3D presets.
pub const RETRO_MAX_ITER: usize = 300;
/// LLR weight used with the VDS patterns.
pub const VDS_LLR_LAMBDA: f64 = 0.002;
