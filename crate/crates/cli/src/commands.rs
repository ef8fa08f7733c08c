use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use eptikit_core::analysis::region_medians;
use eptikit_core::encoding::{acceleration_of, complementarity_score};
use eptikit_core::operators::ForwardModel;
use eptikit_core::phantom::make_coils;
use eptikit_core::recon::reconstruct_pipeline;
use eptikit_core::signal::{approximation_error, build_dictionary, extract_basis};
use eptikit_core::simulate::{simulate_kt, SimOptions};
use eptikit_core::{
    read_container, B0Map, CoilSet, KtData, Layout, Resolution, SamplingPattern, SubspaceBasis,
};

use crate::config::{preset, ExperimentConfig, PatternConfig, Scale};
use crate::error::{CliError, CliResult};
use crate::experiments::{
    build_basis, build_phantom, run_b0_experiment, run_psf, run_retro, run_shift_sweep, run_variation_experiment,
    RetroRow,
};
use crate::output::{num, opt_num, Staged, Table};

#[derive(Debug, Parser)]
#[command(name = "eptikit", version, about = "EPTI simulation and subspace reconstruction experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Phantom seed (pattern seed for `pattern`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub scale: Scale,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the phantom, coil maps and B0 map.
    Phantom,
    /// Build the signal dictionary and write the subspace basis.
    Basis,
    /// Generate one sampling pattern; prints acceleration and complementarity.
    Pattern(PatternArgs),
    /// Simulate k-t data for every configured pattern.
    Simulate,
    /// Reconstruct k-t data written by `simulate`.
    Recon(ReconArgs),
    /// Retrospective undersampling experiment over the configured patterns.
    ExperimentRetro(PresetArgs),
    /// RMSE of temporal-variant CAIPI for every shift of a block.
    ShiftSweep(PresetArgs),
    /// Point-spread function of shot-to-shot field variation.
    Psf(PresetArgs),
    /// B0 map refinement from a low-resolution start (2D).
    B0Update(PresetArgs),
    /// Shot-to-shot variation correction (2D).
    ShotVariation(PresetArgs),
}

#[derive(Debug, Args)]
pub struct PatternArgs {
    /// caipi, tv-caipi, random, vds-tv-caipi, vds-random or epti-2d.
    #[arg(long)]
    pub family: String,
    /// Block size, e.g. 12x6.
    #[arg(long, value_parser = parse_block)]
    pub block: Option<(usize, usize)>,
    /// Section shift, e.g. 0,2 (tv-caipi only).
    #[arg(long, value_parser = parse_shift)]
    pub shift: Option<(usize, usize)>,
    /// Center-zone rate of VDS patterns.
    #[arg(long)]
    pub r_center: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nz: Option<usize>,
    #[arg(long)]
    pub echoes: Option<usize>,
    #[arg(long)]
    pub r_pe: Option<usize>,
    #[arg(long)]
    pub r_seg: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    /// k-t data container.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub coils: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    /// Starting B0 map (zero if absent).
    #[arg(long)]
    pub b0: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    /// Built-in configuration used when no --config is given.
    #[arg(long)]
    pub preset: Option<String>,
}

fn parse_pair(s: &str, sep: char) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(sep).ok_or_else(|| format!("expected A{sep}B, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_block(s: &str) -> Result<(usize, usize), String> {
    parse_pair(&s.to_ascii_lowercase(), 'x')
}

fn parse_shift(s: &str) -> Result<(usize, usize), String> {
    parse_pair(s, ',')
}

fn load_config(global: &GlobalArgs, preset_name: Option<&str>) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&global.config, preset_name) {
        (Some(_), Some(_)) => return Err(CliError::config("give either --config or --preset, not both")),
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.phantom.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Phantom => cmd_phantom(g),
        Command::Basis => cmd_basis(g),
        Command::Pattern(a) => cmd_pattern(g, a),
        Command::Simulate => cmd_simulate(g),
        Command::Recon(a) => cmd_recon(g, a),
        Command::ExperimentRetro(a) => {
            if g.config.is_none() && a.preset.is_none() {
                return Err(CliError::config("experiment-retro needs --config or --preset"));
            }
            cmd_retro(g, a.preset.as_deref())
        }
        Command::ShiftSweep(a) => cmd_sweep(g, a.preset.as_deref().or(default_preset(g, "shift-sweep"))),
        Command::Psf(a) => cmd_psf(g, a.preset.as_deref().or(default_preset(g, "psf"))),
        Command::B0Update(a) => cmd_b0(g, a.preset.as_deref().or(default_preset(g, "b0-update"))),
        Command::ShotVariation(a) => cmd_variation(g, a.preset.as_deref().or(default_preset(g, "shot-variation"))),
    }
}

fn default_preset<'a>(g: &GlobalArgs, name: &'a str) -> Option<&'a str> {
    g.config.is_none().then_some(name)
}

fn out_dir(g: &GlobalArgs, cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir(g.out.as_deref())
}

fn print_table(t: &Table) -> CliResult<()> {
    print!("{}", String::from_utf8_lossy(&t.to_bytes()?));
    Ok(())
}

fn cmd_phantom(g: &GlobalArgs) -> CliResult<()> {
    let cfg = load_config(g, None)?;
    let layout = cfg.layout();
    let grid = cfg.grid(g.scale, layout)?;
    let dir = out_dir(g, &cfg);
    let mut staged = Staged::default();
    let mut regions = Table::new(&["seed", "label", "voxels", "median_pd", "median_t2_ms", "median_t2s_ms"]);
    for &seed in &cfg.phantom.seeds {
        let ph = build_phantom(&cfg, grid, seed)?;
        let all = vec![true; grid.len()];
        let med = |m: &[f64]| region_medians(m, &ph.labels, &all);
        let (pd, t2, t2s) = (med(&ph.pd), med(&ph.t2), med(&ph.t2s));
        for (((l, p, n), (_, a, _)), (_, b, _)) in pd.iter().zip(&t2).zip(&t2s) {
            regions.push(vec![seed.to_string(), l.to_string(), n.to_string(), num(*p), num(*a), num(*b)]);
        }
        let b0 = B0Map { grid, hz: ph.b0.clone(), resolution: Resolution::High };
        staged.container(dir.join(format!("phantom_{seed}.ept")), &ph)?;
        staged.container(dir.join(format!("b0_{seed}.ept")), &b0)?;
    }
    staged.container(dir.join("coils.ept"), &make_coils(grid, cfg.coils.n_coils)?)?;
    staged.table(dir.join("regions.csv"), &regions)?;
    staged.commit()?;
    print_table(&regions)
}

fn cmd_basis(g: &GlobalArgs) -> CliResult<()> {
    let cfg = load_config(g, None)?;
    let train = cfg.train(g.scale, cfg.layout())?;
    let dict = build_dictionary(&cfg.basis.ranges()?, &train)?;
    let basis = extract_basis(&dict, cfg.basis.k)?;
    let err = approximation_error(&dict, &basis)?;
    let mut t = Table::new(&["k", "n_echoes", "n_atoms", "approximation_error_pct"]);
    t.push(vec![basis.k.to_string(), train.len().to_string(), dict.n_atoms().to_string(), num(100.0 * err)]);
    let dir = out_dir(g, &cfg);
    let mut staged = Staged::default();
    staged.container(dir.join("basis.ept"), &basis)?;
    staged.table(dir.join("basis.csv"), &t)?;
    staged.commit()?;
    print_table(&t)
}

fn cmd_pattern(g: &GlobalArgs, a: &PatternArgs) -> CliResult<()> {
    let cfg = load_config(g, None)?;
    let pc = PatternConfig {
        block: a.block,
        shift: a.shift,
        seed: g.seed,
        r_center: a.r_center,
        r_pe: a.r_pe,
        r_seg: a.r_seg,
        ..PatternConfig::new(&a.family, (0, 0))
    };
    let layout = if pc.family()? == eptikit_core::PatternFamily::Epti2d { Layout::TwoD } else { Layout::ThreeD };
    let grid = cfg.grid(g.scale, layout)?;
    let echoes = match a.echoes {
        Some(n) => n,
        None => cfg.train(g.scale, layout)?.len(),
    };
    let ny = a.ny.unwrap_or(grid.ny);
    let nz = if layout == Layout::TwoD { 1 } else { a.nz.unwrap_or(grid.nz) };
    let pattern = pc.build(ny, nz, echoes, cfg.seeds.pattern)?;
    let comp = match pattern.layout {
        Layout::ThreeD if !pattern.family.is_vds() => Some(complementarity_score(&pattern)?),
        _ => None,
    };
    let mut t = Table::new(&["pattern_family", "block", "shift", "seed", "acceleration", "complementarity"]);
    t.push(vec![
        pattern.family.name().to_string(),
        format!("{}x{}", pattern.block.0, pattern.block.1),
        pc.shift_label(),
        pattern.seed.to_string(),
        num(acceleration_of(&pattern)),
        opt_num(comp),
    ]);
    let dir = out_dir(g, &cfg);
    let mut staged = Staged::default();
    staged.container(dir.join("pattern.ept"), &pattern)?;
    staged.table(dir.join("pattern.csv"), &t)?;
    staged.commit()?;
    print_table(&t)
}

fn cmd_simulate(g: &GlobalArgs) -> CliResult<()> {
    let cfg = load_config(g, None)?;
    if cfg.patterns.is_empty() {
        return Err(CliError::config("simulate needs at least one pattern"));
    }
    let layout = cfg.layout();
    let grid = cfg.grid(g.scale, layout)?;
    let train = Arc::new(cfg.train(g.scale, layout)?);
    let coils = Arc::new(make_coils(grid, cfg.coils.n_coils)?);
    let basis = Arc::new(build_basis(&cfg, &train)?);
    let seed = cfg.phantom.seeds[0];
    let ph = build_phantom(&cfg, grid, seed)?;
    let opts = SimOptions { noise_std: cfg.phantom.noise_std, seed: cfg.seeds.noise.wrapping_add(seed), variation: None };
    let dir = out_dir(g, &cfg);
    let mut staged = Staged::default();
    let mut t = Table::new(&["index", "pattern_family", "shift", "acceleration", "shots", "file", "phantom_seed", "noise_seed"]);
    for (i, pc) in cfg.patterns.iter().enumerate() {
        let pattern = Arc::new(pc.build(grid.ny, grid.nz, train.len(), cfg.seeds.pattern)?);
        let y = simulate_kt(&ph, coils.clone(), pattern.clone(), train.clone(), basis.clone(), &opts)?;
        let file = format!("kt_{i}.ept");
        t.push(vec![
            i.to_string(),
            pattern.family.name().to_string(),
            pc.shift_label(),
            num(acceleration_of(&pattern)),
            pattern.n_shots.to_string(),
            file.clone(),
            seed.to_string(),
            opts.seed.to_string(),
        ]);
        staged.container(dir.join(file), &y)?;
    }
    staged.container(dir.join("phantom.ept"), &ph)?;
    staged.container(dir.join("coils.ept"), coils.as_ref())?;
    staged.container(dir.join("basis.ept"), basis.as_ref())?;
    staged.table(dir.join("simulate.csv"), &t)?;
    staged.commit()?;
    print_table(&t)
}

fn read<T: eptikit_core::Persist>(path: &Path) -> CliResult<T> {
    read_container(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn cmd_recon(g: &GlobalArgs, a: &ReconArgs) -> CliResult<()> {
    let cfg = load_config(g, None)?;
    let y: KtData = read(&a.data)?;
    let coils: CoilSet = read(&a.coils)?;
    let basis: SubspaceBasis = read(&a.basis)?;
    let grid = coils.grid;
    let b0 = match &a.b0 {
        Some(p) => read::<B0Map>(p)?,
        None => B0Map::zeros(grid),
    };
    let recon = match cfg.patterns.first() {
        Some(p) => cfg.recon_for(p)?,
        None => cfg.recon.build(cfg.seeds.recon)?,
    };
    let pattern: Arc<SamplingPattern> = y.pattern.clone();
    let model = ForwardModel::new(grid, Arc::new(coils), pattern, y.train.clone(), Arc::new(basis))?;
    let out = reconstruct_pipeline(model, &y, &b0, &recon)?;
    let mut t = Table::new(&["loop", "residual", "residual_after_variation", "variation_step"]);
    for (i, s) in out.history.iter().enumerate() {
        t.push(vec![i.to_string(), num(s.residual), opt_num(s.residual_after_variation), opt_num(s.variation_step)]);
    }
    let dir = out_dir(g, &cfg);
    let mut staged = Staged::default();
    staged.container(dir.join("coefficients.ept"), &out.coefficients)?;
    staged.container(dir.join("images.ept"), &out.images)?;
    staged.container(dir.join("b0.ept"), &out.b0)?;
    staged.container(dir.join("variation.ept"), &out.variation)?;
    staged.table(dir.join("recon.csv"), &t)?;
    staged.commit()?;
    print_table(&t)
}

const METRIC_HEADER: [&str; 13] = [
    "experiment_id",
    "pattern_family",
    "shift",
    "acceleration",
    "rmse_pct",
    "t2s_err_pct",
    "side_lobe_pct",
    "phase_err_rad",
    "block",
    "complementarity",
    "phantom_seeds",
    "noise_seed",
    "pattern_seed",
];

fn metric_row(id: &str, r: &RetroRow, cfg: &ExperimentConfig) -> Vec<String> {
    let seeds: Vec<String> = cfg.phantom.seeds.iter().map(u64::to_string).collect();
    vec![
        id.to_string(),
        r.family.name().to_string(),
        r.shift.clone(),
        num(r.acceleration),
        num(r.rmse_pct),
        num(r.t2s_err_pct),
        String::new(),
        num(r.phase_err_rad),
        format!("{}x{}", r.block.0, r.block.1),
        opt_num(r.complementarity),
        seeds.join(";"),
        cfg.seeds.noise.to_string(),
        cfg.seeds.pattern.to_string(),
    ]
}

fn cmd_retro(g: &GlobalArgs, preset_name: Option<&str>) -> CliResult<()> {
    let cfg = load_config(g, preset_name)?;
    let id = cfg.id("retro");
    let (scene, rows) = run_retro(&cfg, g.scale)?;
    let dir = out_dir(g, &cfg);
    let mut t = Table::new(&METRIC_HEADER);
    let mut staged = Staged::default();
    for (i, r) in rows.iter().enumerate() {
        t.push(metric_row(&id, r, &cfg));
        if cfg.analysis.save_images {
            let name = r.family.name().to_ascii_lowercase();
            staged.container(dir.join(format!("{id}_{i}_{name}.ept")), &r.images)?;
        }
    }
    if cfg.analysis.save_images {
        staged.container(dir.join(format!("{id}_reference.ept")), &scene.subjects[0].reference)?;
    }
    staged.table(dir.join(format!("{id}.csv")), &t)?;
    staged.commit()?;
    print_table(&t)
}

fn cmd_sweep(g: &GlobalArgs, preset_name: Option<&str>) -> CliResult<()> {
    let cfg = load_config(g, preset_name)?;
    let id = cfg.id("shift-sweep");
    let rows = run_shift_sweep(&cfg, g.scale)?;
    let mut t = Table::new(&METRIC_HEADER);
    for r in &rows {
        t.push(metric_row(&id, r, &cfg));
    }
    let mut staged = Staged::default();
    staged.table(out_dir(g, &cfg).join(format!("{id}.csv")), &t)?;
    staged.commit()?;
    print_table(&t)
}

fn cmd_psf(g: &GlobalArgs, preset_name: Option<&str>) -> CliResult<()> {
    let cfg = load_config(g, preset_name)?;
    let id = cfg.id("psf");
    let rows = run_psf(&cfg, g.scale)?;
    let mut t = Table::new(&["experiment_id", "pattern_family", "layout", "sigma_hz", "corrected", "side_lobe_pct", "seeds"]);
    for r in &rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        t.push(vec![
            id.clone(),
            r.family.name().to_string(),
            r.layout.name().to_string(),
            num(r.sigma),
            r.corrected.to_string(),
            num(r.side_lobe_pct),
            seeds.join(";"),
        ]);
    }
    let mut staged = Staged::default();
    staged.table(out_dir(g, &cfg).join(format!("{id}.csv")), &t)?;
    staged.commit()?;
    print_table(&t)
}

fn cmd_b0(g: &GlobalArgs, preset_name: Option<&str>) -> CliResult<()> {
    let cfg = load_config(g, preset_name)?;
    let id = cfg.id("b0-update");
    let r = run_b0_experiment(&cfg, g.scale)?;
    let mut t = Table::new(&["experiment_id", "bump_err_init_hz", "bump_err_updated_hz", "rmse_fixed_pct", "rmse_updated_pct", "b0_seed"]);
    t.push(vec![
        id.clone(),
        num(r.bump_err_init),
        num(r.bump_err_updated),
        num(r.rmse_fixed),
        num(r.rmse_updated),
        cfg.seeds.b0.to_string(),
    ]);
    let mut staged = Staged::default();
    staged.table(out_dir(g, &cfg).join(format!("{id}.csv")), &t)?;
    staged.commit()?;
    print_table(&t)
}

fn cmd_variation(g: &GlobalArgs, preset_name: Option<&str>) -> CliResult<()> {
    let cfg = load_config(g, preset_name)?;
    let id = cfg.id("shot-variation");
    let r = run_variation_experiment(&cfg, g.scale)?;
    let mut t = Table::new(&["experiment_id", "quantity", "uncorrected", "corrected", "variation_seed"]);
    let mut row = |q: &str, a: f64, b: f64| {
        t.push(vec![id.clone(), q.to_string(), num(a), num(b), cfg.seeds.variation.to_string()]);
    };
    row("field_std_hz", r.std_before, r.std_after);
    row("rmse_pct", r.rmse_uncorrected, r.rmse_corrected);
    for k in 0..4 {
        row(&format!("rmse_pct_q{}", k + 1), r.quartiles_uncorrected[k], r.quartiles_corrected[k]);
    }
    let mut staged = Staged::default();
    staged.table(out_dir(g, &cfg).join(format!("{id}.csv")), &t)?;
    staged.commit()?;
    print_table(&t)
}
