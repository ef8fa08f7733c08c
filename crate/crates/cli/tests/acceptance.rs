//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `EPTIKIT_ACCEPTANCE=4,9` restricts the run to the listed criteria.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use eptikit::config::{preset, ExperimentConfig, PatternConfig, Scale};
use eptikit::experiments::{
    build_basis, build_phantom, psf_setups, run_b0_experiment, run_psf, run_retro, run_shift_sweep,
    run_variation_experiment, sweep_patterns, PsfRow, RetroRow,
};
use eptikit_core::encoding::{acceleration_of, epti_2d_pattern, full_pattern};
use eptikit_core::operators::{inner, norm, ForwardModel};
use eptikit_core::phantom::{make_b0, make_coils, make_shot_variation};
use eptikit_core::recon::{solve_hybrid, ReconConfig, RegKind};
use eptikit_core::signal::{approximation_error, build_dictionary, extract_basis, DictionaryRanges};
use eptikit_core::{EchoTrain, Grid, KtData, Layout, PatternFamily, SamplingPattern, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Check = fn() -> Verdict;

const CRITERIA: [(usize, &str, Option<u64>, Check); 10] = [
    (1, "basis accuracy", Some(60), basis_accuracy),
    (2, "operator correctness", None, operator_correctness),
    (3, "acceleration arithmetic", None, acceleration_arithmetic),
    (4, "encoding ordering", Some(30 * 60), encoding_ordering),
    (5, "shift sweep", Some(30 * 60), shift_sweep),
    (6, "B0 update", Some(10 * 60), b0_update),
    (7, "shot-variation correction", Some(10 * 60), shot_variation),
    (8, "PSF", Some(10 * 60), psf),
    (9, "T2* fidelity", Some(20 * 60), t2s_fidelity),
    (10, "determinism", None, determinism),
];

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("EPTIKIT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, limit, check) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= Duration::from_secs(l));
        let pass = v.pass && in_time;
        let budget = limit.map(|l| format!(" / {l} s")).unwrap_or_default();
        println!(
            "criterion {id:>2} {name}: {} ({}; {:.1} s{budget})",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn basis_accuracy() -> Verdict {
    let train = EchoTrain::gese_2d_preset();
    let dict = build_dictionary(&DictionaryRanges::standard(), &train).unwrap();
    let basis = extract_basis(&dict, 8).unwrap();
    let err = approximation_error(&dict, &basis).unwrap();
    verdict(err < 0.002, format!("k = 8 error {:.4}% over {} atoms", 100.0 * err, dict.n_atoms()))
}

/// One forward model to check: everything an experiment hands the solver.
struct Setup {
    label: String,
    model: ForwardModel,
}

/// The preset grid with a two-sample readout: kx is fully sampled in every
/// configuration, so only the phase-encoding plane matters to the checks.
fn short_readout(cfg: &ExperimentConfig, layout: Layout) -> Grid {
    let g = cfg.grid(Scale::Desk, layout).unwrap();
    Grid::new(2, g.ny, g.nz).unwrap()
}

fn retro_setups(name: &str, out: &mut Vec<Setup>) {
    let cfg = preset(name).unwrap();
    let grid = short_readout(&cfg, Layout::ThreeD);
    let train = Arc::new(cfg.train(Scale::Desk, Layout::ThreeD).unwrap());
    let basis = Arc::new(build_basis(&cfg, &train).unwrap());
    let coils = Arc::new(make_coils(grid, cfg.coils.n_coils).unwrap());
    let b0 = make_b0(grid, 20.0, 30.0, 1).unwrap();
    let patterns = if name == "shift-sweep" { sweep_patterns(&cfg) } else { cfg.patterns.clone() };
    for p in &patterns {
        let pattern = Arc::new(p.build(grid.ny, grid.nz, train.len(), cfg.seeds.pattern).unwrap());
        let model = || ForwardModel::new(grid, coils.clone(), pattern.clone(), train.clone(), basis.clone()).unwrap();
        let label = format!("{name}/{}{}", p.family, p.shift_label());
        out.push(Setup { label: format!("{label}/b0"), model: model().with_b0(&b0).unwrap() });
        out.push(Setup { label, model: model() });
    }
}

fn all_setups() -> Vec<Setup> {
    let mut out = Vec::new();
    for name in ["encodings", "two-rates", "shift-sweep"] {
        retro_setups(name, &mut out);
    }
    for name in ["b0-update", "shot-variation"] {
        let cfg = preset(name).unwrap();
        let grid = short_readout(&cfg, Layout::TwoD);
        let train = Arc::new(cfg.train(Scale::Desk, Layout::TwoD).unwrap());
        let basis = Arc::new(build_basis(&cfg, &train).unwrap());
        let coils = Arc::new(make_coils(grid, cfg.coils.n_coils).unwrap());
        let pattern = Arc::new(epti_2d_pattern(grid.ny, train.len(), 4, 24).unwrap());
        let variation = make_shot_variation(pattern.n_shots, 1.5, cfg.seeds.variation).unwrap();
        let b0 = make_b0(grid, 20.0, 30.0, cfg.seeds.b0).unwrap();
        let model = || {
            ForwardModel::new(grid, coils.clone(), pattern.clone(), train.clone(), basis.clone())
                .unwrap()
                .with_b0(&b0)
                .unwrap()
        };
        out.push(Setup { label: format!("{name}/b0+variation"), model: model().with_variation(&variation).unwrap() });
        out.push(Setup { label: format!("{name}/b0"), model: model() });
    }
    let cfg = preset("psf").unwrap();
    for setup in psf_setups(&cfg, Scale::Desk).unwrap() {
        let p = &setup.pattern;
        let grid = Grid::new(1, p.ny, p.nz).unwrap();
        let coils = Arc::new(make_coils(grid, setup.n_coils).unwrap());
        let variation = make_shot_variation(p.n_shots, 1.5, 3).unwrap();
        let model = ForwardModel::new(grid, coils, p.clone(), setup.train.clone(), setup.basis.clone())
            .unwrap()
            .with_variation(&variation)
            .unwrap();
        out.push(Setup { label: format!("psf/{}", p.family.name()), model });
    }
    out
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm())
}

/// Largest relative mismatch of `<A c, y> = <c, A^H y>` and of the normal
/// operator against `A^H A` over 10 draws.
fn dot_test(model: &ForwardModel, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let c = random_vec(rng, model.n_coef());
        let c2 = random_vec(rng, model.n_coef());
        let ac = model.forward_hybrid(&c);
        let mut y = ac.clone();
        y.samples = random_vec(rng, y.samples.len());
        worst = worst.max(rel(inner(&ac.samples, &y.samples), inner(&c, &model.adjoint_hybrid(&y))));
        let ac2 = model.forward_hybrid(&c2);
        worst = worst.max(rel(inner(&c2, &model.normal(&c)), inner(&ac2.samples, &ac.samples)));
    }
    worst
}

/// Relative error of recovering random coefficients on the object support
/// from noiseless fully sampled data.
fn round_trip(cfg: &ExperimentConfig, layout: Layout, rng: &mut ChaCha8Rng) -> f64 {
    let grid = cfg.grid(Scale::Desk, layout).unwrap();
    let train = Arc::new(cfg.train(Scale::Desk, layout).unwrap());
    let basis = Arc::new(build_basis(cfg, &train).unwrap());
    let coils = Arc::new(make_coils(grid, cfg.coils.n_coils).unwrap());
    let pattern = Arc::new(full_pattern(layout, grid.ny, grid.nz, train.len()).unwrap());
    let b0 = make_b0(grid, 20.0, 30.0, 1).unwrap();
    let model = ForwardModel::new(grid, coils, pattern, train, basis).unwrap().with_b0(&b0).unwrap();
    let support = build_phantom(cfg, grid, 1).unwrap().support();
    let mut c = random_vec(rng, model.n_coef());
    for (i, v) in c.iter_mut().enumerate() {
        if !support[i % grid.len()] {
            *v = C64::new(0.0, 0.0);
        }
    }
    let y: KtData = model.forward_hybrid(&c);
    let recon = ReconConfig { max_iter: 200, tol: 1e-13, reg_kind: RegKind::None, ..ReconConfig::default() };
    let got = solve_hybrid(&model, &y, &recon, None).unwrap();
    let diff: Vec<C64> = got.iter().zip(&c).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&c)
}

fn operator_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let setups = all_setups();
    let (mut worst, mut worst_label) = (0.0f64, String::new());
    for s in &setups {
        let e = dot_test(&s.model, &mut rng);
        if e > worst {
            worst = e;
            worst_label = s.label.clone();
        }
    }
    let mut trip = 0.0f64;
    for (name, layout) in [("encodings", Layout::ThreeD), ("two-rates", Layout::ThreeD), ("b0-update", Layout::TwoD)] {
        trip = trip.max(round_trip(&preset(name).unwrap(), layout, &mut rng));
    }
    verdict(
        worst < 1e-10 && trip < 1e-6,
        format!("{} models, worst dot-test {worst:.1e} ({worst_label}), round trip {trip:.1e}", setups.len()),
    )
}

fn acceleration_arithmetic() -> Verdict {
    let rate = |family: &str, block: (usize, usize), shift: Option<(usize, usize)>| -> f64 {
        let p = PatternConfig { shift, ..PatternConfig::new(family, block) };
        let pattern: SamplingPattern = p.build(96, 72, 50, 7).unwrap();
        acceleration_of(&pattern)
    };
    let mut got = Vec::new();
    let mut pass = true;
    for family in ["caipi", "tv-caipi", "random"] {
        let shift = (family == "tv-caipi").then_some((0, 2));
        let (a, b) = (rate(family, (12, 6), shift), rate(family, (8, 4), shift));
        pass &= a == 72.0 && b == 32.0;
        got.push(format!("{family} {a}/{b}"));
    }
    verdict(pass, format!("12x6 / 8x4: {}", got.join(", ")))
}

fn find<'a>(rows: &'a [RetroRow], family: PatternFamily) -> &'a RetroRow {
    rows.iter().find(|r| r.family == family).expect("pattern present")
}

/// `a < b` with at least 2% relative margin.
fn beats(a: f64, b: f64) -> bool {
    a <= 0.98 * b
}

fn encoding_ordering() -> Verdict {
    let (_, rows) = run_retro(&preset("encodings").unwrap(), Scale::Desk).unwrap();
    let r = |f| find(&rows, f).rmse_pct;
    let (caipi, tv, random) = (r(PatternFamily::Caipi), r(PatternFamily::TvCaipi), r(PatternFamily::Random));
    let (vtv, vrand) = (r(PatternFamily::VdsTvCaipi), r(PatternFamily::VdsRandom));
    verdict(
        beats(tv, random) && beats(random, caipi) && beats(vtv, vrand),
        format!(
            "RMSE % over 3 seeds: TV-CAIPI {tv:.2} < random {random:.2} < CAIPI {caipi:.2}; VDS TV-CAIPI {vtv:.2} < VDS random {vrand:.2}"
        ),
    )
}

fn shift_sweep() -> Verdict {
    let rows = run_shift_sweep(&preset("shift-sweep").unwrap(), Scale::Desk).unwrap();
    let zero = rows.iter().find(|r| r.shift == "0-0").expect("0-0 shift present");
    let max = rows.iter().map(|r| r.rmse_pct).fold(f64::MIN, f64::max);
    let best = rows.iter().min_by(|a, b| a.rmse_pct.total_cmp(&b.rmse_pct)).unwrap();
    let comp = best.complementarity.unwrap_or(f64::NAN);
    verdict(
        zero.rmse_pct == max && comp == 1.0,
        format!(
            "{} shifts, 0-0 RMSE {:.2}% (max {max:.2}%), best {} at {:.2}% with complementarity {comp}",
            rows.len(),
            zero.rmse_pct,
            best.shift,
            best.rmse_pct
        ),
    )
}

fn b0_update() -> Verdict {
    let r = run_b0_experiment(&preset("b0-update").unwrap(), Scale::Desk).unwrap();
    let gain = r.bump_err_init / r.bump_err_updated;
    verdict(
        gain >= 5.0 && r.rmse_updated < r.rmse_fixed,
        format!(
            "bump B0 RMSE {:.3} -> {:.3} Hz ({gain:.0}x), image RMSE {:.3}% -> {:.3}%",
            r.bump_err_init, r.bump_err_updated, r.rmse_fixed, r.rmse_updated
        ),
    )
}

fn shot_variation() -> Verdict {
    let cfg = preset("shot-variation").unwrap();
    let grid = cfg.grid(Scale::Desk, Layout::TwoD).unwrap();
    let train = cfg.train(Scale::Desk, Layout::TwoD).unwrap();
    let shots = epti_2d_pattern(grid.ny, train.len(), 4, 24).unwrap().n_shots;
    let r = run_variation_experiment(&cfg, Scale::Desk).unwrap();
    let quartiles_ok = r.quartiles_corrected.iter().zip(&r.quartiles_uncorrected).all(|(c, u)| c < u);
    let fmt = |q: &[f64; 4]| q.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("/");
    verdict(
        shots == 9 && cfg.analysis.variation_sigma_hz == 1.5 && r.std_after < 0.5 * r.std_before && quartiles_ok,
        format!(
            "{shots} shots, field std {:.3} -> {:.3} Hz, quartile RMSE % {} -> {}",
            r.std_before,
            r.std_after,
            fmt(&r.quartiles_uncorrected),
            fmt(&r.quartiles_corrected)
        ),
    )
}

fn psf() -> Verdict {
    let rows = run_psf(&preset("psf").unwrap(), Scale::Desk).unwrap();
    let series = |layout: Layout, corrected: bool| -> Vec<&PsfRow> {
        let mut s: Vec<&PsfRow> = rows.iter().filter(|r| r.layout == layout && r.corrected == corrected).collect();
        s.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
        s
    };
    let at = |s: &[&PsfRow], sigma: f64| s.iter().find(|r| r.sigma == sigma).expect("sigma present").side_lobe_pct;
    let (u2, c2, u3) = (series(Layout::TwoD, false), series(Layout::TwoD, true), series(Layout::ThreeD, false));
    let monotone = [&u2, &c2, &u3].iter().all(|s| s.windows(2).all(|w| w[1].side_lobe_pct >= w[0].side_lobe_pct));
    let (a, b, c) = (at(&u2, 1.5), at(&c2, 1.5), at(&u3, 1.5));
    verdict(
        b < a && c < 0.5 * a && monotone,
        format!("side lobe at 1.5 Hz: 2D {a:.2}% -> corrected {b:.2}%, 3D {c:.2}%; nondecreasing in sigma: {monotone}"),
    )
}

fn t2s_fidelity() -> Verdict {
    let (_, rows) = run_retro(&preset("two-rates").unwrap(), Scale::Desk).unwrap();
    let by_block = |b: (usize, usize)| rows.iter().find(|r| r.block == b).expect("rate present");
    let (r72, r32) = (by_block((12, 6)), by_block((8, 4)));
    verdict(
        r32.t2s_err_pct < 5.0 && r72.t2s_err_pct >= r32.t2s_err_pct,
        format!(
            "worst-region median T2* error: 32x {:.2}%, 72x {:.2}% (acceleration {:.2}x)",
            r32.t2s_err_pct, r72.t2s_err_pct, r72.acceleration
        ),
    )
}

const TINY_3D: &str = r#"{
  "experiment_id": "tiny3d",
  "grid": {"nx": 4, "ny": 48, "nz": 8},
  "phantom": {"seeds": [1, 2], "noise_std": 0.002, "b0_smooth_hz": 10, "b0_bump_hz": 15},
  "echo_train": {"kind": "ge", "n_echoes": 8, "first_te_ms": 9.1, "esp_ms": 3.0},
  "basis": {"k": 3, "steps": [12, 12, 1], "scale": [1.0, 1.0]},
  "patterns": [
    {"family": "caipi", "block": [4, 2]},
    {"family": "tv-caipi", "block": [4, 2], "shift": [2, 0]},
    {"family": "random", "block": [4, 2]},
    {"family": "vds-random", "block": [4, 2], "r_center": 4, "reg": "llr", "lambda": 0.001}
  ],
  "recon": {"b0_update": false, "outer_loops": 1, "max_iter": 15, "llr_block": 4},
  "analysis": {"sweep_block": [4, 2], "min_region_voxels": 4, "psf_sigmas_hz": [0, 1], "psf_seeds": 2, "psf_loops": 1}
}"#;

const TINY_2D: &str = r#"{
  "experiment_id": "tiny2d",
  "grid": {"nx": 16, "ny": 48, "nz": 1},
  "phantom": {"b0_smooth_hz": 10, "b0_bump_hz": 20},
  "basis": {"k": 4, "steps": [10, 10, 2]},
  "recon": {"max_iter": 10, "outer_loops": 2, "b0_iters": 5}
}"#;

fn run_twice(dir: &Path, args: &[&str], csv: &str) -> Result<bool, String> {
    let mut outputs = Vec::new();
    for out in ["run1", "run2"] {
        let target = dir.join(out);
        let mut full: Vec<&str> = args.to_vec();
        let t = target.to_str().unwrap();
        full.extend(["--out", t]);
        let o = Command::new(env!("CARGO_BIN_EXE_eptikit"))
            .current_dir(dir)
            .args(&full)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr).trim()));
        }
        outputs.push(fs::read(target.join(csv)).map_err(|e| format!("{}: {e}", args[0]))?);
        fs::remove_dir_all(&target).ok();
    }
    Ok(outputs[0] == outputs[1])
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("t3.json"), TINY_3D).unwrap();
    fs::write(d.join("t2.json"), TINY_2D).unwrap();
    let sim = Command::new(env!("CARGO_BIN_EXE_eptikit"))
        .current_dir(d)
        .args(["simulate", "--config", "t3.json", "--out", "sim"])
        .output()
        .unwrap();
    if !sim.status.success() {
        return verdict(false, format!("simulate failed: {}", String::from_utf8_lossy(&sim.stderr).trim()));
    }
    let cases: [(&[&str], &str); 10] = [
        (&["phantom", "--config", "t3.json"], "regions.csv"),
        (&["basis", "--config", "t3.json"], "basis.csv"),
        (&["pattern", "--family", "random", "--block", "12x6", "--ny", "96", "--nz", "36"], "pattern.csv"),
        (&["simulate", "--config", "t3.json"], "simulate.csv"),
        (&["recon", "--config", "t3.json", "--data", "sim/kt_1.ept", "--coils", "sim/coils.ept", "--basis", "sim/basis.ept"], "recon.csv"),
        (&["experiment-retro", "--config", "t3.json"], "tiny3d.csv"),
        (&["shift-sweep", "--config", "t3.json"], "tiny3d.csv"),
        (&["psf", "--config", "t3.json"], "tiny3d.csv"),
        (&["b0-update", "--config", "t2.json"], "tiny2d.csv"),
        (&["shot-variation", "--config", "t2.json"], "tiny2d.csv"),
    ];
    let mut differing = Vec::new();
    for (args, csv) in cases {
        match run_twice(d, args, csv) {
            Ok(true) => {}
            Ok(false) => differing.push(args[0].to_string()),
            Err(e) => return verdict(false, e),
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} commands byte-identical across two runs", cases.len())
        } else {
            format!("outputs differ: {}", differing.join(", "))
        },
    )
}

