use std::sync::Arc;

use eptikit_core::analysis::rmse_percent;
use eptikit_core::encoding::{caipi_3d_pattern, random_3d_pattern, tv_caipi_3d_pattern};
use eptikit_core::operators::{inner, ForwardModel};
use eptikit_core::phantom::{make_b0, make_coils, make_phantom};
use eptikit_core::recon::{subspace_solve, ReconConfig, RegKind};
use eptikit_core::signal::{build_dictionary, extract_basis, DictionaryRanges};
use eptikit_core::simulate::{reference_coefficients, simulate_kt, SimOptions};
use eptikit_core::{read_container, write_container, B0Map, CoefficientMaps, EchoTrain, Grid, Resolution, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_basis(train: &EchoTrain, k: usize) -> Arc<eptikit_core::SubspaceBasis> {
    let ranges = DictionaryRanges { steps: (16, 16, 1), scale: (1.0, 1.0), ..DictionaryRanges::standard() };
    Arc::new(extract_basis(&build_dictionary(&ranges, train).unwrap(), k).unwrap())
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn adjoint_identity_holds_for_any_block_pattern(
        family in 0usize..3, by in 1usize..5, bz in 1usize..4, sy in 0usize..4, sz in 0usize..3,
        coils in 1usize..5, k in 1usize..4, with_b0 in any::<bool>(), seed in 0u64..1000,
    ) {
        let (ny, nz, t) = (2 * by, 2 * bz, 6);
        let grid = Grid::new(3, ny, nz).unwrap();
        let train = Arc::new(EchoTrain::gradient_echo(t, 5.0, 2.0).unwrap());
        let pattern = Arc::new(match family {
            0 => caipi_3d_pattern(ny, nz, by, bz, t).unwrap(),
            1 => tv_caipi_3d_pattern(ny, nz, by, bz, t, sy % by, sz % bz).unwrap(),
            _ => random_3d_pattern(ny, nz, by, bz, t, seed).unwrap(),
        });
        let mut model =
            ForwardModel::new(grid, Arc::new(make_coils(grid, coils).unwrap()), pattern, train.clone(), small_basis(&train, k))
                .unwrap();
        if with_b0 {
            model.set_b0(&make_b0(grid, 15.0, 25.0, seed).unwrap()).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_vec(&mut rng, model.n_coef());
        let ac = model.forward_hybrid(&c);
        let mut y = ac.clone();
        y.samples = random_vec(&mut rng, y.samples.len());
        let lhs = inner(&ac.samples, &y.samples);
        let rhs = inner(&c, &model.adjoint_hybrid(&y));
        prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(rhs.norm()));
        let c2 = random_vec(&mut rng, model.n_coef());
        let lhs = inner(&c2, &model.normal(&c));
        let rhs = inner(&model.forward_hybrid(&c2).samples, &ac.samples);
        prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(rhs.norm()));
    }
}

#[test]
fn mildly_undersampled_recon_matches_the_fully_sampled_reference() {
    let grid = Grid::new(4, 16, 8).unwrap();
    let train = Arc::new(EchoTrain::gradient_echo(12, 9.1, 3.0).unwrap());
    let basis = small_basis(&train, 3);
    let coils = Arc::new(make_coils(grid, 8).unwrap());
    let phantom = make_phantom(grid, "ellipses", 4).unwrap();
    let b0 = B0Map { grid, hz: phantom.b0.clone(), resolution: Resolution::High };
    let opts = SimOptions { noise_std: 0.0, seed: 1, variation: None };
    let reference = reference_coefficients(&phantom, &coils, &train, &basis, Some(&b0), &opts).unwrap().to_images(&basis);
    let pattern = Arc::new(tv_caipi_3d_pattern(16, 8, 2, 1, train.len(), 1, 0).unwrap());
    let y = simulate_kt(&phantom, coils.clone(), pattern.clone(), train.clone(), basis.clone(), &opts).unwrap();
    let model = ForwardModel::new(grid, coils, pattern, train, basis.clone()).unwrap().with_b0(&b0).unwrap();
    let cfg = ReconConfig { max_iter: 200, tol: 1e-10, reg_kind: RegKind::None, ..ReconConfig::default() };
    let images = subspace_solve(&model, &y, &cfg).unwrap().to_images(&basis);
    let err = rmse_percent(&images, &reference, &phantom.support()).unwrap();
    assert!(err < 0.1, "{err}%");
}

#[test]
fn coefficient_containers_round_trip_at_single_precision() {
    let grid = Grid::new(3, 4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = CoefficientMaps { grid, maps: (0..2).map(|_| random_vec(&mut rng, grid.len())).collect() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ept");
    write_container(&c, &path).unwrap();
    let back: CoefficientMaps = read_container(&path).unwrap();
    assert_eq!(back.grid, grid);
    for (a, b) in c.maps.iter().flatten().zip(back.maps.iter().flatten()) {
        assert!((a - b).norm() <= 1e-7 * a.norm().max(1e-3));
    }
}
