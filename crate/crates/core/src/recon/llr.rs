//! Locally low-rank regularization: patchwise singular value thresholding
//! and the accelerated proximal gradient solver that uses it.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ReconConfig;
use crate::datamodel::{CoefficientMaps, Grid, C64};
use crate::error::{Error, Result};
use crate::operators::{norm, ForwardModel};

/// Soft-threshold the singular values of `m` (rows x k, row-major) by `tau`.
fn svt(m: &mut [C64], rows: usize, k: usize, tau: f64) {
    let mat = DMatrix::from_row_slice(rows, k, m);
    let gram = mat.adjoint() * &mat;
    let eig = SymmetricEigen::new(gram);
    let mut scale = vec![0.0; k];
    for (s, &ev) in scale.iter_mut().zip(eig.eigenvalues.iter()) {
        let sigma = ev.max(0.0).sqrt();
        *s = if sigma > tau { (sigma - tau) / sigma } else { 0.0 };
    }
    let v = &eig.eigenvectors;
    let mut weights = DMatrix::<C64>::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            weights[(a, b)] = (0..k).map(|j| v[(a, j)] * scale[j] * v[(b, j)].conj()).sum();
        }
    }
    let out = mat * weights;
    for r in 0..rows {
        for c in 0..k {
            m[r * k + c] = out[(r, c)];
        }
    }
}

/// Voxel indices of each patch after cyclically shifting the grid by `shift`.
fn patches(grid: &Grid, block: usize, shift: (usize, usize, usize)) -> Vec<Vec<usize>> {
    let dims = [grid.nx, grid.ny, grid.nz];
    let sh = [shift.0, shift.1, shift.2];
    let bl: Vec<usize> = dims.iter().map(|&n| if n == 1 { 1 } else { block }).collect();
    let counts: Vec<usize> = dims.iter().zip(&bl).map(|(&n, &b)| n.div_ceil(b)).collect();
    let ranges = |axis: usize, p: usize| -> Vec<usize> {
        let n = dims[axis];
        let lo = p * bl[axis];
        let hi = ((p + 1) * bl[axis]).min(n);
        (lo..hi).map(|q| (q + n - sh[axis] % n) % n).collect()
    };
    let mut out = Vec::with_capacity(counts.iter().product());
    for pz in 0..counts[2] {
        let zs = ranges(2, pz);
        for py in 0..counts[1] {
            let ys = ranges(1, py);
            for px in 0..counts[0] {
                let xs = ranges(0, px);
                let mut idx = Vec::with_capacity(xs.len() * ys.len() * zs.len());
                for &z in &zs {
                    for &y in &ys {
                        for &x in &xs {
                            idx.push(grid.index(x, y, z));
                        }
                    }
                }
                out.push(idx);
            }
        }
    }
    out
}

fn check_block(grid: &Grid, block: usize) -> Result<()> {
    if block < 2 {
        return Err(Error::invalid("llr block must be at least 2"));
    }
    let too_big = [grid.nx, grid.ny, grid.nz].iter().any(|&n| n > 1 && block > n);
    if too_big {
        return Err(Error::invalid(format!("llr block {block} exceeds the grid")));
    }
    Ok(())
}

/// Patchwise singular value thresholding of flat coefficients (`k` maps).
pub fn llr_prox_flat(
    c: &mut [C64],
    grid: &Grid,
    k: usize,
    block: usize,
    tau: f64,
    shift: (usize, usize, usize),
) -> Result<()> {
    check_block(grid, block)?;
    if tau == 0.0 {
        return Ok(());
    }
    let n = grid.len();
    let src: &[C64] = c;
    let results: Vec<(Vec<usize>, Vec<C64>)> = patches(grid, block, shift)
        .into_par_iter()
        .map(|idx| {
            let mut m = vec![C64::new(0.0, 0.0); idx.len() * k];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..k {
                    m[r * k + j] = src[j * n + i];
                }
            }
            svt(&mut m, idx.len(), k, tau);
            (idx, m)
        })
        .collect();
    for (idx, m) in results {
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..k {
                c[j * n + i] = m[r * k + j];
            }
        }
    }
    Ok(())
}

/// Locally low-rank proximal step with a random cyclic patch shift.
pub fn llr_prox<R: Rng>(c: &CoefficientMaps, block: usize, tau: f64, rng: &mut R) -> Result<CoefficientMaps> {
    let g = c.grid;
    let shift = (rng.random_range(0..g.nx), rng.random_range(0..g.ny), rng.random_range(0..g.nz));
    let mut flat = c.maps.concat();
    llr_prox_flat(&mut flat, &g, c.k(), block, tau, shift)?;
    Ok(CoefficientMaps { grid: g, maps: flat.chunks(g.len()).map(|m| m.to_vec()).collect() })
}

/// Largest eigenvalue of the model's normal operator.
pub fn power_iteration(model: &ForwardModel, iters: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> =
        (0..model.n_coef()).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let nv = norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = model.normal(&v);
        lambda = norm(&w);
        v = w;
    }
    lambda
}

/// FISTA on `0.5 ||A c - y||^2 + lambda * sum_patches ||c_patch||_*`, given
/// `b = A^H y`.
pub fn fista_llr(model: &ForwardModel, b: &[C64], init: Option<&[C64]>, cfg: &ReconConfig) -> Result<Vec<C64>> {
    let grid = model.grid();
    let k = model.basis().k;
    check_block(&grid, cfg.llr_block)?;
    let l = power_iteration(model, 30, cfg.seed) * 1.01;
    if l == 0.0 {
        return Ok(vec![C64::new(0.0, 0.0); b.len()]);
    }
    let step = 1.0 / l;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11a);
    let mut x = init.map_or_else(|| vec![C64::new(0.0, 0.0); b.len()], |v| v.to_vec());
    let mut z = x.clone();
    let mut t = 1.0f64;
    for it in 0..cfg.max_iter {
        let g = model.normal(&z);
        let mut next: Vec<C64> = z.iter().zip(g.iter().zip(b)).map(|(z, (g, b))| z - (g - b) * step).collect();
        let shift = (rng.random_range(0..grid.nx), rng.random_range(0..grid.ny), rng.random_range(0..grid.nz));
        llr_prox_flat(&mut next, &grid, k, cfg.llr_block, cfg.lambda * step, shift)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite iterate at iteration {it}")));
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        let mut change = 0.0;
        for i in 0..x.len() {
            let d = next[i] - x[i];
            change += d.norm_sqr();
            z[i] = next[i] + d * mom;
        }
        x = next;
        t = t_next;
        let xn = norm(&x);
        if xn > 0.0 && change.sqrt() <= cfg.tol * xn {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn frob(c: &[C64]) -> f64 {
        norm(c)
    }

    fn random(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
    }

    #[test]
    fn zero_threshold_is_identity() {
        let g = Grid::new(6, 5, 4).unwrap();
        let c = random(3 * g.len(), 1);
        let mut d = c.clone();
        llr_prox_flat(&mut d, &g, 3, 2, 0.0, (1, 2, 3)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn rank_one_patch_shrinks_its_singular_value() {
        // One 4x4 patch in 2D holding u v^T; sigma = |u| |v|.
        let g = Grid::new(4, 4, 1).unwrap();
        let k = 3;
        let u: Vec<f64> = (0..16).map(|i| 1.0 + i as f64 / 4.0).collect();
        let v = [C64::new(0.6, 0.0), C64::new(0.0, 0.8), C64::new(0.0, 0.0)];
        let mut c = vec![C64::new(0.0, 0.0); k * 16];
        for j in 0..k {
            for i in 0..16 {
                c[j * 16 + i] = v[j] * u[i];
            }
        }
        let sigma = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tau = 0.3 * sigma;
        let mut d = c.clone();
        llr_prox_flat(&mut d, &g, k, 4, tau, (0, 0, 0)).unwrap();
        for (a, b) in d.iter().zip(&c) {
            assert!((a - b * ((sigma - tau) / sigma)).norm() < 1e-10);
        }
        let mut e = c.clone();
        llr_prox_flat(&mut e, &g, k, 4, 2.0 * sigma, (0, 0, 0)).unwrap();
        assert!(frob(&e) < 1e-12);
    }

    #[test]
    fn matches_direct_svd_thresholding() {
        let rows = 27;
        let k = 4;
        let m = random(rows * k, 5);
        let mut fast = m.clone();
        svt(&mut fast, rows, k, 0.4);
        let mat = DMatrix::from_row_slice(rows, k, &m);
        let svd = mat.svd(true, true);
        let mut s = svd.singular_values.clone();
        s.iter_mut().for_each(|x| *x = (*x - 0.4).max(0.0));
        let rebuilt = svd.u.unwrap() * DMatrix::from_diagonal(&s.map(|x| C64::new(x, 0.0))) * svd.v_t.unwrap();
        for r in 0..rows {
            for c in 0..k {
                assert!((rebuilt[(r, c)] - fast[r * k + c]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_bad_blocks() {
        let g = Grid::new(6, 5, 1).unwrap();
        let mut c = random(2 * g.len(), 1);
        assert!(llr_prox_flat(&mut c, &g, 2, 1, 0.1, (0, 0, 0)).is_err());
        assert!(llr_prox_flat(&mut c, &g, 2, 7, 0.1, (0, 0, 0)).is_err());
        assert!(llr_prox_flat(&mut c, &g, 2, 6, 0.1, (0, 0, 0)).is_err());
        assert!(llr_prox_flat(&mut c, &g, 2, 5, 0.1, (0, 0, 0)).is_ok());
    }

    #[test]
    fn patches_partition_the_grid() {
        let g = Grid::new(7, 5, 3).unwrap();
        let mut seen = vec![0; g.len()];
        for p in patches(&g, 2, (3, 1, 2)) {
            for i in p {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn never_increases_frobenius_norm(seed in 0u64..500, tau in 0.0f64..2.0, block in 2usize..5) {
            let g = Grid::new(6, 5, 4).unwrap();
            let c = random(4 * g.len(), seed);
            let mut d = c.clone();
            llr_prox_flat(&mut d, &g, 4, block, tau, ((seed % 6) as usize, 1, 2)).unwrap();
            prop_assert!(frob(&d) <= frob(&c) + 1e-12);
        }
    }
}
