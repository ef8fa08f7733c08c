//! k-t sampling patterns for 2D EPTI and block-wise 3D EPTI.
//!
//! 3D shots each own one ky-kz block and acquire one block-local position
//! per echo. Echoes are grouped into echo-sections of `bz` echoes; within a
//! section, echo `j` samples block-local `(ky, kz) = (j mod by, j)`.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Layout, PatternFamily, SamplingPattern};
use crate::error::{Error, Result};

/// Time between sweeps of the same ky segment, `esp * r_seg / r_pe`.
pub fn revisit_period(esp: f64, r_seg: usize, r_pe: usize) -> f64 {
    esp * r_seg as f64 / r_pe as f64
}

/// 2D EPTI ky-t pattern. Shot `m` owns the ky segment
/// `[m * r_seg, (m + 1) * r_seg)` and sweeps it in line-sections of
/// `r_seg / r_pe` echoes with PE step `r_pe`; successive line-sections are
/// offset by one line so every ky of the segment is visited.
pub fn epti_2d_pattern(n_pe: usize, n_echo: usize, r_pe: usize, r_seg: usize) -> Result<SamplingPattern> {
    if n_pe == 0 || n_echo == 0 || r_pe == 0 || r_seg == 0 {
        return Err(Error::invalid("2D pattern sizes must be positive"));
    }
    if r_seg % r_pe != 0 {
        return Err(Error::invalid(format!("r_seg ({r_seg}) not divisible by r_pe ({r_pe})")));
    }
    if n_pe % r_seg != 0 {
        return Err(Error::invalid(format!("n_pe ({n_pe}) not divisible by r_seg ({r_seg})")));
    }
    let lines_per_section = r_seg / r_pe;
    let n_shots = n_pe / r_seg;
    let mut entries = Vec::with_capacity(n_shots * n_echo);
    for m in 0..n_shots {
        for e in 0..n_echo {
            let section = e / lines_per_section;
            let ky = m * r_seg + (e % lines_per_section) * r_pe + section % r_pe;
            entries.push((ky as u32, 0));
        }
    }
    let mut p = SamplingPattern::from_entries(
        Layout::TwoD,
        PatternFamily::Epti2d,
        n_pe,
        1,
        (r_seg, 1),
        n_echo,
        entries,
    )?;
    p.r_pe = r_pe;
    Ok(p)
}

fn check_blocks(ny: usize, nz: usize, by: usize, bz: usize, n_echo: usize) -> Result<()> {
    if ny == 0 || nz == 0 || by == 0 || bz == 0 || n_echo == 0 {
        return Err(Error::invalid("3D pattern sizes must be positive"));
    }
    if ny % by != 0 || nz % bz != 0 {
        return Err(Error::invalid(format!(
            "matrix {ny}x{nz} is not divisible by block {by}x{bz}"
        )));
    }
    Ok(())
}

/// Block-local CAIPI position at echo `e`, with an extra shift applied to
/// even echo-sections (1-based numbering).
fn caipi_local(e: usize, by: usize, bz: usize, shift: (usize, usize)) -> (usize, usize) {
    let j = e % bz;
    let section = e / bz;
    let (ly, lz) = (j % by, j);
    if section % 2 == 1 {
        ((ly + shift.0) % by, (lz + shift.1) % bz)
    } else {
        (ly, lz)
    }
}

fn blockwise(
    ny: usize,
    nz: usize,
    by: usize,
    bz: usize,
    n_echo: usize,
    mut local: impl FnMut(usize, usize) -> (usize, usize),
) -> Vec<(u32, u32)> {
    let (gy, gz) = (ny / by, nz / bz);
    let mut entries = Vec::with_capacity(gy * gz * n_echo);
    for iz in 0..gz {
        for iy in 0..gy {
            let shot = iy + gy * iz;
            for e in 0..n_echo {
                let (ly, lz) = local(shot, e);
                entries.push(((iy * by + ly) as u32, (iz * bz + lz) as u32));
            }
        }
    }
    entries
}

pub fn caipi_3d_pattern(ny: usize, nz: usize, by: usize, bz: usize, n_echo: usize) -> Result<SamplingPattern> {
    check_blocks(ny, nz, by, bz, n_echo)?;
    let entries = blockwise(ny, nz, by, bz, n_echo, |_, e| caipi_local(e, by, bz, (0, 0)));
    SamplingPattern::from_entries(Layout::ThreeD, PatternFamily::Caipi, ny, nz, (by, bz), n_echo, entries)
}

/// Temporal-variant CAIPI. A zero shift yields the plain CAIPI pattern.
pub fn tv_caipi_3d_pattern(
    ny: usize,
    nz: usize,
    by: usize,
    bz: usize,
    n_echo: usize,
    shift_y: usize,
    shift_z: usize,
) -> Result<SamplingPattern> {
    check_blocks(ny, nz, by, bz, n_echo)?;
    if shift_y >= by || shift_z >= bz {
        return Err(Error::invalid(format!(
            "shift ({shift_y}, {shift_z}) outside block {by}x{bz}"
        )));
    }
    if (shift_y, shift_z) == (0, 0) {
        return caipi_3d_pattern(ny, nz, by, bz, n_echo);
    }
    let shift = (shift_y, shift_z);
    let entries = blockwise(ny, nz, by, bz, n_echo, |_, e| caipi_local(e, by, bz, shift));
    let mut p = SamplingPattern::from_entries(
        Layout::ThreeD,
        PatternFamily::TvCaipi,
        ny,
        nz,
        (by, bz),
        n_echo,
        entries,
    )?;
    p.shift = shift;
    Ok(p)
}

pub fn random_3d_pattern(
    ny: usize,
    nz: usize,
    by: usize,
    bz: usize,
    n_echo: usize,
    seed: u64,
) -> Result<SamplingPattern> {
    check_blocks(ny, nz, by, bz, n_echo)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = blockwise(ny, nz, by, bz, n_echo, |_, _| {
        (rng.random_range(0..by), rng.random_range(0..bz))
    });
    let mut p = SamplingPattern::from_entries(
        Layout::ThreeD,
        PatternFamily::Random,
        ny,
        nz,
        (by, bz),
        n_echo,
        entries,
    )?;
    p.seed = seed;
    Ok(p)
}

/// Every line at every echo, one shot per line.
pub fn full_pattern(layout: Layout, ny: usize, nz: usize, n_echo: usize) -> Result<SamplingPattern> {
    match layout {
        Layout::TwoD => {
            if nz != 1 {
                return Err(Error::invalid("2D pattern must have nz = 1"));
            }
            epti_2d_pattern(ny, n_echo, 1, 1)
        }
        Layout::ThreeD => caipi_3d_pattern(ny, nz, 1, 1, n_echo),
    }
}

/// Factor `rate` into a block that tiles the matrix, with aspect ratio
/// closest to `like`.
pub fn block_for_rate(rate: usize, ny: usize, nz: usize, like: (usize, usize)) -> Result<(usize, usize)> {
    let target = (like.0 as f64 / like.1 as f64).ln();
    (1..=rate)
        .filter(|by| rate % by == 0)
        .map(|by| (by, rate / by))
        .filter(|&(by, bz)| ny % by == 0 && nz % bz == 0)
        .min_by(|a, b| {
            let da = ((a.0 as f64 / a.1 as f64).ln() - target).abs();
            let db = ((b.0 as f64 / b.1 as f64).ln() - target).abs();
            da.total_cmp(&db)
        })
        .ok_or_else(|| Error::invalid(format!("no block of rate {rate} tiles {ny}x{nz}")))
}

struct VdsGeometry {
    ny: usize,
    nz: usize,
    ellipse: bool,
}

impl VdsGeometry {
    fn radius2(&self, ky: usize, kz: usize, scale: f64) -> f64 {
        let hy = self.ny as f64 / 2.0;
        let hz = self.nz as f64 / 2.0;
        let u = (ky as f64 + 0.5 - hy) / (hy * scale);
        let v = (kz as f64 + 0.5 - hz) / (hz * scale);
        u * u + v * v
    }

    fn inside_support(&self, ky: usize, kz: usize) -> bool {
        !self.ellipse || self.radius2(ky, kz, 1.0) <= 1.0
    }
}

/// Per-block list of valid positions, or `None` if the block is dropped.
fn block_positions(
    y0: usize,
    z0: usize,
    by: usize,
    bz: usize,
    valid: impl Fn(usize, usize) -> bool,
) -> Option<Vec<(usize, usize)>> {
    let pos: Vec<(usize, usize)> = (0..bz)
        .flat_map(|lz| (0..by).map(move |ly| (ly, lz)))
        .filter(|&(ly, lz)| valid(y0 + ly, z0 + lz))
        .collect();
    (!pos.is_empty()).then_some(pos)
}

fn nearest(pos: &[(usize, usize)], want: (usize, usize)) -> (usize, usize) {
    let d = |p: &(usize, usize)| {
        let dy = p.0 as f64 - want.0 as f64;
        let dz = p.1 as f64 - want.1 as f64;
        dy * dy + dz * dz
    };
    let mut best = pos[0];
    for p in pos {
        if d(p) < d(&best) {
            best = *p;
        }
    }
    best
}

struct Zone {
    /// Center-zone block origins.
    blocks: Vec<(usize, usize)>,
    member: Vec<bool>,
}

fn center_zone(geo: &VdsGeometry, cb: (usize, usize), scale: f64) -> Zone {
    let (ny, nz) = (geo.ny, geo.nz);
    let mut blocks = Vec::new();
    let mut member = vec![false; ny * nz];
    if scale > 0.0 {
        for z0 in (0..nz).step_by(cb.1) {
            for y0 in (0..ny).step_by(cb.0) {
                let cy = y0 as f64 + cb.0 as f64 / 2.0;
                let cz = z0 as f64 + cb.1 as f64 / 2.0;
                let u = (cy - ny as f64 / 2.0) / (ny as f64 / 2.0 * scale);
                let v = (cz - nz as f64 / 2.0) / (nz as f64 / 2.0 * scale);
                if u * u + v * v <= 1.0 {
                    blocks.push((y0, z0));
                    for lz in 0..cb.1 {
                        for ly in 0..cb.0 {
                            member[(y0 + ly) + ny * (z0 + lz)] = true;
                        }
                    }
                }
            }
        }
    }
    Zone { blocks, member }
}

/// Variable-density pattern: a central zone of `r_center` blocks inside an
/// outer region at the base pattern's rate. The zone size is chosen so the
/// net acceleration is as close as possible to `r_outer`.
pub fn vds_pattern(base: &SamplingPattern, r_center: usize, r_outer: usize, ellipse: bool) -> Result<SamplingPattern> {
    if base.layout != Layout::ThreeD || base.family.is_vds() {
        return Err(Error::invalid("VDS needs a uniform 3D base pattern"));
    }
    let family = match base.family {
        PatternFamily::Caipi | PatternFamily::TvCaipi => PatternFamily::VdsTvCaipi,
        PatternFamily::Random => PatternFamily::VdsRandom,
        other => return Err(Error::invalid(format!("{} cannot seed a VDS pattern", other.name()))),
    };
    let (by, bz) = base.block;
    if r_outer != by * bz {
        return Err(Error::invalid(format!(
            "outer rate {r_outer} differs from the base block rate {}",
            by * bz
        )));
    }
    if r_center == 0 || r_center > r_outer {
        return Err(Error::invalid("need 1 <= r_center <= r_outer"));
    }
    let (ny, nz, n_echo) = (base.ny, base.nz, base.n_echoes);
    let cb = block_for_rate(r_center, ny, nz, (by, bz))?;
    let geo = VdsGeometry { ny, nz, ellipse };

    let shots_for = |scale: f64| -> usize {
        let zone = center_zone(&geo, cb, scale);
        let mut n = zone.blocks.len();
        for z0 in (0..nz).step_by(bz) {
            for y0 in (0..ny).step_by(by) {
                let ok = |y: usize, z: usize| !zone.member[y + ny * z] && geo.inside_support(y, z);
                if block_positions(y0, z0, by, bz, ok).is_some() {
                    n += 1;
                }
            }
        }
        n
    };
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=200 {
        let scale = i as f64 / 200.0;
        let n = shots_for(scale);
        if n == 0 {
            continue;
        }
        let diff = ((ny * nz) as f64 / n as f64 - r_outer as f64).abs();
        if diff < best.0 - 1e-12 {
            best = (diff, scale);
        }
    }
    let scale = best.1;
    let zone = center_zone(&geo, cb, scale);

    let center_shift = (
        (base.shift.0 * cb.0 + by / 2) / by % cb.0,
        (base.shift.1 * cb.1 + bz / 2) / bz % cb.1,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let mut entries = Vec::new();
    let mut emit = |y0: usize, z0: usize, blk: (usize, usize), shift: (usize, usize), pos: &[(usize, usize)], entries: &mut Vec<(u32, u32)>| {
        for e in 0..n_echo {
            let (ly, lz) = if family == PatternFamily::VdsRandom {
                pos[rng.random_range(0..pos.len())]
            } else {
                nearest(pos, caipi_local(e, blk.0, blk.1, shift))
            };
            entries.push(((y0 + ly) as u32, (z0 + lz) as u32));
        }
    };
    for z0 in (0..nz).step_by(bz) {
        for y0 in (0..ny).step_by(by) {
            let ok = |y: usize, z: usize| !zone.member[y + ny * z] && geo.inside_support(y, z);
            if let Some(pos) = block_positions(y0, z0, by, bz, ok) {
                emit(y0, z0, (by, bz), base.shift, &pos, &mut entries);
            }
        }
    }
    for &(y0, z0) in &zone.blocks {
        let ok = |y: usize, z: usize| geo.inside_support(y, z);
        if let Some(pos) = block_positions(y0, z0, cb.0, cb.1, ok) {
            emit(y0, z0, cb, center_shift, &pos, &mut entries);
        }
    }
    let mut p = SamplingPattern::from_entries(Layout::ThreeD, family, ny, nz, (by, bz), n_echo, entries)?;
    p.shift = base.shift;
    p.seed = base.seed;
    p.center_block = Some(cb);
    p.ellipse = ellipse;
    Ok(p)
}

/// `ny * nz` over the number of lines per echo, averaged over echoes.
pub fn acceleration_of(p: &SamplingPattern) -> f64 {
    (p.ny * p.nz) as f64 / p.n_shots as f64
}

/// Fraction of the `2 * bz` possible block-local positions covered by an
/// odd echo-section together with the following even one, averaged over
/// shots and section pairs.
pub fn complementarity_score(p: &SamplingPattern) -> Result<f64> {
    if p.layout != Layout::ThreeD {
        return Err(Error::invalid("complementarity needs a 3D pattern"));
    }
    let (by, bz) = p.block;
    let pairs = p.n_echoes / (2 * bz);
    if pairs == 0 {
        return Err(Error::invalid(format!(
            "need at least two full echo-sections ({} echoes), have {}",
            2 * bz,
            p.n_echoes
        )));
    }
    let mut total = 0.0;
    for s in 0..p.n_shots {
        for q in 0..pairs {
            let start = q * 2 * bz;
            let union: HashSet<(usize, usize)> = (start..start + 2 * bz)
                .map(|e| {
                    let (y, z) = p.line(s, e);
                    (y % by, z % bz)
                })
                .collect();
            total += union.len() as f64 / (2 * bz) as f64;
        }
    }
    Ok(total / (p.n_shots * pairs) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn per_echo_counts(p: &SamplingPattern) -> Vec<usize> {
        (0..p.n_echoes).map(|_| p.n_shots).collect()
    }

    #[test]
    fn epti_2d_shot_count_and_period() {
        let p = epti_2d_pattern(216, 120, 4, 24).unwrap();
        assert_eq!(p.n_shots, 9);
        assert!((revisit_period(0.93, 24, 4) - 5.58).abs() < 1e-12);
        let ts = revisit_period(0.93, 24, 4);
        assert!((5.0..=10.0).contains(&ts));
        for m in 0..9 {
            let kys: HashSet<usize> = (0..120).map(|e| p.line(m, e).0).collect();
            assert_eq!(kys.len(), 24);
            assert!(kys.iter().all(|&k| (m * 24..(m + 1) * 24).contains(&k)));
        }
    }

    #[test]
    fn epti_2d_sweeps_segment_every_period() {
        let p = epti_2d_pattern(48, 30, 4, 24).unwrap();
        for e in 0..30 {
            let (a, _) = p.line(0, e);
            if e % 6 != 5 {
                let (b, _) = p.line(0, e + 1);
                assert_eq!(b, a + 4);
            }
        }
    }

    #[test]
    fn epti_2d_no_acceleration() {
        let p = epti_2d_pattern(16, 5, 1, 1).unwrap();
        assert_eq!(p.n_shots, 16);
        for e in 0..5 {
            let kys: HashSet<usize> = (0..16).map(|s| p.line(s, e).0).collect();
            assert_eq!(kys.len(), 16);
        }
        assert_eq!(acceleration_of(&p), 1.0);
    }

    #[test]
    fn epti_2d_divisibility_errors() {
        assert!(epti_2d_pattern(216, 10, 5, 24).is_err());
        assert!(epti_2d_pattern(200, 10, 4, 24).is_err());
    }

    #[test]
    fn standard_block_rates() {
        let p = caipi_3d_pattern(96, 36, 12, 6, 20).unwrap();
        assert_eq!(acceleration_of(&p), 72.0);
        let p = tv_caipi_3d_pattern(96, 36, 8, 4, 20, 0, 2).unwrap();
        assert_eq!(acceleration_of(&p), 32.0);
        let p = caipi_3d_pattern(8, 4, 1, 1, 3).unwrap();
        assert_eq!(acceleration_of(&p), 1.0);
    }

    #[test]
    fn caipi_section_covers_distinct_positions() {
        let p = caipi_3d_pattern(24, 12, 12, 6, 12).unwrap();
        for s in 0..p.n_shots {
            let first: Vec<_> = (0..6).map(|e| p.line(s, e)).collect();
            let second: Vec<_> = (6..12).map(|e| p.line(s, e)).collect();
            assert_eq!(first, second);
            let uniq: HashSet<_> = first.iter().collect();
            assert_eq!(uniq.len(), 6);
        }
        // Each echo of a section lands on a distinct block-local position,
        // and all shots hit that same position in their own block.
        for e in 0..6 {
            let local: HashSet<_> = (0..p.n_shots).map(|s| (p.line(s, e).0 % 12, p.line(s, e).1 % 6)).collect();
            assert_eq!(local.len(), 1);
        }
    }

    #[test]
    fn zero_shift_is_caipi() {
        let a = tv_caipi_3d_pattern(24, 12, 12, 6, 20, 0, 0).unwrap();
        let b = caipi_3d_pattern(24, 12, 12, 6, 20).unwrap();
        assert_eq!(a, b);
        assert!(tv_caipi_3d_pattern(24, 12, 12, 6, 20, 12, 0).is_err());
    }

    #[test]
    fn shift_applies_to_even_sections_only() {
        let p = tv_caipi_3d_pattern(12, 6, 12, 6, 20, 4, 1).unwrap();
        for e in 0..6 {
            assert_eq!(p.line(0, e), (e, e));
            assert_eq!(p.line(0, e + 6), ((e + 4) % 12, (e + 1) % 6));
            assert_eq!(p.line(0, e + 12), (e, e));
        }
        // trailing short section (echoes 18, 19) is truncated, even numbering
        assert_eq!(p.line(0, 18), (4, 1));
        assert_eq!(p.line(0, 19), (5, 2));
    }

    #[test]
    fn complementarity_bounds() {
        let caipi = caipi_3d_pattern(24, 12, 12, 6, 20).unwrap();
        assert_eq!(complementarity_score(&caipi).unwrap(), 0.5);
        let best = (0..12)
            .flat_map(|sy| (0..6).map(move |sz| (sy, sz)))
            .map(|(sy, sz)| complementarity_score(&tv_caipi_3d_pattern(24, 12, 12, 6, 20, sy, sz).unwrap()).unwrap())
            .fold(0.0, f64::max);
        assert_eq!(best, 1.0);
        let short = caipi_3d_pattern(24, 12, 12, 6, 11).unwrap();
        assert!(complementarity_score(&short).is_err());
        assert!(complementarity_score(&epti_2d_pattern(48, 30, 4, 24).unwrap()).is_err());
    }

    #[test]
    fn zero_shift_is_the_unique_half_score() {
        for sy in 0..12 {
            for sz in 0..6 {
                let p = tv_caipi_3d_pattern(12, 6, 12, 6, 12, sy, sz).unwrap();
                let s = complementarity_score(&p).unwrap();
                assert_eq!(s == 0.5, (sy, sz) == (0, 0), "shift {sy},{sz} score {s}");
            }
        }
    }

    #[test]
    fn random_seeds_differ_with_equal_counts() {
        let a = random_3d_pattern(24, 12, 12, 6, 20, 1).unwrap();
        let b = random_3d_pattern(24, 12, 12, 6, 20, 2).unwrap();
        assert_ne!(a.entries(), b.entries());
        assert_eq!(per_echo_counts(&a), per_echo_counts(&b));
        assert_eq!(a, random_3d_pattern(24, 12, 12, 6, 20, 1).unwrap());
        let full = random_3d_pattern(4, 2, 1, 1, 3, 9).unwrap();
        assert_eq!(full.entries(), full_pattern(Layout::ThreeD, 4, 2, 3).unwrap().entries());
    }

    #[test]
    fn random_covers_all_positions_eventually() {
        let p = random_3d_pattern(12, 6, 4, 3, 400, 5).unwrap();
        let seen: HashSet<_> = (0..p.n_shots).flat_map(|s| (0..400).map(move |e| (s, e))).map(|(s, e)| p.line(s, e)).collect();
        assert_eq!(seen.len(), 72);
    }

    #[test]
    fn every_block_is_visited() {
        let p = tv_caipi_3d_pattern(96, 36, 12, 6, 20, 6, 3).unwrap();
        let blocks: HashSet<_> = (0..p.n_shots).map(|s| (p.line(s, 0).0 / 12, p.line(s, 0).1 / 6)).collect();
        assert_eq!(blocks.len(), 48);
    }

    #[test]
    fn vds_net_rate_near_outer_rate() {
        for base in [
            tv_caipi_3d_pattern(96, 36, 12, 6, 20, 6, 3).unwrap(),
            random_3d_pattern(96, 36, 12, 6, 20, 4).unwrap(),
        ] {
            let v = vds_pattern(&base, 32, 72, true).unwrap();
            assert_eq!(v.center_block, Some((8, 4)));
            let r = acceleration_of(&v);
            assert!((r - 72.0).abs() / 72.0 < 0.05, "net rate {r}");
            let hy = 48.0;
            let hz = 18.0;
            for &(y, z) in v.entries() {
                let u = (y as f64 + 0.5 - hy) / hy;
                let w = (z as f64 + 0.5 - hz) / hz;
                assert!(u * u + w * w <= 1.0 + 1e-12);
            }
            // the center is denser than the periphery
            let near = |y: u32, z: u32| ((y as f64 + 0.5 - hy) / hy).powi(2) + ((z as f64 + 0.5 - hz) / hz).powi(2) < 0.1;
            let center_hits = v.entries().iter().filter(|&&(y, z)| near(y, z)).count();
            let base_hits = base.entries().iter().filter(|&&(y, z)| near(y, z)).count();
            assert!(center_hits > base_hits);
        }
    }

    #[test]
    fn vds_equal_rates_without_ellipse_is_base() {
        let base = tv_caipi_3d_pattern(48, 12, 12, 6, 14, 6, 3).unwrap();
        let v = vds_pattern(&base, 72, 72, false).unwrap();
        assert_eq!(v.entries(), base.entries());
        assert_eq!(acceleration_of(&v), 72.0);
    }

    #[test]
    fn vds_rejects_bad_rates() {
        let base = caipi_3d_pattern(48, 12, 12, 6, 14).unwrap();
        assert!(vds_pattern(&base, 80, 72, true).is_err());
        assert!(vds_pattern(&base, 32, 64, true).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tv_caipi_invariants(gy in 1usize..4, gz in 1usize..4, by in 1usize..9, bz in 1usize..6,
                               t in 1usize..30, sy in 0usize..9, sz in 0usize..6) {
            let (sy, sz) = (sy % by, sz % bz);
            let p = tv_caipi_3d_pattern(gy * by, gz * bz, by, bz, t, sy, sz).unwrap();
            prop_assert_eq!(p.entries().len(), p.n_shots * t);
            prop_assert_eq!(acceleration_of(&p), (by * bz) as f64);
            prop_assert!(p.validate().is_ok());
            if t >= 2 * bz {
                let s = complementarity_score(&p).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn complementarity_symmetric_under_section_swap(sy in 0usize..12, sz in 0usize..6) {
            // Swapping odd and even sections equals the negated shift.
            let p = tv_caipi_3d_pattern(12, 6, 12, 6, 12, sy, sz).unwrap();
            let q = tv_caipi_3d_pattern(12, 6, 12, 6, 12, (12 - sy) % 12, (6 - sz) % 6).unwrap();
            let a = complementarity_score(&p).unwrap();
            let b = complementarity_score(&q).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn random_one_sample_per_shot_echo(seed in 0u64..1000) {
            let p = random_3d_pattern(24, 12, 6, 3, 9, seed).unwrap();
            prop_assert_eq!(p.entries().len(), p.n_shots * 9);
            prop_assert!(p.validate().is_ok());
        }
    }
}
