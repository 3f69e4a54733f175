//! Littlewood–Paley blocks and weighted Besov norms on the periodic lattice.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{check_same, Grid, RealField};

/// Inner edge of the transition band of `χ`.
pub const CHI_INNER: f64 = 0.75;
/// Outer edge of the support of `χ`.
pub const CHI_OUTER: f64 = 4.0 / 3.0;

/// Radial cutoff: 1 on `[0, 3/4]`, raised cosine down to 0 at `4/3`.
pub fn chi(r: f64) -> f64 {
    if r <= CHI_INNER {
        1.0
    } else if r >= CHI_OUTER {
        0.0
    } else {
        let t = (r - CHI_INNER) / (CHI_OUTER - CHI_INNER);
        0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// `φ(r) = χ(r/2) − χ(r)`, supported in `[3/4, 8/3]`.
pub fn phi(r: f64) -> f64 {
    chi(0.5 * r) - chi(r)
}

/// Blocks `−1..=top` in half-spectrum layout. Block `−1` is `χ(|k|)`, block
/// `j < top` is `φ(2^{−j}|k|)` and the top block is the remainder
/// `1 − χ(2^{−top}|k|)`, so the blocks sum to one exactly.
#[derive(Clone, Debug)]
pub struct DyadicPartition {
    grid: Arc<Grid>,
    top: usize,
    /// `multipliers[j + 1]` is block `j`.
    multipliers: Vec<Vec<f64>>,
}

fn nyquist(grid: &Grid) -> f64 {
    grid.axes().iter().map(|a| std::f64::consts::PI / a.spacing()).fold(f64::INFINITY, f64::min)
}

impl DyadicPartition {
    /// `top` is the largest index with `2^top ≤ (3/4)·k_Nyquist`, so every
    /// block below the remainder lies inside the resolved spectrum.
    pub fn new(grid: &Arc<Grid>) -> Result<Self> {
        let top = (0.75 * nyquist(grid)).log2().floor();
        if top < 1.0 {
            return Err(Error::InvalidGrid(format!(
                "dyadic blocks need a Nyquist wavenumber ≥ 8/3, got {}",
                nyquist(grid)
            )));
        }
        Self::with_top(grid, top as usize)
    }

    pub fn with_top(grid: &Arc<Grid>, top: usize) -> Result<Self> {
        let nyquist = nyquist(grid);
        let edge = CHI_INNER * 2f64.powi(top as i32);
        if edge >= nyquist {
            return Err(Error::InvalidGrid(format!(
                "top block starts at |k| = {edge} beyond the lattice Nyquist {nyquist}"
            )));
        }
        let hs = grid.half_spectrum();
        let k: Vec<f64> = hs.k2.iter().map(|v| v.sqrt()).collect();
        let mut multipliers = Vec::with_capacity(top + 2);
        multipliers.push(k.iter().map(|&r| chi(r)).collect());
        for j in 0..top {
            let s = 2f64.powi(-(j as i32));
            multipliers.push(k.iter().map(|&r| phi(s * r)).collect());
        }
        let s = 2f64.powi(-(top as i32));
        multipliers.push(k.iter().map(|&r| 1.0 - chi(s * r)).collect());
        Ok(Self { grid: grid.clone(), top, multipliers })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Index of the top (remainder) block.
    pub fn top(&self) -> usize {
        self.top
    }

    /// Block multiplier for `j ∈ −1..=top`.
    pub fn multiplier(&self, j: i32) -> Result<&[f64]> {
        if j < -1 || j > self.top as i32 {
            return Err(Error::InvalidParameter(format!("block {j} outside −1..={}", self.top)));
        }
        Ok(&self.multipliers[(j + 1) as usize])
    }

    /// Max deviation of `Σ_j φ_j` from 1 over the dual lattice.
    pub fn unity_defect(&self) -> f64 {
        (0..self.multipliers[0].len())
            .map(|i| (self.multipliers.iter().map(|m| m[i]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `Δ_j u`.
pub fn lp_block(u: &RealField, part: &DyadicPartition, j: i32) -> Result<RealField> {
    check_same(u.grid(), part.grid())?;
    let m = part.multiplier(j)?;
    RealField::from_vec(u.grid(), u.grid().engine().apply_multiplier(u.values(), m))
}

/// All blocks `Δ_{−1}u..Δ_top u` from a single forward transform.
pub fn lp_blocks(u: &RealField, part: &DyadicPartition) -> Result<Vec<Vec<f64>>> {
    check_same(u.grid(), part.grid())?;
    let eng = u.grid().engine();
    let spec = eng.forward_half(u.values());
    Ok(part
        .multipliers
        .par_iter()
        .map(|m| eng.inverse_half(spec.iter().zip(m).map(|(c, w)| c * *w).collect()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesovParams {
    pub s: f64,
    pub p: f64,
    pub q: f64,
    /// Exponent of the weight `(1 + |y|²)^{−ℓ/2}`.
    pub ell: f64,
}

impl BesovParams {
    pub fn new(s: f64, p: f64, q: f64, ell: f64) -> Result<Self> {
        if !s.is_finite() || !(p >= 1.0) || !(q >= 1.0) || !ell.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid Besov indices s={s} p={p} q={q} ℓ={ell}")));
        }
        Ok(Self { s, p, q, ell })
    }

    /// `p = q` with the default weight exponent 3.
    pub fn diagonal(s: f64, p: f64) -> Result<Self> {
        Self::new(s, p, p, 3.0)
    }
}

/// `(1 + |y|²)^{−ℓ/2}` with `y` the centred periodic coordinate.
pub fn weight(grid: &Grid, ell: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let r2: f64 = grid.coords(i).iter().map(|c| c * c).sum();
            (1.0 + r2).powf(-0.5 * ell)
        })
        .collect()
}

/// `(Σ_y |v·r_ℓ|^p cellvol)^{1/p}`; `p = ∞` gives the weighted sup.
pub fn weighted_lp(values: &[f64], w: &[f64], p: f64, cell: f64) -> f64 {
    if p.is_infinite() {
        return values.iter().zip(w).map(|(v, r)| (v * r).abs()).fold(0.0, f64::max);
    }
    (values.iter().zip(w).map(|(v, r)| (v * r).abs().powf(p)).sum::<f64>() * cell).powf(1.0 / p)
}

/// Weighted block norms `‖Δ_j u‖_{p,ℓ}` for `j = −1..=top`.
pub fn block_norms(u: &RealField, part: &DyadicPartition, p: f64, w: &[f64]) -> Result<Vec<f64>> {
    let cell = u.grid().cell_volume();
    Ok(lp_blocks(u, part)?.iter().map(|b| weighted_lp(b, w, p, cell)).collect())
}

/// Combines block norms into `(Σ_j 2^{sjq}‖Δ_j u‖^q)^{1/q}`.
pub fn combine(norms: &[f64], s: f64, q: f64) -> f64 {
    let scaled = norms.iter().enumerate().map(|(i, n)| 2f64.powf(s * (i as f64 - 1.0)) * n);
    if q.is_infinite() {
        return scaled.fold(0.0, f64::max);
    }
    scaled.map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
}

pub fn besov_norm(u: &RealField, part: &DyadicPartition, params: &BesovParams) -> Result<f64> {
    let w = weight(u.grid(), params.ell);
    Ok(combine(&block_norms(u, part, params.p, &w)?, params.s, params.q))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyRow {
    pub epsilon: f64,
    pub s: f64,
    pub p: f64,
    /// `E[‖η_ε‖^p]`.
    pub norm_mean: f64,
    pub norm_err: f64,
    /// `E[‖η_ε − η_{ε/2}‖^p]` against the next rung; `None` on the last.
    pub cauchy_gap: Option<f64>,
    pub cauchy_err: Option<f64>,
}

fn mean_err(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if n > 1.0 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, (var / n).sqrt())
}

/// `fields[rung][sample]` holds `η_ε` along the ladder `epsilons`, with the
/// same noise for a given sample index on every rung.
pub fn gmc_regularity_study(epsilons: &[f64], fields: &[Vec<RealField>], params: &[BesovParams]) -> Result<Vec<StudyRow>> {
    if epsilons.len() != fields.len() || fields.is_empty() {
        return Err(Error::ShapeMismatch { expected: epsilons.len(), found: fields.len() });
    }
    let n = fields[0].len();
    if n == 0 || fields.iter().any(|f| f.len() != n) {
        return Err(Error::InsufficientData("each rung needs the same positive number of samples".into()));
    }
    let grid = fields[0][0].grid().clone();
    for f in fields.iter().flatten() {
        check_same(f.grid(), &grid)?;
    }
    let part = DyadicPartition::new(&grid)?;
    let ells: Vec<f64> = {
        let mut e: Vec<f64> = params.iter().map(|p| p.ell).collect();
        e.dedup();
        e
    };
    let weights: Vec<(f64, Vec<f64>)> = ells.iter().map(|&l| (l, weight(&grid, l))).collect();
    let w_for = |ell: f64| &weights.iter().find(|(l, _)| *l == ell).expect("weight cached").1;

    // per (rung, sample): blocks; norms depend on (p, ℓ) through the block Lᵖ norms only
    let blocks: Vec<Vec<Vec<Vec<f64>>>> = fields
        .iter()
        .map(|rung| rung.par_iter().map(|f| lp_blocks(f, &part)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let cell = grid.cell_volume();
    let mut rows = Vec::new();
    for (r, &eps) in epsilons.iter().enumerate() {
        for prm in params {
            let w = w_for(prm.ell);
            let norm_p: Vec<f64> = blocks[r]
                .iter()
                .map(|bs| {
                    let nb: Vec<f64> = bs.iter().map(|b| weighted_lp(b, w, prm.p, cell)).collect();
                    combine(&nb, prm.s, prm.q).powf(prm.p)
                })
                .collect();
            let (m, e) = mean_err(&norm_p);
            let (gap, gap_err) = if r + 1 < epsilons.len() {
                let g: Vec<f64> = blocks[r]
                    .iter()
                    .zip(&blocks[r + 1])
                    .map(|(a, b)| {
                        let nb: Vec<f64> = a
                            .iter()
                            .zip(b)
                            .map(|(x, y)| {
                                let d: Vec<f64> = x.iter().zip(y).map(|(u, v)| u - v).collect();
                                weighted_lp(&d, w, prm.p, cell)
                            })
                            .collect();
                        combine(&nb, prm.s, prm.q).powf(prm.p)
                    })
                    .collect();
                let (gm, ge) = mean_err(&g);
                (Some(gm), Some(ge))
            } else {
                (None, None)
            };
            rows.push(StudyRow { epsilon: eps, s: prm.s, p: prm.p, norm_mean: m, norm_err: e, cauchy_gap: gap, cauchy_err: gap_err });
        }
    }
    Ok(rows)
}

/// `epsilon,s,p,norm_mean,norm_err,cauchy_gap`.
pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("epsilon,s,p,norm_mean,norm_err,cauchy_gap\n");
    for r in rows {
        let g = r.cauchy_gap.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(out, "{:e},{},{},{:e},{:e},{}", r.epsilon, r.s, r.p, r.norm_mean, r.norm_err, g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid2() -> Arc<Grid> {
        Grid::new((8.0, 32), &[]).unwrap()
    }

    fn random_field(g: &Arc<Grid>, seed: u64) -> RealField {
        crate::noise::sample_white_noise(g, crate::noise::SeedRecord { master: seed, index: 0 }).field
    }

    #[test]
    fn profiles_meet_the_support_constraints() {
        for i in 0..=400 {
            let r = i as f64 * 0.01;
            assert!((0.0..=1.0).contains(&chi(r)) && (0.0..=1.0).contains(&phi(r)));
            if r >= CHI_OUTER {
                assert_eq!(chi(r), 0.0);
            }
            if r <= 0.75 || r >= 8.0 / 3.0 {
                assert_eq!(phi(r), 0.0, "{r}");
            }
        }
    }

    #[test]
    fn partition_of_unity_and_reconstruction() {
        let g = grid2();
        let part = DyadicPartition::new(&g).unwrap();
        assert_eq!(part.top(), 3);
        assert!(part.unity_defect() < 1e-10);
        let u = random_field(&g, 1);
        let blocks = lp_blocks(&u, &part).unwrap();
        let mut sum = vec![0.0; g.len()];
        for b in &blocks {
            for (s, v) in sum.iter_mut().zip(b) {
                *s += v;
            }
        }
        let err = sum.iter().zip(u.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8 * u.sup_norm(), "{err}");
        assert!(lp_block(&u, &part, 4).is_err());
        assert!(lp_block(&u, &part, -2).is_err());
    }

    #[test]
    fn far_blocks_are_spectrally_disjoint() {
        let part = DyadicPartition::new(&grid2()).unwrap();
        for a in -1..=part.top() as i32 {
            for b in (a + 2)..=part.top() as i32 {
                let (ma, mb) = (part.multiplier(a).unwrap(), part.multiplier(b).unwrap());
                assert!(ma.iter().zip(mb).all(|(x, y)| x * y == 0.0), "{a} {b}");
            }
        }
    }

    #[test]
    fn constant_lives_in_the_low_block() {
        let g = grid2();
        let part = DyadicPartition::new(&g).unwrap();
        let u = RealField::constant(&g, 2.5);
        let low = lp_block(&u, &part, -1).unwrap();
        assert!(low.values().iter().all(|v| (v - 2.5).abs() < 1e-12));
        for j in 0..=2 {
            assert!(lp_block(&u, &part, j).unwrap().sup_norm() < 1e-12);
        }
    }

    #[test]
    fn single_mode_sits_in_neighbouring_blocks() {
        let g = grid2();
        let part = DyadicPartition::new(&g).unwrap();
        // |k| = 2π·3/8 ≈ 2.36 lies in φ_1's plateau region [3/2, 8/3]
        let k = 2.0 * std::f64::consts::PI * 3.0 / 8.0;
        let u = RealField::from_fn(&g, |c| (k * c[0]).cos());
        let norms: Vec<f64> = (-1..=2).map(|j| lp_block(&u, &part, j).unwrap().sup_norm()).collect();
        assert!(norms[0] < 1e-12 && norms[3] < 1e-12);
        // one-block oracle: the norm is 2^{sj}·‖Δ_j u‖ summed over the blocks hit
        let p = BesovParams::new(-0.5, 2.0, 2.0, 3.0).unwrap();
        let w = weight(&g, 3.0);
        let direct: f64 = (-1..=2)
            .map(|j| {
                let b = lp_block(&u, &part, j).unwrap();
                (2f64.powf(-0.5 * j as f64) * weighted_lp(b.values(), &w, 2.0, g.cell_volume())).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!((besov_norm(&u, &part, &p).unwrap() - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn norm_is_homogeneous_and_zero_on_zero() {
        let g = grid2();
        let part = DyadicPartition::new(&g).unwrap();
        let p = BesovParams::diagonal(-0.464, 1.45).unwrap();
        assert_eq!(besov_norm(&RealField::zeros(&g), &part, &p).unwrap(), 0.0);
        let u = random_field(&g, 2);
        let n1 = besov_norm(&u, &part, &p).unwrap();
        let n2 = besov_norm(&u.map(|v| 2.0 * v), &part, &p).unwrap();
        assert!((n2 - 2.0 * n1).abs() < 1e-12 * n1);
    }

    #[test]
    fn study_is_trivial_without_charge() {
        // α = 0: η ≡ 1 on every rung
        let g = Grid::new((4.0, 16), &[(4.0, 16)]).unwrap();
        let one = RealField::constant(&g, 1.0);
        let fields = vec![vec![one.clone(), one.clone()]; 3];
        let prm = [BesovParams::diagonal(-0.464, 1.45).unwrap()];
        let rows = gmc_regularity_study(&[0.4, 0.2, 0.1], &fields, &prm).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.norm_mean == rows[0].norm_mean && r.norm_err == 0.0));
        assert_eq!(rows[0].cauchy_gap, Some(0.0));
        assert!(study_csv(&rows).starts_with("epsilon,s,p,norm_mean,norm_err,cauchy_gap\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn norm_is_monotone_in_s(seed in 0u64..1000, s1 in -1.0f64..0.5, ds in 0.0f64..1.0) {
            let g = grid2();
            let part = DyadicPartition::new(&g).unwrap();
            let u = random_field(&g, seed);
            // drop the j = −1 block, where 2^{−s} reverses the order
            let blocks = lp_blocks(&u, &part).unwrap();
            let w = weight(&g, 3.0);
            let mut nb: Vec<f64> = blocks.iter().map(|b| weighted_lp(b, &w, 1.5, g.cell_volume())).collect();
            nb[0] = 0.0;
            prop_assert!(combine(&nb, s1, 1.5) <= combine(&nb, s1 + ds, 1.5) * (1.0 + 1e-12));
        }
    }
}
