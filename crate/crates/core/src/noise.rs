//! White noise on the lattice and its regularization by a self-adjoint
//! Fourier multiplier.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{fft_forward, Grid, RealField};
use crate::rng::stream;

/// Fourier-side profile of the mollifier `â(εk)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifierProfile {
    /// `exp(−t²)`.
    Gaussian,
    /// 1 on `[0, 1/2]`, cosine taper to 0 at `t = 1`.
    RaisedCosine,
}

impl MollifierProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Gaussian => (-t * t).exp(),
            Self::RaisedCosine => {
                if t <= 0.5 {
                    1.0
                } else if t >= 1.0 {
                    0.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (2.0 * t - 1.0)).cos())
                }
            }
        }
    }
}

/// The operator 𝒜 as a real, even Fourier multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizationOp {
    Identity,
    /// `σ_j` attached to the j-th distinct eigenvalue of `−Δ_z` in ascending
    /// order. Levels past the list are truncated (multiplier 0).
    Spectral { sigma: Vec<f64> },
    /// `â(ε|k|)` over all axes.
    Mollifier { eps: f64, profile: MollifierProfile },
}

/// Distinct `|k_z|²` levels of a grid, ascending. Relative tolerance 1e-9.
pub fn z_levels(grid: &Grid) -> Vec<f64> {
    let mut v: Vec<f64> = grid.half_spectrum().k2_z.clone();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1.0));
    v
}

fn level_index(levels: &[f64], k2z: f64) -> usize {
    let i = levels.partition_point(|&l| l < k2z * (1.0 - 1e-9) - 1e-12);
    i.min(levels.len() - 1)
}

impl RegularizationOp {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Identity => Ok(()),
            Self::Spectral { sigma } => {
                if sigma.is_empty() {
                    return Err(Error::InvalidParameter("empty σ list".into()));
                }
                if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                    return Err(Error::InvalidParameter(format!(
                        "σ must be positive and finite, got {s}"
                    )));
                }
                Ok(())
            }
            Self::Mollifier { eps, .. } => {
                if eps.is_finite() && *eps > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "mollifier scale must be positive, got {eps}"
                    )))
                }
            }
        }
    }

    /// Profile `σ_j = (1 + λ_j)^{−s}` over every z-level of `grid`.
    pub fn spectral_power(grid: &Grid, s: f64) -> Self {
        Self::Spectral {
            sigma: z_levels(grid).iter().map(|l| (1.0 + l).powf(-s)).collect(),
        }
    }

    /// Multiplier in the half-spectrum layout of `grid`.
    pub fn multiplier(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.validate()?;
        let hs = grid.half_spectrum();
        Ok(match self {
            Self::Identity => vec![1.0; hs.len()],
            Self::Spectral { sigma } => {
                let levels = z_levels(grid);
                if grid.z_axes().is_empty() && sigma.len() != 1 {
                    return Err(Error::InvalidParameter(format!(
                        "grid has no internal axes but {} σ values were given",
                        sigma.len()
                    )));
                }
                hs.k2_z
                    .iter()
                    .map(|&k| sigma.get(level_index(&levels, k)).copied().unwrap_or(0.0))
                    .collect()
            }
            Self::Mollifier { eps, profile } => {
                hs.k2.iter().map(|&k2| profile.eval(eps * k2.sqrt())).collect()
            }
        })
    }

    /// Number of half-spectrum slots with a nonzero multiplier.
    pub fn retained_modes(&self, grid: &Grid) -> Result<usize> {
        Ok(self.multiplier(grid)?.iter().filter(|&&m| m != 0.0).count())
    }

    /// Physical radius beyond which the mollifier kernel is negligible.
    pub fn support_radius(&self, grid: &Grid) -> f64 {
        match self {
            Self::Identity | Self::Spectral { .. } => {
                grid.axes().iter().map(|a| a.spacing()).fold(0.0, f64::max)
            }
            // kernel of exp(−ε²k²) has width ε√2; 3 widths hold all but 1e-4
            Self::Mollifier { eps, profile } => match profile {
                MollifierProfile::Gaussian => 3.0 * eps * std::f64::consts::SQRT_2,
                MollifierProfile::RaisedCosine => 4.0 * eps,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub index: u64,
}

#[derive(Clone, Debug)]
pub struct NoiseSample {
    pub field: RealField,
    pub seed: SeedRecord,
}

/// I.i.d. `N(0, 1/cellvol)` per site from the stream `(master, index)`.
pub fn sample_white_noise(grid: &Arc<Grid>, seed: SeedRecord) -> NoiseSample {
    let mut rng = stream(seed.master, seed.index);
    let sd = grid.cell_volume().sqrt().recip();
    let data = (0..grid.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect();
    NoiseSample {
        field: RealField::from_vec_unchecked(grid, data),
        seed,
    }
}

/// Samples `indices` in parallel; output order follows `indices`.
pub fn sample_batch(grid: &Arc<Grid>, master: u64, indices: std::ops::Range<u64>) -> Vec<NoiseSample> {
    indices
        .into_par_iter()
        .map(|index| sample_white_noise(grid, SeedRecord { master, index }))
        .collect()
}

pub fn regularize(xi: &NoiseSample, op: &RegularizationOp) -> Result<RealField> {
    if matches!(op, RegularizationOp::Identity) {
        return Ok(xi.field.clone());
    }
    let grid = xi.field.grid();
    let mult = op.multiplier(grid)?;
    let data = grid.engine().apply_multiplier(xi.field.values(), &mult);
    Ok(RealField::from_vec_unchecked(grid, data))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeAudit {
    /// Signed dual indices of the mode.
    pub mode: Vec<i64>,
    /// Empirical `E|ĉ(k)|²·cellvol/∏N`, i.e. in units of the white level.
    pub empirical: f64,
    pub exact: f64,
    pub stderr: f64,
    pub z: f64,
    pub kurtosis: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceAudit {
    pub n_samples: usize,
    pub modes: Vec<ModeAudit>,
    pub flagged: usize,
    pub max_abs_z: f64,
}

/// Flag threshold in standard errors.
pub const AUDIT_FLAG_Z: f64 = 5.0;

/// Per-mode empirical vs exact variance of `𝒜ξ` over `n_samples` draws.
///
/// Modes with a zero multiplier are skipped. The kurtosis column is that of
/// the real parts, whose Gaussian value is 3.
pub fn covariance_audit(
    grid: &Arc<Grid>,
    op: &RegularizationOp,
    n_samples: usize,
    master: u64,
) -> Result<CovarianceAudit> {
    if n_samples < 10 {
        return Err(Error::InsufficientData(format!(
            "covariance audit needs at least 10 samples, got {n_samples}"
        )));
    }
    let mult_half = op.multiplier(grid)?;
    let hs = grid.half_spectrum();
    let n_total = grid.len() as f64;
    let white = n_total / grid.cell_volume();
    let nd = grid.ndim();
    // Map half-spectrum slots to full-spectrum storage.
    let full_index: Vec<usize> = (0..hs.len())
        .map(|s| {
            let idx: Vec<usize> = (0..nd)
                .map(|a| {
                    let n = hs.modes[s * nd + a];
                    n.rem_euclid(grid.axes()[a].points as i64) as usize
                })
                .collect();
            grid.flat_index(&idx)
        })
        .collect();
    let retained: Vec<usize> = (0..hs.len()).filter(|&s| mult_half[s] != 0.0).collect();

    // Sum of |c|², |c|⁴, Re², Re⁴ per retained slot.
    let sums = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let xi = sample_white_noise(grid, SeedRecord { master, index: i });
            let f = regularize(&xi, op).expect("validated above");
            let spec = fft_forward(&f);
            let c = spec.coefficients();
            retained
                .iter()
                .map(|&s| {
                    let v = c[full_index[s]];
                    let p = v.norm_sqr() / white;
                    let r = v.re * v.re / white;
                    [p, p * p, r, r * r]
                })
                .collect::<Vec<_>>()
        })
        .reduce(
            || vec![[0.0; 4]; retained.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    for j in 0..4 {
                        x[j] += y[j];
                    }
                }
                a
            },
        );

    let n = n_samples as f64;
    let mut modes = Vec::with_capacity(retained.len());
    for (j, &s) in retained.iter().enumerate() {
        let [p1, p2, r2, r4] = sums[j];
        let mean = p1 / n;
        let var = (p2 / n - mean * mean).max(0.0) * n / (n - 1.0);
        let exact = mult_half[s] * mult_half[s];
        let stderr = (var / n).sqrt();
        let z = if stderr > 0.0 { (mean - exact) / stderr } else { 0.0 };
        let m2 = r2 / n;
        let kurtosis = if m2 > 0.0 { (r4 / n) / (m2 * m2) } else { f64::NAN };
        modes.push(ModeAudit {
            mode: hs.modes[s * nd..(s + 1) * nd].to_vec(),
            empirical: mean,
            exact,
            stderr,
            z,
            kurtosis,
            flagged: z.abs() > AUDIT_FLAG_Z,
        });
    }
    let flagged = modes.iter().filter(|m| m.flagged).count();
    let max_abs_z = modes.iter().fold(0.0f64, |m, a| m.max(a.z.abs()));
    Ok(CovarianceAudit {
        n_samples,
        modes,
        flagged,
        max_abs_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_noise_moments() {
        let g = Grid::new((8.0, 256), &[(2.0, 16)]).unwrap();
        assert_eq!(g.len(), 1 << 20);
        let xi = sample_white_noise(&g, SeedRecord { master: 1, index: 0 });
        let n = g.len() as f64;
        let v = xi.field.values();
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let level = 1.0 / g.cell_volume();
        assert!(mean.abs() < 4.0 * (level / n).sqrt());
        assert!((var / level - 1.0).abs() < 0.01);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let g = Grid::new((1.0, 8), &[(1.0, 4)]).unwrap();
        let s = SeedRecord { master: 42, index: 3 };
        let a = sample_white_noise(&g, s);
        let b = sample_white_noise(&g, s);
        assert_eq!(a.field.values(), b.field.values());
        let c = sample_white_noise(&g, SeedRecord { master: 42, index: 4 });
        assert_ne!(a.field.values(), c.field.values());
        let batch = sample_batch(&g, 42, 3..5);
        assert_eq!(batch[0].field.values(), a.field.values());
        assert_eq!(batch[1].field.values(), c.field.values());
    }

    #[test]
    fn identity_is_a_no_op() {
        let g = Grid::new((1.0, 8), &[(1.0, 4)]).unwrap();
        let xi = sample_white_noise(&g, SeedRecord { master: 0, index: 0 });
        let out = regularize(&xi, &RegularizationOp::Identity).unwrap();
        assert_eq!(out.values(), xi.field.values());
        let ones = RegularizationOp::Spectral { sigma: vec![1.0; z_levels(&g).len()] };
        let out = regularize(&xi, &ones).unwrap();
        for (a, b) in out.values().iter().zip(xi.field.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn z_levels_of_small_torus() {
        let g = Grid::new((1.0, 4), &[(2.0 * std::f64::consts::PI, 8)]).unwrap();
        assert_eq!(z_levels(&g), vec![0.0, 1.0, 4.0, 9.0, 16.0]);
    }

    #[test]
    fn single_retained_level_quadruples_variance() {
        let g = Grid::new((4.0, 8), &[(2.0 * std::f64::consts::PI, 4)]).unwrap();
        let op = RegularizationOp::Spectral { sigma: vec![2.0] };
        let audit = covariance_audit(&g, &op, 1000, 7).unwrap();
        assert!(audit.modes.iter().all(|m| m.mode[2] == 0 && m.exact == 4.0));
        assert_eq!(audit.flagged, 0, "max |z| = {}", audit.max_abs_z);
    }

    #[test]
    fn mollifier_audit_passes() {
        let g = Grid::new((4.0, 8), &[(2.0, 4)]).unwrap();
        for profile in [MollifierProfile::Gaussian, MollifierProfile::RaisedCosine] {
            let op = RegularizationOp::Mollifier { eps: 0.3, profile };
            let audit = covariance_audit(&g, &op, 1000, 11).unwrap();
            assert_eq!(audit.flagged, 0, "{profile:?}: max |z| = {}", audit.max_abs_z);
            // kurtosis of a Gaussian sample of size 10³ has sd ≈ √(24/n) ≈ 0.155
            for m in &audit.modes {
                assert!((m.kurtosis - 3.0).abs() < 6.0 * (24.0f64 / 1000.0).sqrt() + 0.5,
                    "{:?} kurtosis {}", m.mode, m.kurtosis);
            }
        }
    }

    #[test]
    fn mollifier_multiplier_is_even_bounded_and_normalized() {
        let g = Grid::new((3.0, 8), &[(2.0, 4)]).unwrap();
        for profile in [MollifierProfile::Gaussian, MollifierProfile::RaisedCosine] {
            let m = RegularizationOp::Mollifier { eps: 0.2, profile }.multiplier(&g).unwrap();
            assert_eq!(m[0], 1.0);
            assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(RegularizationOp::Mollifier { eps: 0.0, profile: MollifierProfile::Gaussian }
            .validate()
            .is_err());
        assert!(RegularizationOp::Spectral { sigma: vec![1.0, -1.0] }.validate().is_err());
    }
}
