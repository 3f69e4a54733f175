//! Wick ordering: renormalization constants, Wick exponentials (Gaussian
//! multiplicative chaos) and Hermite Wick powers, plus ball-mass moment
//! statistics of the chaos measure.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{GreenOp, Grid, RealField};
use crate::noise::RegularizationOp;
use crate::rng::stream;

/// Log-densities above this are capped.
pub const LOG_DENSITY_CAP: f64 = 700.0;

/// Pointwise variance of a stationary Gaussian field, keyed by the filter
/// that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WickConstants {
    pub c: f64,
    pub provenance: String,
}

impl WickConstants {
    /// Variance at a site of `F⁻¹[m·F ξ]` for white noise `ξ`:
    /// `(1/vol)·Σ_k m(k)²`, with `mult` in half-spectrum layout.
    pub fn from_multiplier(grid: &Grid, mult: &[f64], provenance: impl Into<String>) -> Self {
        let hs = grid.half_spectrum();
        let sum: f64 = mult
            .iter()
            .zip(&hs.weight)
            .map(|(m, w)| w * m * m)
            .sum();
        Self {
            c: sum / grid.volume(),
            provenance: provenance.into(),
        }
    }

    pub fn check_provenance(&self, expected: &str) -> Result<()> {
        if self.provenance == expected {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "Wick constant built for '{}' used with '{}'",
                self.provenance, expected
            )))
        }
    }
}

/// Provenance key of `(−Δ + m²)^{−1}∘𝒜` on `grid`.
pub fn provenance_key(op: &RegularizationOp, grid: &Grid, mass2: f64) -> String {
    let dims: Vec<String> = grid
        .axes()
        .iter()
        .map(|a| format!("{}@{}", a.points, a.extent))
        .collect();
    format!(
        "green(m2={mass2})∘{}|{}",
        serde_json::to_string(op).unwrap_or_default(),
        dims.join("x")
    )
}

/// Multiplier of `(−Δ + m²)^{−1}∘𝒜` in half-spectrum layout.
pub fn filtered_multiplier(op: &RegularizationOp, grid: &Grid, mass2: f64) -> Result<Vec<f64>> {
    let green = GreenOp::new(mass2, 1)?.multiplier(grid);
    Ok(op
        .multiplier(grid)?
        .iter()
        .zip(&green)
        .map(|(a, g)| a * g)
        .collect())
}

/// Pointwise variance of `(−Δ + m²)^{−1}(𝒜ξ)`.
pub fn wick_constant(op: &RegularizationOp, grid: &Grid, mass2: f64) -> Result<WickConstants> {
    let mult = filtered_multiplier(op, grid, mass2)?;
    Ok(WickConstants::from_multiplier(
        grid,
        &mult,
        provenance_key(op, grid, mass2),
    ))
}

/// Density of `exp(αX − α²c/2)` per site.
#[derive(Clone, Debug)]
pub struct GmcMeasure {
    pub density: RealField,
    pub log_density: Vec<f64>,
    pub alpha: f64,
    pub c: f64,
    /// Sites whose log-density exceeded [`LOG_DENSITY_CAP`].
    pub capped: usize,
}

impl GmcMeasure {
    pub fn grid(&self) -> &Arc<Grid> {
        self.density.grid()
    }

    /// Total mass `Σ density·cellvol`.
    pub fn total_mass(&self) -> f64 {
        self.density.integral()
    }
}

pub fn wick_exp(x: &RealField, alpha: f64, c: &WickConstants) -> GmcMeasure {
    let shift = 0.5 * alpha * alpha * c.c;
    let mut capped = 0;
    let log_density: Vec<f64> = x.values().iter().map(|&v| alpha * v - shift).collect();
    let dens = log_density
        .iter()
        .map(|&l| {
            if l > LOG_DENSITY_CAP {
                capped += 1;
                LOG_DENSITY_CAP.exp()
            } else {
                l.exp()
            }
        })
        .collect();
    GmcMeasure {
        density: RealField::from_vec_unchecked(x.grid(), dens),
        log_density,
        alpha,
        c: c.c,
        capped,
    }
}

/// `H_n(x; c)`, the monic Hermite polynomial orthogonal under `N(0, c)`.
pub fn hermite(n: usize, x: f64, c: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * c * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `H_0, …, H_n` at `x`.
pub fn hermite_all(n: usize, x: f64, c: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for k in 1..n {
        out.push(x * out[k] - k as f64 * c * out[k - 1]);
    }
    out
}

pub fn wick_power(x: &RealField, n: usize, c: &WickConstants) -> RealField {
    x.map(|v| hermite(n, v, c.c))
}

/// Volume of the unit ball in dimension `d ≤ 4`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        4 => PI * PI / 2.0,
        _ => unreachable!("grids have at most 4 axes"),
    }
}

/// Offsets of the lattice sites within periodic distance `r` of the origin,
/// as an indicator field.
pub fn ball_indicator(grid: &Arc<Grid>, r: f64) -> RealField {
    let r2 = r * r;
    RealField::from_fn(grid, |c| {
        if c.iter().map(|v| v * v).sum::<f64>() <= r2 {
            1.0
        } else {
            0.0
        }
    })
}

fn check_radius(grid: &Grid, r: f64) -> Result<()> {
    let max = grid.axes().iter().map(|a| a.extent).fold(f64::INFINITY, f64::min) / 2.0;
    let h = grid.axes().iter().map(|a| a.spacing()).fold(f64::INFINITY, f64::min);
    if !(r < max) {
        return Err(Error::InvalidParameter(format!(
            "ball radius {r} must be below half the smallest extent ({max})"
        )));
    }
    if r < h {
        return Err(Error::InvalidParameter(format!(
            "ball radius {r} is below the lattice spacing {h}: the ball holds one site"
        )));
    }
    Ok(())
}

/// `∫_{B(center, r)} dμ` over the periodic lattice.
pub fn ball_mass(mu: &GmcMeasure, center: &[usize], r: f64) -> Result<f64> {
    let g = mu.grid();
    check_radius(g, r)?;
    let r2 = r * r;
    let mut idx = vec![0; g.ndim()];
    let mut sum = 0.0;
    for (flat, &d) in mu.density.values().iter().enumerate() {
        g.unflatten(flat, &mut idx);
        let dist2: f64 = idx
            .iter()
            .zip(center)
            .zip(g.axes())
            .map(|((&i, &c), a)| {
                let n = a.points as i64;
                let off = (i as i64 - c as i64).rem_euclid(n) as usize;
                a.coord(off).powi(2)
            })
            .sum();
        if dist2 <= r2 {
            sum += d;
        }
    }
    Ok(sum * g.cell_volume())
}

/// Ball masses at every center, by FFT convolution with the ball indicator.
/// Returns `(log_scale, masses)` with true masses `exp(log_scale)·masses`.
pub fn ball_masses_all(mu: &GmcMeasure, r: f64) -> Result<(f64, Vec<f64>)> {
    let g = mu.grid();
    check_radius(g, r)?;
    let shift = mu.log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = mu.log_density.iter().map(|l| (l - shift).exp()).collect();
    let ind = ball_indicator(g, r);
    let eng = g.engine();
    // the ball is symmetric under z → −z, so its transform is real
    let kernel: Vec<f64> = eng
        .forward_half(ind.values())
        .iter()
        .map(|c| c.re * g.cell_volume())
        .collect();
    let masses = eng
        .apply_multiplier(&scaled, &kernel)
        .into_iter()
        .map(|m| m.max(0.0))
        .collect();
    Ok((shift, masses))
}

/// `ζ(p) = D·p − α²p(p−1)/(4π)²` with `D` the lattice dimension.
pub fn zeta_theory(alpha: f64, p: f64, dim: usize) -> f64 {
    dim as f64 * p - alpha * alpha * p * (p - 1.0) / (16.0 * PI * PI)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingOptions {
    pub bootstrap: usize,
    pub seed: u64,
    /// Minimum `r_max / r_min` accepted for a fit.
    pub min_span: f64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            bootstrap: 1000,
            seed: 0,
            min_span: 4.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub r: f64,
    /// Radius of the continuum ball with the lattice ball's volume.
    pub r_eff: f64,
    pub p: f64,
    pub e_hat: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub p: f64,
    pub zeta_hat: f64,
    pub zeta_theory: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub rows: Vec<ScalingRow>,
}

impl ScalingFit {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,p,E_hat,stderr\n");
        for row in &self.rows {
            s.push_str(&format!("{},{},{:e},{:e}\n", row.r, row.p, row.e_hat, row.stderr));
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "zeta_hat": self.zeta_hat,
            "zeta_theory": self.zeta_theory,
            "stderr": self.stderr,
            "alpha": self.alpha,
            "p": self.p,
            "n_samples": self.n_samples,
        })
    }
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `log(mean_i exp(v_i))`, stable.
fn log_mean_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + (x - m).exp(), n + 1));
    m + (s / n as f64).ln()
}

/// Per-sample `log mean_centers mass^p` for each radius.
pub fn log_moments(mu: &GmcMeasure, radii: &[f64], p: f64) -> Result<Vec<f64>> {
    radii
        .iter()
        .map(|&r| {
            let (shift, m) = ball_masses_all(mu, r)?;
            let logs = m.iter().map(move |&v| p * (v.ln() + shift));
            Ok(log_mean_exp(logs))
        })
        .collect()
}

/// Least-squares slope of `log E[mass^p]` against `log r_eff`, with a
/// bootstrap over samples for the standard error.
///
/// `per_sample[s][j]` is sample `s`'s `log mean_centers mass^p` at `radii[j]`
/// (see [`log_moments`]). Averaging over centers is legitimate by
/// translation invariance.
pub fn fit_moment_scaling(
    grid: &Grid,
    alpha: f64,
    per_sample: &[Vec<f64>],
    radii: &[f64],
    p: f64,
    opts: &ScalingOptions,
) -> Result<ScalingFit> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidParameter(format!("p must lie in (1, 2), got {p}")));
    }
    if radii.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 radii, got {}",
            radii.len()
        )));
    }
    if per_sample.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples, got {}",
            per_sample.len()
        )));
    }
    let (rmin, rmax) = radii
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    if rmax / rmin < opts.min_span {
        return Err(Error::InsufficientData(format!(
            "radii span a factor {:.2}, below the required {}",
            rmax / rmin,
            opts.min_span
        )));
    }
    let dim = grid.ndim();
    let cv = grid.cell_volume();
    let probe = Grid::from_axes(grid.axes().to_vec(), grid.x_axes())?;
    let r_eff: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let count: f64 = ball_indicator(&probe, r).values().iter().sum();
            (count * cv / unit_ball_volume(dim)).powf(1.0 / dim as f64)
        })
        .collect();
    let n = per_sample.len();
    let nr = radii.len();
    let column = |j: usize, pick: &dyn Fn(usize) -> usize| {
        log_mean_exp((0..n).map(|s| per_sample[pick(s)][j]).collect::<Vec<_>>().into_iter())
    };
    let log_e: Vec<f64> = (0..nr).map(|j| column(j, &|s| s)).collect();
    let log_r: Vec<f64> = r_eff.iter().map(|r| r.ln()).collect();
    let zeta_hat = ols_slope(&log_r, &log_e);

    let mut rng = stream(opts.seed, 0x6d6f_6d65);
    let mut slopes = Vec::with_capacity(opts.bootstrap);
    for _ in 0..opts.bootstrap {
        let pick: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let y: Vec<f64> = (0..nr).map(|j| column(j, &|s| pick[s])).collect();
        slopes.push(ols_slope(&log_r, &y));
    }
    let stderr = if slopes.len() > 1 {
        let m = slopes.iter().sum::<f64>() / slopes.len() as f64;
        (slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (slopes.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };

    let rows = (0..nr)
        .map(|j| {
            let e_hat = log_e[j].exp();
            let vals: Vec<f64> = per_sample.iter().map(|s| (s[j] - log_e[j]).exp()).collect();
            let var = vals.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / (n - 1) as f64;
            ScalingRow {
                r: radii[j],
                r_eff: r_eff[j],
                p,
                e_hat,
                stderr: e_hat * (var / n as f64).sqrt(),
            }
        })
        .collect();
    Ok(ScalingFit {
        alpha,
        p,
        zeta_hat,
        zeta_theory: zeta_theory(alpha, p, dim),
        stderr,
        n_samples: n,
        rows,
    })
}

/// Convenience wrapper over [`log_moments`] and [`fit_moment_scaling`].
pub fn gmc_moment_scaling(
    samples: &[GmcMeasure],
    radii: &[f64],
    p: f64,
    opts: &ScalingOptions,
) -> Result<ScalingFit> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no GMC samples".into()))?;
    let per_sample = samples
        .iter()
        .map(|mu| log_moments(mu, radii, p))
        .collect::<Result<Vec<_>>>()?;
    fit_moment_scaling(first.grid(), first.alpha, &per_sample, radii, p, opts)
}
