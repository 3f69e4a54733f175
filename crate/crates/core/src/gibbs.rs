//! Reference Gibbs measures: the finite-dimensional density with quadrature,
//! and field-level measures sampled by preconditioned Crank–Nicolson.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Grid, RealField};
use crate::model::Potential;
use crate::rng::stream;
use crate::wick::hermite;

/// `(1/vol_x)·Σ_{k_x} (|k_x|² + μ)^{−2}`: the pointwise variance of
/// `(−Δ_x + μ)^{−1}ξ` on a 2-D x-grid. Tends to `1/(4πμ)` as `L, N → ∞`.
pub fn lattice_slice_variance(grid: &Grid, mu: f64) -> f64 {
    let hs = grid.half_spectrum();
    let s: f64 = hs.k2.iter().zip(&hs.weight).map(|(k2, w)| w * (k2 + mu).powi(-2)).sum();
    s / grid.volume()
}

pub type Vn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `exp(−(½ Σ a_k y_k² + b·V_n(y))) / Z`.
///
/// As printed, `a_k = 4π(m² + λ_k)/σ_k²` and `b = 4π`.
#[derive(Clone)]
pub struct KappaHatDensity {
    pub precisions: Vec<f64>,
    pub coupling: f64,
    vn: Vn,
    log_norm: Option<f64>,
}

impl std::fmt::Debug for KappaHatDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KappaHatDensity")
            .field("precisions", &self.precisions)
            .field("coupling", &self.coupling)
            .field("log_norm", &self.log_norm)
            .finish()
    }
}

/// Absolute tolerance of the normalizing quadrature.
pub const QUAD_TOL: f64 = 1e-12;

impl KappaHatDensity {
    /// The printed density for masses `m² + λ_k` and multipliers `σ_k`.
    pub fn printed(masses: &[f64], sigmas: &[f64], vn: Vn) -> Result<Self> {
        if masses.len() != sigmas.len() || masses.is_empty() {
            return Err(Error::ShapeMismatch { expected: masses.len(), found: sigmas.len() });
        }
        let precisions = masses.iter().zip(sigmas).map(|(m, s)| 4.0 * PI * m / (s * s)).collect();
        Self::new(precisions, 4.0 * PI, vn)
    }

    pub fn new(precisions: Vec<f64>, coupling: f64, vn: Vn) -> Result<Self> {
        if let Some(a) = precisions.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(format!("precision must be positive, got {a}")));
        }
        let mut k = Self { precisions, coupling, vn, log_norm: None };
        if k.dim() <= 2 {
            k.log_norm = Some(k.compute_log_norm(QUAD_TOL)?);
        }
        Ok(k)
    }

    /// Single mode with potential `V`, `V_1 = V`.
    pub fn single(precision: f64, coupling: f64, potential: Potential) -> Result<Self> {
        Self::new(vec![precision], coupling, Arc::new(move |y: &[f64]| potential.value(y[0])))
    }

    pub fn dim(&self) -> usize {
        self.precisions.len()
    }

    /// Unnormalized log-density.
    pub fn log_unnormalized(&self, y: &[f64]) -> f64 {
        let quad: f64 = self.precisions.iter().zip(y).map(|(a, v)| a * v * v).sum();
        -(0.5 * quad + self.coupling * (self.vn)(y))
    }

    /// Normalized log-density; `None` when `n > 2` (no normalizer).
    pub fn log_density(&self, y: &[f64]) -> Option<f64> {
        self.log_norm.map(|z| self.log_unnormalized(y) - z)
    }

    pub fn log_norm(&self) -> Option<f64> {
        self.log_norm
    }

    /// Peak estimate and per-axis half-width outside which the density is
    /// below `e^{−60}` of the peak (uses `V ≥ 0`).
    fn window(&self) -> (f64, Vec<f64>) {
        let n = self.dim();
        let mut m = self.log_unnormalized(&vec![0.0; n]);
        // coarse probe along each axis for potentials not minimal at 0
        for k in 0..n {
            let r = (2.0 * 60.0 / self.precisions[k]).sqrt();
            for i in 0..=200 {
                let mut y = vec![0.0; n];
                y[k] = -r + 2.0 * r * i as f64 / 200.0;
                m = m.max(self.log_unnormalized(&y));
            }
        }
        let half = self.precisions.iter().map(|a| (2.0 * (60.0 - m.min(0.0)) / a).sqrt()).collect();
        (m, half)
    }

    fn compute_log_norm(&self, tol: f64) -> Result<f64> {
        let (m, half) = self.window();
        let z = match self.dim() {
            1 => gauss_kronrod(&|y| (self.log_unnormalized(&[y]) - m).exp(), -half[0], half[0], tol),
            2 => gauss_kronrod(
                &|y1| {
                    gauss_kronrod(&|y2| (self.log_unnormalized(&[y1, y2]) - m).exp(), -half[1], half[1], tol)
                },
                -half[0],
                half[0],
                tol,
            ),
            _ => unreachable!(),
        };
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidParameter("density is not normalizable".into()));
        }
        Ok(m + z.ln())
    }

    /// Normalizer recomputed at a different quadrature tolerance.
    pub fn log_norm_at(&self, tol: f64) -> Result<f64> {
        self.compute_log_norm(tol)
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) on `[a, b]` to absolute tolerance `tol`.
pub fn gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        let (v, err) = whole;
        if err <= tol || depth >= 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        let l = gk15(f, a, m);
        let r = gk15(f, m, b);
        rec(f, a, m, 0.5 * tol, l, depth + 1) + rec(f, m, b, 0.5 * tol, r, depth + 1)
    }
    // a few initial panels so narrow peaks are not missed
    let panels = 16;
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * w, a + (i + 1) as f64 * w);
            rec(f, x0, x1, tol / panels as f64, gk15(f, x0, x1), 0)
        })
        .sum()
}

/// Expectations and CDF of a one-mode density.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadratureReference {
    /// `E[y^j]`, `j = 1..=4`.
    pub moments: [f64; 4],
    pub cdf_y: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl QuadratureReference {
    /// CDF by linear interpolation on the table.
    pub fn cdf_at(&self, y: f64) -> f64 {
        let ys = &self.cdf_y;
        if y <= ys[0] {
            return 0.0;
        }
        if y >= ys[ys.len() - 1] {
            return 1.0;
        }
        let i = ys.partition_point(|&v| v <= y) - 1;
        let t = (y - ys[i]) / (ys[i + 1] - ys[i]);
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }
}

/// `E[F]` under a one-mode density.
pub fn expectation(k: &KappaHatDensity, f: &dyn Fn(f64) -> f64) -> Result<f64> {
    if k.dim() != 1 {
        return Err(Error::InvalidParameter("quadrature reference needs n = 1".into()));
    }
    let ln = k.log_norm.expect("n = 1 is normalized");
    let (_, half) = k.window();
    let v = gauss_kronrod(&|y| f(y) * (k.log_unnormalized(&[y]) - ln).exp(), -half[0], half[0], 1e-13);
    if !v.is_finite() {
        return Err(Error::InvalidParameter("observable is not integrable".into()));
    }
    Ok(v)
}

/// Moments 1–4 and a CDF table with `points` nodes.
pub fn quadrature_reference(k: &KappaHatDensity, points: usize) -> Result<QuadratureReference> {
    if k.dim() != 1 {
        return Err(Error::InvalidParameter("quadrature reference needs n = 1".into()));
    }
    let mut moments = [0.0; 4];
    for (j, m) in moments.iter_mut().enumerate() {
        *m = expectation(k, &|y| y.powi(j as i32 + 1))?;
    }
    let ln = k.log_norm.expect("n = 1 is normalized");
    let (_, half) = k.window();
    let ys: Vec<f64> = (0..points).map(|i| -half[0] + 2.0 * half[0] * i as f64 / (points - 1) as f64).collect();
    let dens = |y: f64| (k.log_unnormalized(&[y]) - ln).exp();
    let mut cdf = Vec::with_capacity(points);
    let mut acc = 0.0;
    cdf.push(0.0);
    for w in ys.windows(2) {
        acc += gauss_kronrod(&dens, w[0], w[1], 1e-14);
        cdf.push(acc);
    }
    Ok(QuadratureReference { moments, cdf_y: ys, cdf })
}

/// Centered Gaussian reference on the internal directions.
#[derive(Clone, Debug)]
pub enum GaussianReference {
    /// Independent modes with the given variances.
    Modes { variances: Vec<f64> },
    /// Stationary field on a z-grid; `variances` are per orthonormal Fourier
    /// mode in half-spectrum layout.
    Field { grid: Arc<Grid>, variances: Vec<f64> },
}

impl GaussianReference {
    /// Per-mode variances `σ_k²/(4π(λ_k + m²))` on a z-grid, with
    /// `λ_k = |k_z|²` and `σ` given per half-spectrum slot.
    pub fn continuum(grid: &Arc<Grid>, mass2: f64, sigma: &[f64]) -> Self {
        let hs = grid.half_spectrum();
        let variances = hs.k2.iter().zip(sigma).map(|(l, s)| s * s / (4.0 * PI * (l + mass2))).collect();
        Self::Field { grid: grid.clone(), variances }
    }

    /// Lattice-exact slice variances: `σ_k²·(1/vol_x)Σ_{k_x}(|k_x|² + λ_k + m²)^{−2}`.
    pub fn lattice(z_grid: &Arc<Grid>, x_grid: &Grid, mass2: f64, sigma: &[f64]) -> Self {
        let hs = z_grid.half_spectrum();
        let variances = hs
            .k2
            .iter()
            .zip(sigma)
            .map(|(l, s)| s * s * lattice_slice_variance(x_grid, l + mass2))
            .collect();
        Self::Field { grid: z_grid.clone(), variances }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Modes { variances } => variances.len(),
            Self::Field { grid, .. } => grid.len(),
        }
    }

    /// Pointwise variance of the field (sum of mode variances over volume).
    pub fn pointwise_variance(&self) -> f64 {
        match self {
            Self::Modes { variances } => variances.iter().sum(),
            Self::Field { grid, variances } => {
                let hs = grid.half_spectrum();
                variances.iter().zip(&hs.weight).map(|(v, w)| v * w).sum::<f64>() / grid.volume()
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Self::Modes { variances } => variances
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v.sqrt() * z
                })
                .collect(),
            Self::Field { grid, variances } => {
                let sd = grid.cell_volume().sqrt().recip();
                let white: Vec<f64> = (0..grid.len())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * sd
                    })
                    .collect();
                let m: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
                grid.engine().apply_multiplier(&white, &m)
            }
        }
    }
}

/// Non-Gaussian log-likelihood relative to the reference.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    Zero,
    /// `−b·Σ_z g(z)V(ω(z))·cellvol` (for modes, `−b·V(ω_0)`).
    Potential { potential: Potential, coupling: f64, g: Vec<f64> },
    /// `−b·Σ g·H_{2n}(ω; c)/(2n)·cellvol`.
    WickPower { half_degree: u32, c: f64, coupling: f64, g: Vec<f64> },
    /// `−b·Σ g·exp(αω − α²c/2)·cellvol`.
    WickExp { alpha: f64, c: f64, coupling: f64, g: Vec<f64> },
}

impl Likelihood {
    pub fn eval(&self, omega: &[f64], cell: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Potential { potential, coupling, g } => {
                let s: f64 = if g.is_empty() {
                    potential.value(omega[0])
                } else {
                    omega.iter().zip(g).map(|(w, gv)| gv * potential.value(*w)).sum::<f64>() * cell
                };
                -coupling * s
            }
            Self::WickPower { half_degree, c, coupling, g } => {
                let d = 2 * *half_degree as usize;
                let s: f64 = omega.iter().zip(g).map(|(w, gv)| gv * hermite(d, *w, *c)).sum::<f64>();
                -coupling * s * cell / d as f64
            }
            Self::WickExp { alpha, c, coupling, g } => {
                let shift = 0.5 * alpha * alpha * c;
                let s: f64 = omega.iter().zip(g).map(|(w, gv)| gv * (alpha * w - shift).exp()).sum::<f64>();
                -coupling * s * cell
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcnSettings {
    pub chains: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    /// Initial step; tuned during burn-in toward `target_acceptance`.
    pub rho: f64,
    pub target_acceptance: f64,
    pub seed: u64,
}

impl Default for PcnSettings {
    fn default() -> Self {
        Self { chains: 4, burn_in: 2000, samples: 5000, thin: 5, rho: 0.5, target_acceptance: 0.3, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct McmcChain {
    pub samples: Vec<Vec<f64>>,
    pub rho: f64,
    pub acceptance: f64,
    pub chain_index: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub acceptance: Vec<f64>,
    pub rho: Vec<f64>,
    /// Effective sample size of the tracked observable, summed over chains.
    pub ess: f64,
    pub r_hat: f64,
}

/// pCN chains targeting `exp(ℓ(ω)) dμ(ω)`; chains run concurrently.
pub fn sample_kappa_pcn(
    reference: &GaussianReference,
    likelihood: &Likelihood,
    settings: &PcnSettings,
) -> Result<Vec<McmcChain>> {
    if !(settings.rho > 0.0 && settings.rho < 1.0) {
        return Err(Error::InvalidParameter("pCN step must lie in (0, 1)".into()));
    }
    let cell = match reference {
        GaussianReference::Field { grid, .. } => grid.cell_volume(),
        GaussianReference::Modes { .. } => 1.0,
    };
    (0..settings.chains as u64)
        .into_par_iter()
        .map(|ci| {
            let mut rng = stream(settings.seed, ci);
            let mut omega = reference.sample(&mut rng);
            let mut ll = likelihood.eval(&omega, cell);
            if ll == f64::NEG_INFINITY || ll.is_nan() {
                return Err(Error::InvalidParameter("degenerate likelihood at the initial state".into()));
            }
            let mut rho = settings.rho;
            let mut accepted = 0usize;
            let mut tried = 0usize;
            let mut samples = Vec::with_capacity(settings.samples);
            let total = settings.burn_in + settings.samples * settings.thin.max(1);
            for step in 0..total {
                let xi = reference.sample(&mut rng);
                let c = (1.0 - rho * rho).sqrt();
                let prop: Vec<f64> = omega.iter().zip(&xi).map(|(w, x)| c * w + rho * x).collect();
                let lp = likelihood.eval(&prop, cell);
                let u: f64 = rng.random();
                tried += 1;
                if lp.is_finite() && u.ln() < lp - ll {
                    omega = prop;
                    ll = lp;
                    accepted += 1;
                }
                if step < settings.burn_in && tried == 100 {
                    // Robbins–Monro style adjustment of ρ in logit space
                    let rate = accepted as f64 / tried as f64;
                    let logit = (rho / (1.0 - rho)).ln() + 2.0 * (rate - settings.target_acceptance);
                    rho = (1.0 / (1.0 + (-logit).exp())).clamp(1e-4, 0.999);
                    accepted = 0;
                    tried = 0;
                }
                if step + 1 == settings.burn_in {
                    accepted = 0;
                    tried = 0;
                }
                if step >= settings.burn_in && (step - settings.burn_in) % settings.thin.max(1) == 0 {
                    samples.push(omega.clone());
                }
            }
            Ok(McmcChain {
                samples,
                rho,
                acceptance: accepted as f64 / tried.max(1) as f64,
                chain_index: ci,
            })
        })
        .collect()
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * var)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau
}

/// Split-R̂ over chains of a scalar observable.
pub fn r_hat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[h..2 * h]]
        })
        .collect();
    let m = halves.len() as f64;
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    if n < 2.0 || m < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Diagnostics for the observable `obs` evaluated on every stored sample.
pub fn diagnose(chains: &[McmcChain], obs: impl Fn(&[f64]) -> f64) -> ChainDiagnostics {
    let series: Vec<Vec<f64>> = chains.iter().map(|c| c.samples.iter().map(|s| obs(s)).collect()).collect();
    ChainDiagnostics {
        acceptance: chains.iter().map(|c| c.acceptance).collect(),
        rho: chains.iter().map(|c| c.rho).collect(),
        ess: series.iter().map(|s| effective_sample_size(s)).sum(),
        r_hat: r_hat(&series),
    }
}

/// Mean of `obs` over all chains with a standard error from the ESS.
pub fn chain_mean(chains: &[McmcChain], obs: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let vals: Vec<f64> = chains.iter().flat_map(|c| c.samples.iter().map(|s| obs(s))).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ess: f64 = chains
        .iter()
        .map(|c| effective_sample_size(&c.samples.iter().map(|s| obs(s)).collect::<Vec<_>>()))
        .sum();
    (mean, (var / ess.max(1.0)).sqrt())
}

/// Helper: the ω-field of a sample on the reference grid.
pub fn as_field(reference: &GaussianReference, omega: Vec<f64>) -> Result<RealField> {
    match reference {
        GaussianReference::Field { grid, .. } => RealField::from_vec(grid, omega),
        GaussianReference::Modes { .. } => Err(Error::InvalidParameter("mode reference has no grid".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartic(a: f64, b: f64) -> KappaHatDensity {
        KappaHatDensity::single(a, b, Potential::Poly { n: 2 }).unwrap()
    }

    #[test]
    fn free_density_is_the_printed_gaussian() {
        let k = KappaHatDensity::printed(&[1.0], &[1.0], Arc::new(|_: &[f64]| 0.0)).unwrap();
        // N(0, 1/(4π)) at 0: √(4π/(2π)) = √2
        let want = 2f64.sqrt().ln();
        assert!((k.log_density(&[0.0]).unwrap() - want).abs() < 1e-9);
        let r = quadrature_reference(&k, 801).unwrap();
        assert!((r.moments[1] - 1.0 / (4.0 * PI)).abs() < 1e-10);
        assert!(r.moments[0].abs() < 1e-12);
        assert!((expectation(&k, &|_| 1.0).unwrap() - 1.0).abs() < 1e-10);
        assert!((r.cdf_at(0.0) - 0.5).abs() < 1e-8);
        // σ and λ enter through σ²/(4π(m² + λ))
        let k2 = KappaHatDensity::printed(&[2.5], &[1.5], Arc::new(|_: &[f64]| 0.0)).unwrap();
        let m2 = expectation(&k2, &|y| y * y).unwrap();
        assert!((m2 - 2.25 / (4.0 * PI * 2.5)).abs() < 1e-10);
    }

    #[test]
    fn quartic_fixtures() {
        let k = quartic(4.0 * PI, 4.0 * PI);
        assert_eq!(k.log_density(&[0.7]), k.log_density(&[-0.7]));
        let d = k.log_density(&[0.0]).unwrap() - k.log_density(&[1.0]).unwrap();
        assert!((d - 4.0 * PI * 0.75).abs() < 1e-12);
        let r = quadrature_reference(&k, 801).unwrap();
        // frozen from an independent scipy quad evaluation
        assert!((r.moments[1] - QUARTIC_SECOND_MOMENT).abs() < 1e-8, "{:.12}", r.moments[1]);
        assert!(r.moments[1] < 1.0 / (4.0 * PI));
    }

    /// `E[y²]` under `exp(−4π(y²/2 + y⁴/4))`.
    const QUARTIC_SECOND_MOMENT: f64 = 0.067_136_074_126_815;

    #[test]
    fn normalizer_is_mesh_stable() {
        for k in [quartic(4.0 * PI, 4.0 * PI), quartic(3.0, 0.5)] {
            let a = k.log_norm_at(1e-10).unwrap();
            let b = k.log_norm_at(1e-14).unwrap();
            assert!(((a - b) / b.abs().max(1.0)).abs() < 1e-7);
        }
        let k2 = KappaHatDensity::new(
            vec![4.0 * PI, 8.0 * PI],
            4.0 * PI,
            Arc::new(|y: &[f64]| 0.25 * (y[0] + y[1]).powi(4)),
        )
        .unwrap();
        let a = k2.log_norm_at(1e-9).unwrap();
        let b = k2.log_norm().unwrap();
        assert!((a - b).abs() < 1e-7 * b.abs().max(1.0));
        // the free two-mode normalizer is a product of Gaussian ones
        let g2 = KappaHatDensity::new(vec![2.0, 5.0], 1.0, Arc::new(|_: &[f64]| 0.0)).unwrap();
        let want = 0.5 * (2.0 * PI / 2.0f64).ln() + 0.5 * (2.0 * PI / 5.0f64).ln();
        assert!((g2.log_norm().unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn free_pcn_is_an_exact_sampler() {
        let z = Grid::internal(&[(2.0, 8), (2.0, 8)]).unwrap();
        let x = Grid::new((16.0, 32), &[]).unwrap();
        let sigma = vec![1.0; z.half_spectrum().len()];
        let reference = GaussianReference::lattice(&z, &x, 1.0, &sigma);
        let settings = PcnSettings { chains: 2, burn_in: 100, samples: 2000, thin: 1, ..Default::default() };
        let chains = sample_kappa_pcn(&reference, &Likelihood::Zero, &settings).unwrap();
        assert!(chains.iter().all(|c| c.acceptance == 1.0));
        let pv = reference.pointwise_variance();
        let (m, se) = chain_mean(&chains, |w| w[0] * w[0]);
        assert!((m - pv).abs() < 4.0 * se, "{m} vs {pv} ± {se}");
        // g scaled by 0 is also the reference
        let lik = Likelihood::Potential { potential: Potential::Poly { n: 2 }, coupling: 4.0 * PI, g: vec![0.0; z.len()] };
        let chains = sample_kappa_pcn(&reference, &lik, &settings).unwrap();
        assert!(chains.iter().all(|c| c.acceptance == 1.0));
    }

    #[test]
    fn quartic_pcn_matches_quadrature() {
        let k = quartic(4.0 * PI, 4.0 * PI);
        let r = quadrature_reference(&k, 401).unwrap();
        let reference = GaussianReference::Modes { variances: vec![1.0 / (4.0 * PI)] };
        let lik = Likelihood::Potential { potential: Potential::Poly { n: 2 }, coupling: 4.0 * PI, g: vec![] };
        let settings = PcnSettings { chains: 4, burn_in: 2000, samples: 20_000, thin: 2, seed: 3, ..Default::default() };
        let chains = sample_kappa_pcn(&reference, &lik, &settings).unwrap();
        let d = diagnose(&chains, |w| w[0] * w[0]);
        // weak coupling saturates ρ: the independence proposal already mixes
        assert!(
            d.acceptance.iter().zip(&d.rho).all(|(&a, &r)| (0.15..=0.6).contains(&a) || r >= 0.999),
            "{:?} {:?}",
            d.acceptance,
            d.rho
        );
        assert!(d.r_hat < 1.05, "{}", d.r_hat);
        for (j, want) in r.moments.iter().enumerate().take(2) {
            let (m, se) = chain_mean(&chains, |w| w[0].powi(j as i32 + 1));
            assert!((m - want).abs() < 3.0 * se + 1e-12, "moment {}: {m} vs {want} ± {se}", j + 1);
        }
    }

    #[test]
    fn step_tuning_reaches_the_band() {
        let z = Grid::internal(&[(4.0, 16), (4.0, 16)]).unwrap();
        let sigma = vec![1.0; z.half_spectrum().len()];
        let reference = GaussianReference::continuum(&z, 1.0, &sigma);
        let lik = Likelihood::WickPower { half_degree: 2, c: reference.pointwise_variance(), coupling: 4000.0 * PI, g: vec![1.0; z.len()] };
        let s = PcnSettings { chains: 2, burn_in: 3000, samples: 500, thin: 1, seed: 4, ..Default::default() };
        let chains = sample_kappa_pcn(&reference, &lik, &s).unwrap();
        for c in &chains {
            assert!((0.15..=0.6).contains(&c.acceptance) && c.rho < 0.999, "{} {}", c.acceptance, c.rho);
        }
    }

    #[test]
    fn chains_are_reproducible() {
        let reference = GaussianReference::Modes { variances: vec![0.1, 0.2] };
        let lik = Likelihood::Potential { potential: Potential::Poly { n: 2 }, coupling: 1.0, g: vec![] };
        let s = PcnSettings { chains: 2, burn_in: 200, samples: 50, thin: 1, seed: 9, ..Default::default() };
        let a = sample_kappa_pcn(&reference, &lik, &s).unwrap();
        let b = sample_kappa_pcn(&reference, &lik, &s).unwrap();
        assert_eq!(a[1].samples, b[1].samples);
    }

    #[test]
    fn ess_of_iid_and_correlated_series() {
        let mut rng = stream(1, 0);
        let iid: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e = effective_sample_size(&iid);
        assert!(e > 3000.0 && e <= 4000.0 * 1.3, "{e}");
        let mut ar = vec![0.0f64; 4000];
        for i in 1..4000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            ar[i] = 0.9 * ar[i - 1] + z;
        }
        // AR(1) with φ = 0.9: τ = (1 + φ)/(1 − φ) = 19
        let e = effective_sample_size(&ar);
        assert!(e > 4000.0 / 40.0 && e < 4000.0 / 10.0, "{e}");
    }

    #[test]
    fn lattice_slice_variance_tends_to_continuum() {
        let gap = |l: f64, n: usize| {
            let g = Grid::new((l, n), &[]).unwrap();
            (lattice_slice_variance(&g, 1.0) * 4.0 * PI - 1.0).abs()
        };
        assert!(gap(32.0, 128) < gap(16.0, 32));
        assert!(gap(32.0, 128) < 0.01);
    }
}
