//! Nonlinear elliptic solvers.
//!
//! Every equation handled here has the form
//!
//! ```text
//! (−Δ + m² + λ_k) u_k + N_k(x, u(x)) = 0,    k = 1..n,
//! ```
//!
//! with a local nonlinearity `N` whose Jacobian becomes symmetric after
//! scaling row `k` by `w_k`. Convergence is measured on the fixed-point form
//! `F_k = u_k + (−Δ + m² + λ_k)^{−1} N_k(u)` in the sup norm.
//!
//! Newton steps solve `w(L + J)δ = −wLF` by conjugate gradients,
//! preconditioned with the shifted resolvent `(w(L + c))^{−1}`, `c` being the
//! site-averaged Jacobian diagonal.

use std::sync::Arc;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{fft_forward, fft_inverse, Grid, RealField, SpectralField};
use crate::model::{FProfile, GProfile, Potential};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Picard,
    DampedNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub method: Method,
    /// Initial damping for Newton, fixed relaxation for Picard.
    pub damping: f64,
    pub damping_floor: f64,
    /// Sup-norm tolerance on the fixed-point residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Abort when the iterate's sup norm exceeds this.
    pub divergence_cap: f64,
    pub cg_max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            method: Method::DampedNewton,
            damping: 1.0,
            damping_floor: 1.0 / 64.0,
            tolerance: 1e-10,
            max_iterations: 60,
            divergence_cap: 1e8,
            cg_max_iterations: 500,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("solver tolerance must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.damping_floor > 0.0 && self.damping_floor <= self.damping) {
            return Err(Error::InvalidParameter("damping floor must lie in (0, damping]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    pub damping: f64,
    pub cg_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub fields: Vec<RealField>,
    /// Sup norm of the fixed-point residual at the returned iterate.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `Some` for the exponential model: whether `α·φ̄ ≤ 1e-8` everywhere.
    pub sign_check: Option<bool>,
    pub trace: Vec<TraceRow>,
}

impl Solution {
    pub fn field(&self) -> &RealField {
        &self.fields[0]
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,residual,damping,cg_iterations\n");
        for r in &self.trace {
            s.push_str(&format!("{},{:e},{},{}\n", r.iteration, r.residual, r.damping, r.cg_iterations));
        }
        s
    }
}

/// Local nonlinearity `N_k(site, u)`.
pub trait Nonlinearity: Sync {
    fn components(&self) -> usize;
    /// Row scaling making `w_k ∂N_k/∂u_l` symmetric.
    fn weights(&self) -> Vec<f64> {
        vec![1.0; self.components()]
    }
    fn eval(&self, site: usize, u: &[f64], out: &mut [f64]);
    /// Row-major `n × n` Jacobian `∂N_k/∂u_l`.
    fn jacobian(&self, site: usize, u: &[f64], out: &mut [f64]);
}

/// The linear part `(−Δ + m² + λ_k)` on a common grid.
pub struct LinearPart {
    pub grid: Arc<Grid>,
    pub mass2: f64,
    pub lambdas: Vec<f64>,
}

impl LinearPart {
    fn symbol(&self, k: usize) -> Vec<f64> {
        let m = self.mass2 + self.lambdas[k];
        self.grid.half_spectrum().k2.iter().map(|&k2| k2 + m).collect()
    }
}

type Fields = Vec<Vec<f64>>;

fn sup(v: &Fields) -> f64 {
    v.iter().flatten().fold(0.0, |m, x: &f64| m.max(x.abs()))
}

fn dot(a: &Fields, b: &Fields) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).sum()
}

struct Engine<'a, N: Nonlinearity> {
    lin: &'a LinearPart,
    nl: &'a N,
    n: usize,
    sites: usize,
    w: Vec<f64>,
    /// `(k² + m² + λ_k)` per component, half-spectrum layout.
    symbols: Vec<Vec<f64>>,
}

impl<'a, N: Nonlinearity> Engine<'a, N> {
    fn new(lin: &'a LinearPart, nl: &'a N) -> Self {
        let n = nl.components();
        Self {
            lin,
            nl,
            n,
            sites: lin.grid.len(),
            w: nl.weights(),
            symbols: (0..n).map(|k| lin.symbol(k)).collect(),
        }
    }

    fn apply(&self, u: &[f64], mult: impl Fn(f64) -> f64, k: usize) -> Vec<f64> {
        let m: Vec<f64> = self.symbols[k].iter().map(|&s| mult(s)).collect();
        self.lin.grid.engine().apply_multiplier(u, &m)
    }

    fn nonlinear(&self, u: &Fields) -> Fields {
        let mut out = vec![vec![0.0; self.sites]; self.n];
        let mut us = vec![0.0; self.n];
        let mut ns = vec![0.0; self.n];
        for s in 0..self.sites {
            for k in 0..self.n {
                us[k] = u[k][s];
            }
            self.nl.eval(s, &us, &mut ns);
            for k in 0..self.n {
                out[k][s] = ns[k];
            }
        }
        out
    }

    /// Fixed-point residual `u + L⁻¹N(u)`.
    fn residual(&self, u: &Fields) -> Fields {
        let nu = self.nonlinear(u);
        (0..self.n)
            .map(|k| {
                let g = self.apply(&nu[k], |s| 1.0 / s, k);
                u[k].iter().zip(g).map(|(a, b)| a + b).collect()
            })
            .collect()
    }

    /// Scaled Jacobians `w_k ∂N_k/∂u_l` per site, flattened `[site][k][l]`.
    fn jacobians(&self, u: &Fields) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; self.sites * n * n];
        let mut us = vec![0.0; n];
        for s in 0..self.sites {
            for k in 0..n {
                us[k] = u[k][s];
            }
            let block = &mut out[s * n * n..(s + 1) * n * n];
            self.nl.jacobian(s, &us, block);
            for k in 0..n {
                for l in 0..n {
                    block[k * n + l] *= self.w[k];
                }
            }
        }
        out
    }

    /// PCG for `(wL + wJ)δ = b`. Returns `(δ, iterations)`.
    fn cg(&self, jac: &[f64], b: &Fields, rel_tol: f64, max_iter: usize) -> (Fields, usize) {
        let n = self.n;
        // shift c_k: mean of the scaled diagonal, divided back by w_k
        let shift: Vec<f64> = (0..n)
            .map(|k| {
                let sum: f64 = (0..self.sites).map(|s| jac[s * n * n + k * n + k]).sum();
                (sum / self.sites as f64 / self.w[k]).max(0.0)
            })
            .collect();
        let precond = |r: &Fields| -> Fields {
            (0..n)
                .map(|k| {
                    let (c, w) = (shift[k], self.w[k]);
                    self.apply(&r[k], |s| 1.0 / (w * (s + c)), k)
                })
                .collect()
        };
        // E = wJ − diag(w c), local
        let local = |p: &Fields| -> Fields {
            let mut out = vec![vec![0.0; self.sites]; n];
            for s in 0..self.sites {
                let block = &jac[s * n * n..(s + 1) * n * n];
                for k in 0..n {
                    let mut acc = -self.w[k] * shift[k] * p[k][s];
                    for l in 0..n {
                        acc += block[k * n + l] * p[l][s];
                    }
                    out[k][s] = acc;
                }
            }
            out
        };
        let precond_apply = |p: &Fields| -> Fields {
            (0..n)
                .map(|k| {
                    let (c, w) = (shift[k], self.w[k]);
                    self.apply(&p[k], |s| w * (s + c), k)
                })
                .collect()
        };

        let bnorm = dot(b, b).sqrt();
        let mut x = vec![vec![0.0; self.sites]; n];
        if bnorm == 0.0 {
            return (x, 0);
        }
        let mut r = b.clone();
        let mut z = precond(&r);
        let mut p = z.clone();
        // q = M p, maintained without extra spectral work
        let mut q = r.clone();
        let mut rz = dot(&r, &z);
        let mut it = 0;
        while it < max_iter {
            it += 1;
            let e = local(&p);
            let ap: Fields = q
                .iter()
                .zip(&e)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect();
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let step = rz / pap;
            for k in 0..n {
                for s in 0..self.sites {
                    x[k][s] += step * p[k][s];
                    r[k][s] -= step * ap[k][s];
                }
            }
            if dot(&r, &r).sqrt() <= rel_tol * bnorm {
                break;
            }
            z = precond(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                for s in 0..self.sites {
                    p[k][s] = z[k][s] + beta * p[k][s];
                    q[k][s] = r[k][s] + beta * q[k][s];
                }
            }
            if it % 50 == 0 {
                q = precond_apply(&p);
            }
        }
        (x, it)
    }

    fn solve(&self, init: Fields, settings: &SolverSettings) -> Result<(Fields, f64, usize, bool, Vec<TraceRow>)> {
        settings.validate()?;
        let mut u = init;
        let mut f = self.residual(&u);
        let mut res = sup(&f);
        let mut trace = vec![TraceRow { iteration: 0, residual: res, damping: 0.0, cg_iterations: 0 }];
        let mut iter = 0;
        while res > settings.tolerance && iter < settings.max_iterations {
            iter += 1;
            let (step, cg_iters) = match settings.method {
                Method::Picard => {
                    // u ← u − θF, i.e. relax toward −L⁻¹N(u)
                    let neg: Fields = f.iter().map(|c| c.iter().map(|v| -v).collect()).collect();
                    (neg, 0)
                }
                Method::DampedNewton => {
                    let jac = self.jacobians(&u);
                    // b = −w L F
                    let b: Fields = (0..self.n)
                        .map(|k| {
                            let w = self.w[k];
                            self.apply(&f[k], |s| -w * s, k)
                        })
                        .collect();
                    let forcing = res.clamp(1e-13, 1e-3);
                    self.cg(&jac, &b, forcing, settings.cg_max_iterations)
                }
            };
            let mut theta = settings.damping;
            loop {
                let cand: Fields = u
                    .iter()
                    .zip(&step)
                    .map(|(a, d)| a.iter().zip(d).map(|(x, y)| x + theta * y).collect())
                    .collect();
                let fc = self.residual(&cand);
                let rc = sup(&fc);
                let accept = settings.method == Method::Picard
                    || rc < res
                    || theta / 2.0 < settings.damping_floor;
                if accept && rc.is_finite() {
                    u = cand;
                    f = fc;
                    res = rc;
                    break;
                }
                if !rc.is_finite() && theta / 2.0 < settings.damping_floor {
                    return Err(Error::NotConverged(format!(
                        "non-finite residual at iteration {iter}"
                    )));
                }
                theta /= 2.0;
            }
            trace.push(TraceRow { iteration: iter, residual: res, damping: theta, cg_iterations: cg_iters });
            let size = sup(&u);
            if !(size <= settings.divergence_cap) {
                return Err(Error::NotConverged(format!(
                    "iterate sup norm {size:e} exceeded the divergence cap at iteration {iter}"
                )));
            }
        }
        let converged = res <= settings.tolerance;
        Ok((u, res, iter, converged, trace))
    }
}

fn run<N: Nonlinearity>(
    lin: &LinearPart,
    nl: &N,
    init: Option<&[RealField]>,
    settings: &SolverSettings,
) -> Result<Solution> {
    let engine = Engine::new(lin, nl);
    let start: Fields = match init {
        Some(fs) => {
            if fs.len() != engine.n {
                return Err(Error::ShapeMismatch { expected: engine.n, found: fs.len() });
            }
            fs.iter().map(|f| f.values().to_vec()).collect()
        }
        None => vec![vec![0.0; engine.sites]; engine.n],
    };
    let (u, residual, iterations, converged, trace) = engine.solve(start, settings)?;
    Ok(Solution {
        fields: u
            .into_iter()
            .map(|v| RealField::from_vec(&lin.grid, v))
            .collect::<Result<_>>()?,
        residual,
        iterations,
        converged,
        sign_check: None,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Galerkin system

/// Eigenfunctions of the internal operator evaluated at quadrature nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeBasis {
    /// One mode with eigenvalue `lambda`, eigenfunction 1 and unit weight, so
    /// `V_n = V`.
    Single { lambda: f64 },
    /// First `modes` real Fourier modes of `−d²/dz²` on a circle of length
    /// `extent`, weighted by `g`.
    Torus1d { extent: f64, modes: usize, g: GProfile },
}

/// Quadrature data for `V_n(y) = Σ_q ω_q V(Σ_k y_k e_k(z_q))`.
#[derive(Clone, Debug)]
pub struct ModeQuadrature {
    pub lambdas: Vec<f64>,
    /// `e_k(z_q)`, flattened `[q][k]`.
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ModeBasis {
    pub fn quadrature(&self) -> Result<ModeQuadrature> {
        match *self {
            Self::Single { lambda } => {
                if !(lambda >= 0.0) {
                    return Err(Error::InvalidParameter(format!("λ must be >= 0, got {lambda}")));
                }
                Ok(ModeQuadrature { lambdas: vec![lambda], values: vec![1.0], weights: vec![1.0] })
            }
            Self::Torus1d { extent, modes, g } => {
                if modes == 0 || !(extent > 0.0) {
                    return Err(Error::InvalidParameter("torus basis needs modes >= 1 and extent > 0".into()));
                }
                let tp = 2.0 * std::f64::consts::PI / extent;
                let mut lambdas = Vec::with_capacity(modes);
                let mut funcs: Vec<Box<dyn Fn(f64) -> f64>> = Vec::with_capacity(modes);
                let a0 = 1.0 / extent.sqrt();
                let a1 = (2.0 / extent).sqrt();
                for k in 0..modes {
                    let j = k.div_ceil(2) as f64;
                    lambdas.push((tp * j).powi(2));
                    if k == 0 {
                        funcs.push(Box::new(move |_| a0));
                    } else if k % 2 == 1 {
                        funcs.push(Box::new(move |z: f64| a1 * (tp * j * z).cos()));
                    } else {
                        funcs.push(Box::new(move |z: f64| a1 * (tp * j * z).sin()));
                    }
                }
                let q = (8 * modes + 8).max(32);
                let h = extent / q as f64;
                let mut values = Vec::with_capacity(q * modes);
                let mut weights = Vec::with_capacity(q);
                for i in 0..q {
                    // centred coordinates so that g is centred on z = 0
                    let z = if i < q / 2 { i as f64 * h } else { (i as f64 - q as f64) * h };
                    weights.push(h * g.value(z.abs()));
                    for e in &funcs {
                        values.push(e(z));
                    }
                }
                Ok(ModeQuadrature { lambdas, values, weights })
            }
        }
    }
}

/// Projected system over the 2-D x-plane.
#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    pub grid: Arc<Grid>,
    pub mass2: f64,
    pub sigmas: Vec<f64>,
    pub quad: ModeQuadrature,
    pub potential: Potential,
    pub f: FProfile,
    /// `f` sampled on the x-grid.
    pub f_values: Vec<f64>,
}

impl GalerkinSystem {
    pub fn new(
        grid: Arc<Grid>,
        mass2: f64,
        basis: &ModeBasis,
        sigmas: Vec<f64>,
        potential: Potential,
        f: FProfile,
    ) -> Result<Self> {
        if grid.x_axes() != 2 || !grid.z_axes().is_empty() {
            return Err(Error::InvalidGrid("the Galerkin system lives on a 2-D x-grid".into()));
        }
        if !(mass2 > 0.0) {
            return Err(Error::InvalidParameter(format!("m² must be positive, got {mass2}")));
        }
        let quad = basis.quadrature()?;
        if sigmas.len() != quad.lambdas.len() {
            return Err(Error::ShapeMismatch { expected: quad.lambdas.len(), found: sigmas.len() });
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::InvalidParameter(format!("σ must be positive, got {s}")));
        }
        let f_values = (0..grid.len())
            .map(|i| {
                let (x2, _) = grid.radius2_split(i);
                f.value(x2)
            })
            .collect();
        Ok(Self { grid, mass2, sigmas, quad, potential, f, f_values })
    }

    pub fn modes(&self) -> usize {
        self.sigmas.len()
    }

    fn node_arg(&self, q: usize, y: &[f64]) -> f64 {
        let n = self.modes();
        (0..n).map(|k| y[k] * self.quad.values[q * n + k]).sum()
    }

    /// `V_n(y)`.
    pub fn vn(&self, y: &[f64]) -> f64 {
        (0..self.quad.weights.len())
            .map(|q| self.quad.weights[q] * self.potential.value(self.node_arg(q, y)))
            .sum()
    }

    /// `∇V_n(y)`.
    pub fn vn_grad(&self, y: &[f64], out: &mut [f64]) {
        let n = self.modes();
        out.iter_mut().for_each(|v| *v = 0.0);
        for q in 0..self.quad.weights.len() {
            let d = self.quad.weights[q] * self.potential.d1(self.node_arg(q, y));
            for k in 0..n {
                out[k] += d * self.quad.values[q * n + k];
            }
        }
    }

    /// Hessian of `V_n`, row-major.
    pub fn vn_hess(&self, y: &[f64], out: &mut [f64]) {
        let n = self.modes();
        out.iter_mut().for_each(|v| *v = 0.0);
        for q in 0..self.quad.weights.len() {
            let d = self.quad.weights[q] * self.potential.d2(self.node_arg(q, y));
            for k in 0..n {
                for l in 0..n {
                    out[k * n + l] += d * self.quad.values[q * n + k] * self.quad.values[q * n + l];
                }
            }
        }
    }

    pub fn linear_part(&self) -> LinearPart {
        LinearPart { grid: self.grid.clone(), mass2: self.mass2, lambdas: self.quad.lambdas.clone() }
    }

    /// Independent 2-D white noises `ξᵏ` drawn from stream `(master, index)`.
    pub fn sample_noise(&self, master: u64, index: u64) -> Vec<RealField> {
        let mut rng = stream(master, index);
        let sd = self.grid.cell_volume().sqrt().recip();
        (0..self.modes())
            .map(|_| {
                let v = (0..self.grid.len())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * sd
                    })
                    .collect();
                RealField::from_vec_unchecked(&self.grid, v)
            })
            .collect()
    }

    /// `ξ̃ᵏ = σ_k (−Δ + m² + λ_k)^{−1} ξᵏ`.
    pub fn filtered_noise(&self, xi: &[RealField]) -> Vec<RealField> {
        let lin = self.linear_part();
        xi.iter()
            .enumerate()
            .map(|(k, x)| {
                let s = self.sigmas[k];
                let m: Vec<f64> = lin.symbol(k).iter().map(|v| s / v).collect();
                RealField::from_vec_unchecked(&self.grid, self.grid.engine().apply_multiplier(x.values(), &m))
            })
            .collect()
    }
}

struct GalerkinNl<'a> {
    sys: &'a GalerkinSystem,
    xi_tilde: Vec<&'a [f64]>,
}

impl Nonlinearity for GalerkinNl<'_> {
    fn components(&self) -> usize {
        self.sys.modes()
    }

    fn weights(&self) -> Vec<f64> {
        self.sys.sigmas.iter().map(|s| 1.0 / (s * s)).collect()
    }

    fn eval(&self, site: usize, u: &[f64], out: &mut [f64]) {
        let n = self.sys.modes();
        let y: Vec<f64> = (0..n).map(|k| self.xi_tilde[k][site] + u[k]).collect();
        self.sys.vn_grad(&y, out);
        let f = self.sys.f_values[site];
        for k in 0..n {
            out[k] *= self.sys.sigmas[k].powi(2) * f;
        }
    }

    fn jacobian(&self, site: usize, u: &[f64], out: &mut [f64]) {
        let n = self.sys.modes();
        let y: Vec<f64> = (0..n).map(|k| self.xi_tilde[k][site] + u[k]).collect();
        self.sys.vn_hess(&y, out);
        let f = self.sys.f_values[site];
        for k in 0..n {
            for l in 0..n {
                out[k * n + l] *= self.sys.sigmas[k].powi(2) * f;
            }
        }
    }
}

/// Solves for `ψ̄` given the filtered noise `ξ̃`; the full field is `ξ̃ + ψ̄`.
pub fn solve_galerkin(
    sys: &GalerkinSystem,
    xi_tilde: &[RealField],
    settings: &SolverSettings,
    init: Option<&[RealField]>,
) -> Result<Solution> {
    if xi_tilde.len() != sys.modes() {
        return Err(Error::ShapeMismatch { expected: sys.modes(), found: xi_tilde.len() });
    }
    let nl = GalerkinNl { sys, xi_tilde: xi_tilde.iter().map(|f| f.values()).collect() };
    run(&sys.linear_part(), &nl, init, settings)
}

// ---------------------------------------------------------------------------
// Exponential model

/// `G(x) = eˣ` for `x ≤ 0`, `2 − e^{−x}` above: C¹, increasing, bounded by 2.
pub fn truncation(x: f64) -> f64 {
    if x <= 0.0 {
        x.exp()
    } else {
        2.0 - (-x).exp()
    }
}

/// `G′(x) = e^{−|x|}`.
pub fn truncation_deriv(x: f64) -> f64 {
    (-x.abs()).exp()
}

/// Sign tolerance for `α·φ̄ ≤ tol`.
pub const SIGN_TOLERANCE: f64 = 1e-8;

struct ExpNl<'a> {
    alpha: f64,
    g_eta: &'a [f64],
}

impl Nonlinearity for ExpNl<'_> {
    fn components(&self) -> usize {
        1
    }
    fn eval(&self, site: usize, u: &[f64], out: &mut [f64]) {
        out[0] = self.alpha * self.g_eta[site] * truncation(self.alpha * u[0]);
    }
    fn jacobian(&self, site: usize, u: &[f64], out: &mut [f64]) {
        out[0] = self.alpha * self.alpha * self.g_eta[site] * truncation_deriv(self.alpha * u[0]);
    }
}

/// Solves `(−Δ + m²)φ̄ + g·α·G(αφ̄)·η = 0` for a nonnegative density `η`.
pub fn solve_exponential(
    eta: &RealField,
    g: &RealField,
    alpha: f64,
    mass2: f64,
    settings: &SolverSettings,
    init: Option<&RealField>,
) -> Result<Solution> {
    if eta.values().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("η must be nonnegative".into()));
    }
    if alpha.abs() >= crate::model::alpha_max() {
        return Err(Error::InvalidParameter(format!(
            "|α| = {} is not below α_max = {}",
            alpha.abs(),
            crate::model::alpha_max()
        )));
    }
    let g_eta: Vec<f64> = eta.values().iter().zip(g.values()).map(|(e, g)| e * g).collect();
    let nl = ExpNl { alpha, g_eta: &g_eta };
    let lin = LinearPart { grid: eta.grid().clone(), mass2, lambdas: vec![0.0] };
    let init_vec = init.map(|f| vec![f.clone()]);
    let mut sol = run(&lin, &nl, init_vec.as_deref(), settings)?;
    let worst = sol.fields[0].values().iter().map(|v| alpha * v).fold(f64::NEG_INFINITY, f64::max);
    sol.sign_check = Some(worst <= SIGN_TOLERANCE);
    Ok(sol)
}

// ---------------------------------------------------------------------------
// Polynomial model

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

struct PolyNl<'a> {
    /// `σ_k` for `k = 0..2n−1`, per site.
    powers: Vec<&'a [f64]>,
    f: &'a [f64],
}

impl PolyNl<'_> {
    fn degree(&self) -> usize {
        self.powers.len() - 1
    }
}

impl Nonlinearity for PolyNl<'_> {
    fn components(&self) -> usize {
        1
    }
    fn eval(&self, site: usize, u: &[f64], out: &mut [f64]) {
        let d = self.degree();
        let t = u[0];
        let mut acc = 0.0;
        for (k, p) in self.powers.iter().enumerate() {
            acc += binomial(d, k) * p[site] * t.powi((d - k) as i32);
        }
        out[0] = self.f[site] * acc;
    }
    fn jacobian(&self, site: usize, u: &[f64], out: &mut [f64]) {
        let d = self.degree();
        let t = u[0];
        let mut acc = 0.0;
        for (k, p) in self.powers.iter().enumerate().take(d) {
            acc += binomial(d, k) * p[site] * (d - k) as f64 * t.powi((d - k - 1) as i32);
        }
        out[0] = self.f[site] * acc;
    }
}

/// Solves `(−Δ + m²)θ̄ + f·Σ_k C(2n−1, k)·σ_k·θ̄^{2n−1−k} = 0` where
/// `powers[k] = σ_k` for `k = 0..=2n−1`.
pub fn solve_polynomial(
    powers: &[RealField],
    f: &RealField,
    mass2: f64,
    settings: &SolverSettings,
    init: Option<&RealField>,
) -> Result<Solution> {
    if powers.len() < 2 || powers.len() % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "expected σ_0..σ_(2n−1), got {} fields",
            powers.len()
        )));
    }
    let nl = PolyNl { powers: powers.iter().map(|p| p.values()).collect(), f: f.values() };
    let lin = LinearPart { grid: f.grid().clone(), mass2, lambdas: vec![0.0] };
    let init_vec = init.map(|x| vec![x.clone()]);
    run(&lin, &nl, init_vec.as_deref(), settings)
}

/// `⟨(−Δ + m²)θ, θ⟩` and `⟨N(θ), θ⟩` as lattice integrals; they cancel at a
/// solution.
pub fn polynomial_energy_terms(powers: &[RealField], f: &RealField, mass2: f64, theta: &RealField) -> (f64, f64) {
    let g = theta.grid();
    let spec = fft_forward(theta);
    let k2 = g.k2_full();
    let quad: f64 = spec
        .coefficients()
        .iter()
        .zip(&k2)
        .map(|(c, k)| (k + mass2) * c.norm_sqr())
        .sum::<f64>()
        * g.cell_volume()
        / g.len() as f64;
    let nl = PolyNl { powers: powers.iter().map(|p| p.values()).collect(), f: f.values() };
    let mut out = [0.0];
    let pair: f64 = theta
        .values()
        .iter()
        .enumerate()
        .map(|(s, &t)| {
            nl.eval(s, &[t], &mut out);
            out[0] * t
        })
        .sum::<f64>()
        * g.cell_volume();
    (quad, pair)
}

// ---------------------------------------------------------------------------
// Certificates

/// `u + (−Δ + m² + λ)^{−1} n` evaluated through the full complex transform
/// and the per-site `|k|²` table, independent of the solver's real path.
pub fn fixed_point_residual_full(u: &RealField, nonlinear: &RealField, mass2: f64, lambda: f64) -> f64 {
    let g = u.grid();
    let k2 = g.k2_full();
    let spec = fft_forward(nonlinear);
    let filtered: Vec<Complex64> = spec
        .coefficients()
        .iter()
        .zip(&k2)
        .map(|(c, k)| c / (k + mass2 + lambda))
        .collect();
    let back = fft_inverse(&SpectralField::from_vec(g, filtered).expect("same grid"));
    u.values()
        .iter()
        .zip(back.values())
        .fold(0.0, |m, (a, b)| m.max((a + b).abs()))
}

/// Recomputes the Galerkin residual of `sol` independently.
pub fn verify_galerkin(sys: &GalerkinSystem, xi_tilde: &[RealField], sol: &Solution) -> f64 {
    let n = sys.modes();
    let sites = sys.grid.len();
    let mut nonlin = vec![vec![0.0; sites]; n];
    let mut grad = vec![0.0; n];
    for s in 0..sites {
        let y: Vec<f64> = (0..n).map(|k| xi_tilde[k].values()[s] + sol.fields[k].values()[s]).collect();
        sys.vn_grad(&y, &mut grad);
        for k in 0..n {
            nonlin[k][s] = sys.sigmas[k].powi(2) * sys.f_values[s] * grad[k];
        }
    }
    (0..n)
        .map(|k| {
            let nf = RealField::from_vec_unchecked(&sys.grid, std::mem::take(&mut nonlin[k]));
            fixed_point_residual_full(&sol.fields[k], &nf, sys.mass2, sys.quad.lambdas[k])
        })
        .fold(0.0, f64::max)
}

pub fn verify_exponential(eta: &RealField, g: &RealField, alpha: f64, mass2: f64, sol: &Solution) -> f64 {
    let phi = sol.field();
    let n: Vec<f64> = phi
        .values()
        .iter()
        .zip(eta.values().iter().zip(g.values()))
        .map(|(&u, (&e, &gv))| {
            let x = alpha * u;
            let gx = if x > 0.0 { 2.0 - (-x).exp() } else { x.exp() };
            gv * alpha * gx * e
        })
        .collect();
    let nf = RealField::from_vec_unchecked(phi.grid(), n);
    fixed_point_residual_full(phi, &nf, mass2, 0.0)
}

pub fn verify_polynomial(powers: &[RealField], f: &RealField, mass2: f64, sol: &Solution) -> f64 {
    let d = powers.len() - 1;
    let theta = sol.field();
    let n: Vec<f64> = (0..theta.grid().len())
        .map(|s| {
            let t = theta.values()[s];
            // Horner in θ with coefficients C(d,k)σ_k, highest power first
            let mut acc = 0.0;
            for k in 0..=d {
                acc = acc * t + binomial(d, k) * powers[k].values()[s];
            }
            f.values()[s] * acc
        })
        .collect();
    let nf = RealField::from_vec_unchecked(theta.grid(), n);
    fixed_point_residual_full(theta, &nf, mass2, 0.0)
}

/// Sup-norm distance between the solutions reached from two initial guesses.
pub fn uniqueness_probe(
    solve: impl Fn(Option<&[RealField]>) -> Result<Solution>,
    second: &[RealField],
) -> Result<f64> {
    let a = solve(None)?;
    let b = solve(Some(second))?;
    if !(a.converged && b.converged) {
        return Err(Error::NotConverged(format!(
            "uniqueness probe: residuals {:e} and {:e}",
            a.residual, b.residual
        )));
    }
    Ok(a.fields
        .iter()
        .zip(&b.fields)
        .map(|(x, y)| x.values().iter().zip(y.values()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())))
        .fold(0.0, f64::max))
}

/// Gaussian initial guess with per-site standard deviation `scale`.
pub fn random_guess(grid: &Arc<Grid>, scale: f64, seed: u64) -> RealField {
    let mut rng = stream(seed, 0x6775_6573);
    let v = (0..grid.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    RealField::from_vec_unchecked(grid, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::green_apply;
    use crate::lattice::GreenOp;
    use nalgebra::{DMatrix, DVector};

    fn single(grid: &Arc<Grid>, pot: Potential, f: FProfile) -> GalerkinSystem {
        GalerkinSystem::new(grid.clone(), 1.0, &ModeBasis::Single { lambda: 0.0 }, vec![1.0], pot, f).unwrap()
    }

    /// Dense matrix of `(−Δ + m²)` on a 2-D grid with the continuum symbol.
    fn dense_elliptic(grid: &Arc<Grid>, shift: f64) -> DMatrix<f64> {
        let n = grid.len();
        let mut m = DMatrix::zeros(n, n);
        let op = GreenOp::new(1.0, 1).unwrap();
        for j in 0..n {
            let mut e = RealField::zeros(grid);
            e.values_mut()[j] = 1.0;
            let col = crate::lattice::elliptic_apply(&e, &op);
            for i in 0..n {
                m[(i, j)] = col.values()[i] + if i == j { shift - 1.0 } else { 0.0 };
            }
        }
        m
    }

    #[test]
    fn zero_noise_gives_zero_solution() {
        let g = Grid::new((8.0, 16), &[]).unwrap();
        let sys = single(&g, Potential::Poly { n: 2 }, FProfile::Omega { beta: 0.2 });
        let xi = vec![RealField::zeros(&g)];
        let sol = solve_galerkin(&sys, &xi, &SolverSettings::default(), None).unwrap();
        assert!(sol.converged);
        assert!(sol.field().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_potential_matches_dense_solve() {
        let g = Grid::new((4.0, 8), &[]).unwrap();
        let f = FProfile::Omega { beta: 0.3 };
        let sys = GalerkinSystem::new(g.clone(), 1.0, &ModeBasis::Single { lambda: 0.5 }, vec![1.3], Potential::Poly { n: 1 }, f).unwrap();
        let xi = sys.sample_noise(1, 0);
        let xt = sys.filtered_noise(&xi);
        let sol = solve_galerkin(&sys, &xt, &SolverSettings::default(), None).unwrap();
        assert!(sol.converged);
        // (−Δ + m² + λ + σ²f)ψ̄ = −σ²f ξ̃
        let n = g.len();
        let mut a = dense_elliptic(&g, 1.5);
        let s2 = 1.3f64 * 1.3;
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            a[(i, i)] += s2 * sys.f_values[i];
            rhs[i] = -s2 * sys.f_values[i] * xt[0].values()[i];
        }
        let exact = a.lu().solve(&rhs).unwrap();
        let scale = exact.amax();
        for i in 0..n {
            assert!((sol.field().values()[i] - exact[i]).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn quartic_newton_converges_fast() {
        let g = Grid::new((40.0, 64), &[]).unwrap();
        let sys = single(&g, Potential::Poly { n: 2 }, FProfile::Omega { beta: 0.2 });
        let xi = sys.sample_noise(2, 0);
        let xt = sys.filtered_noise(&xi);
        let sol = solve_galerkin(&sys, &xt, &SolverSettings::default(), None).unwrap();
        assert!(sol.converged && sol.residual < 1e-10, "{}", sol.residual);
        assert!(sol.iterations <= 30);
        assert!(verify_galerkin(&sys, &xt, &sol) < 1e-9);
        let picard = SolverSettings { method: Method::Picard, damping: 1.0, max_iterations: 500, ..Default::default() };
        let sp = solve_galerkin(&sys, &xt, &picard, None).unwrap();
        assert!(sp.converged);
        let gap = sp.field().values().iter().zip(sol.field().values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-9);
    }

    #[test]
    fn galerkin_uniqueness_and_equivariance() {
        let g = Grid::new((8.0, 16), &[]).unwrap();
        let sys = single(&g, Potential::Poly { n: 2 }, FProfile::One);
        let xt = sys.filtered_noise(&sys.sample_noise(3, 0));
        let guess = vec![random_guess(&g, 2.0, 1)];
        let d = uniqueness_probe(|init| solve_galerkin(&sys, &xt, &SolverSettings::default(), init), &guess).unwrap();
        assert!(d < 1e-8, "{d}");
        let sol = solve_galerkin(&sys, &xt, &SolverSettings::default(), None).unwrap();
        let shifted = vec![xt[0].shift(&[3, -5])];
        let sol_s = solve_galerkin(&sys, &shifted, &SolverSettings::default(), None).unwrap();
        let expect = sol.field().shift(&[3, -5]);
        for (a, b) in sol_s.field().values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn multimode_galerkin_converges_and_is_consistent() {
        let g = Grid::new((8.0, 16), &[]).unwrap();
        let gp = GProfile::One;
        let solve_n = |n: usize| {
            let basis = ModeBasis::Torus1d { extent: 2.0, modes: n, g: gp };
            let sig: Vec<f64> = basis.quadrature().unwrap().lambdas.iter().map(|l| (1.0 + l).powf(-1.5)).collect();
            let sys = GalerkinSystem::new(g.clone(), 1.0, &basis, sig, Potential::Poly { n: 2 }, FProfile::Omega { beta: 0.2 }).unwrap();
            let xi = sys.sample_noise(4, 0);
            let xt = sys.filtered_noise(&xi);
            let sol = solve_galerkin(&sys, &xt, &SolverSettings::default(), None).unwrap();
            assert!(sol.converged, "n = {n}");
            assert!(verify_galerkin(&sys, &xt, &sol) < 1e-9);
            (xi, sol)
        };
        let (_, s3) = solve_n(3);
        let (_, s5) = solve_n(5);
        // shared noise streams: the first three blocks coincide
        let gap = s3.fields[0].values().iter().zip(s5.fields[0].values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let size = s5.fields[0].sup_norm();
        assert!(gap < 0.5 * size.max(1e-12), "gap {gap} vs size {size}");
    }

    #[test]
    fn vn_derivatives_match_finite_differences() {
        let g = Grid::new((8.0, 8), &[]).unwrap();
        let basis = ModeBasis::Torus1d { extent: 3.0, modes: 3, g: GProfile::Bump { radius: 1.2 } };
        let sys = GalerkinSystem::new(g, 1.0, &basis, vec![1.0; 3], Potential::Poly { n: 2 }, FProfile::One).unwrap();
        let y = [0.3, -0.7, 0.4];
        let mut grad = [0.0; 3];
        let mut hess = [0.0; 9];
        sys.vn_grad(&y, &mut grad);
        sys.vn_hess(&y, &mut hess);
        let h = 1e-5;
        for k in 0..3 {
            let mut a = y;
            let mut b = y;
            a[k] += h;
            b[k] -= h;
            assert!(((sys.vn(&a) - sys.vn(&b)) / (2.0 * h) - grad[k]).abs() < 1e-7);
            let (mut ga, mut gb) = ([0.0; 3], [0.0; 3]);
            sys.vn_grad(&a, &mut ga);
            sys.vn_grad(&b, &mut gb);
            for l in 0..3 {
                assert!(((ga[l] - gb[l]) / (2.0 * h) - hess[l * 3 + k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn exponential_trivial_cases() {
        let g = Grid::new((2.0, 8), &[(2.0, 8)]).unwrap();
        let eta = RealField::constant(&g, 1.0);
        let zero = RealField::zeros(&g);
        let s = solve_exponential(&zero, &RealField::constant(&g, 1.0), 2.0, 1.0, &SolverSettings::default(), None).unwrap();
        assert!(s.field().values().iter().all(|&v| v == 0.0));
        let s = solve_exponential(&eta, &zero, 2.0, 1.0, &SolverSettings::default(), None).unwrap();
        assert!(s.field().values().iter().all(|&v| v == 0.0));
        assert!(solve_exponential(&eta, &zero, 13.1, 1.0, &SolverSettings::default(), None).is_err());
    }

    #[test]
    fn exponential_first_picard_iterate_is_a_green_column() {
        let g = Grid::new((2.0, 8), &[(2.0, 8), (2.0, 8)]).unwrap();
        let (alpha, mass) = (0.1, 3.0);
        let mut eta = RealField::zeros(&g);
        let site = g.flat_index(&[2, 5, 1, 7]);
        eta.values_mut()[site] = mass / g.cell_volume();
        let gz = RealField::from_fn(&g, |c| 1.0 / (1.0 + c[2] * c[2] + c[3] * c[3]));
        let one_step = SolverSettings { method: Method::Picard, max_iterations: 1, ..Default::default() };
        let s1 = solve_exponential(&eta, &gz, alpha, 1.0, &one_step, None).unwrap();
        let mut src = RealField::zeros(&g);
        src.values_mut()[site] = -alpha * gz.values()[site] * eta.values()[site];
        let expect = green_apply(&src, &GreenOp::new(1.0, 1).unwrap());
        for (a, b) in s1.field().values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-13);
        }
        let full = solve_exponential(&eta, &gz, alpha, 1.0, &SolverSettings::default(), None).unwrap();
        let half = SolverSettings { damping: 0.5, damping_floor: 1.0 / 128.0, ..Default::default() };
        let full_half = solve_exponential(&eta, &gz, alpha, 1.0, &half, None).unwrap();
        assert!(full.converged && full_half.converged);
        let gap = full.field().values().iter().zip(full_half.field().values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-8);
        assert_eq!(full.sign_check, Some(true));
    }

    #[test]
    fn exponential_gmc_solve_is_unique_and_signed() {
        let g = Grid::new((1.0, 8), &[(1.0, 8), (1.0, 8)]).unwrap();
        let op = crate::noise::RegularizationOp::Identity;
        let c = crate::wick::wick_constant(&op, &g, 1.0).unwrap();
        let xi = crate::noise::sample_white_noise(&g, crate::noise::SeedRecord { master: 8, index: 0 });
        let x = green_apply(&xi.field, &GreenOp::new(1.0, 1).unwrap());
        for alpha in [4.0, -4.0] {
            let mu = crate::wick::wick_exp(&x, alpha, &c);
            let gz = RealField::constant(&g, 1.0);
            let sol = solve_exponential(&mu.density, &gz, alpha, 1.0, &SolverSettings::default(), None).unwrap();
            assert!(sol.converged, "{}", sol.residual);
            assert_eq!(sol.sign_check, Some(true));
            assert!(verify_exponential(&mu.density, &gz, alpha, 1.0, &sol) < 1e-9);
            let guess = vec![random_guess(&g, 1.0, 2)];
            let d = uniqueness_probe(
                |init| solve_exponential(&mu.density, &gz, alpha, 1.0, &SolverSettings::default(), init.map(|v| &v[0])),
                &guess,
            )
            .unwrap();
            assert!(d < 1e-8, "{d}");
        }
    }

    #[test]
    fn truncation_is_c1() {
        assert_eq!(truncation(0.0), 1.0);
        assert_eq!(truncation_deriv(0.0), 1.0);
        for x in [-3.0, -0.1, 0.2, 5.0] {
            let h = 1e-6;
            assert!(((truncation(x + h) - truncation(x - h)) / (2.0 * h) - truncation_deriv(x)).abs() < 1e-8);
        }
        assert!(truncation(5.0) < 2.0 && truncation(50.0) <= 2.0);
    }

    #[test]
    fn polynomial_deterministic_and_linear_cases() {
        let g = Grid::new((4.0, 8), &[(2.0, 4), (2.0, 4)]).unwrap();
        let f = RealField::from_fn(&g, |c| (-0.2 * (1.0 + c[0] * c[0] + c[1] * c[1]).sqrt()).exp());
        // σ_0 = 1, others 0: θ̄ ≡ 0 solves the deterministic equation
        let mut powers = vec![RealField::constant(&g, 1.0)];
        powers.extend((1..4).map(|_| RealField::zeros(&g)));
        let s = solve_polynomial(&powers, &f, 1.0, &SolverSettings::default(), None).unwrap();
        assert!(s.converged && s.field().sup_norm() == 0.0);

        // n = 1: (−Δ + m²)θ + f(θ + σ_1) = 0
        let xi = crate::noise::sample_white_noise(&g, crate::noise::SeedRecord { master: 5, index: 0 });
        let psi = green_apply(&xi.field, &GreenOp::new(1.0, 1).unwrap());
        let powers = vec![RealField::constant(&g, 1.0), psi.clone()];
        let s = solve_polynomial(&powers, &f, 1.0, &SolverSettings::default(), None).unwrap();
        assert!(s.converged);
        let n = g.len();
        let mut a = DMatrix::zeros(n, n);
        let op = GreenOp::new(1.0, 1).unwrap();
        for j in 0..n {
            let mut e = RealField::zeros(&g);
            e.values_mut()[j] = 1.0;
            let col = crate::lattice::elliptic_apply(&e, &op);
            for i in 0..n {
                a[(i, j)] = col.values()[i];
            }
            a[(j, j)] += f.values()[j];
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|i| -f.values()[i] * psi.values()[i]));
        let exact = a.lu().solve(&rhs).unwrap();
        let scale = exact.amax();
        for i in 0..n {
            assert!((s.field().values()[i] - exact[i]).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn polynomial_quartic_energy_identity() {
        let g = Grid::new((4.0, 8), &[(2.0, 4), (2.0, 4)]).unwrap();
        let op = crate::noise::RegularizationOp::Identity;
        let c = crate::wick::wick_constant(&op, &g, 1.0).unwrap();
        let f = RealField::from_fn(&g, |c| (-0.2 * (1.0 + c[0] * c[0] + c[1] * c[1]).sqrt()).exp());
        let xi = crate::noise::sample_white_noise(&g, crate::noise::SeedRecord { master: 6, index: 0 });
        let psi = green_apply(&xi.field, &GreenOp::new(1.0, 1).unwrap());
        let powers: Vec<RealField> = (0..4).map(|k| crate::wick::wick_power(&psi, k, &c)).collect();
        let s = solve_polynomial(&powers, &f, 1.0, &SolverSettings::default(), None).unwrap();
        assert!(s.converged);
        assert!(verify_polynomial(&powers, &f, 1.0, &s) < 1e-9);
        let (quad, pair) = polynomial_energy_terms(&powers, &f, 1.0, s.field());
        assert!((quad + pair).abs() < 1e-6 * quad.abs().max(pair.abs()), "{quad} {pair}");
        // the binomial form equals f·H_3(ψ + θ; c)
        let t = s.field().values()[11];
        let direct = crate::wick::hermite(3, psi.values()[11] + t, c.c);
        let mut acc = 0.0;
        for k in 0..4 {
            acc += binomial(3, k) * powers[k].values()[11] * t.powi(3 - k as i32);
        }
        assert!((acc - direct).abs() < 1e-10 * direct.abs().max(1.0));
    }
}
