//! Experiment runners composing noise, solvers, weights and references.
//!
//! Every runner is deterministic for a fixed seed: sample `i` always draws
//! from stream `(seed, i)` and results are collected in index order.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::besov::{gmc_regularity_study, BesovParams, StudyRow};
use crate::error::{Error, Result};
use crate::gibbs::{
    diagnose, lattice_slice_variance, quadrature_reference, sample_kappa_pcn, ChainDiagnostics, GaussianReference,
    KappaHatDensity, Likelihood, PcnSettings,
};
use crate::lattice::{restrict_to_origin, Grid, RealField};
use crate::model::{check_hypotheses, Cutoffs, DerivativeReading, FProfile, GProfile, HypothesisReport, Potential};
use crate::noise::{sample_white_noise, RegularizationOp, SeedRecord};
use crate::reduction::{
    compare_to_reference, moment_names, moments_of, reduced_law_estimate, upsilon_log_weight_galerkin,
    upsilon_log_weight_wick, EstimateOptions, ReducedLaw, Reference, ReductionReport, Tolerances, WeightedSampleSet,
    UPSILON_PREFACTOR,
};
use crate::solver::{
    random_guess, solve_exponential, solve_galerkin, solve_polynomial, uniqueness_probe, verify_exponential,
    verify_polynomial, GalerkinSystem, ModeBasis, SolverSettings,
};
use crate::wick::{
    ball_masses_all, filtered_multiplier, fit_moment_scaling, wick_constant, wick_exp, GmcMeasure, ScalingFit,
    ScalingOptions, WickConstants,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub extent: f64,
    pub points: usize,
}

/// Two x-axes of equal size plus optional internal axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_extent: f64,
    pub x_points: usize,
    #[serde(default)]
    pub z: Vec<AxisSpec>,
}

impl GridSpec {
    pub fn plane(extent: f64, points: usize) -> Self {
        Self { x_extent: extent, x_points: points, z: Vec::new() }
    }

    pub fn cube(extent: f64, points: usize) -> Self {
        Self { x_extent: extent, x_points: points, z: vec![AxisSpec { extent, points }; 2] }
    }

    pub fn build(&self) -> Result<Arc<Grid>> {
        let z: Vec<(f64, usize)> = self.z.iter().map(|a| (a.extent, a.points)).collect();
        Grid::new((self.x_extent, self.x_points), &z)
    }

    pub fn x_grid(&self) -> Result<Arc<Grid>> {
        Grid::new((self.x_extent, self.x_points), &[])
    }

    pub fn z_grid(&self) -> Result<Arc<Grid>> {
        let z: Vec<(f64, usize)> = self.z.iter().map(|a| (a.extent, a.points)).collect();
        Grid::internal(&z)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn nonzero_samples(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidParameter("samples must be at least 1".into()))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Free-field calibration

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeFieldConfig {
    pub grid: GridSpec,
    pub mass2: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for FreeFieldConfig {
    fn default() -> Self {
        Self { grid: GridSpec::plane(32.0, 64), mass2: 1.0, lambda: 0.0, sigma: 1.0, samples: 100_000, seed: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FreeFieldResult {
    pub variance: f64,
    pub stderr: f64,
    /// `σ²·(1/vol)·Σ_k (|k|² + λ + m²)^{−2}`.
    pub lattice_oracle: f64,
    /// `σ²/(4π(λ + m²))`.
    pub continuum: f64,
    pub z: f64,
    pub samples: usize,
}

/// Variance of `𝓘ξ(0)` for the one-mode free field against its oracles.
pub fn free_field_calibration(cfg: &FreeFieldConfig) -> Result<FreeFieldResult> {
    positive("mass2", cfg.mass2)?;
    positive("sigma", cfg.sigma)?;
    nonzero_samples(cfg.samples)?;
    let grid = cfg.grid.x_grid()?;
    let sys = GalerkinSystem::new(
        grid.clone(),
        cfg.mass2,
        &ModeBasis::Single { lambda: cfg.lambda },
        vec![cfg.sigma],
        Potential::Zero,
        FProfile::One,
    )?;
    let vals: Vec<f64> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let xi = sys.sample_noise(cfg.seed, i);
            sys.filtered_noise(&xi)[0].values()[0]
        })
        .collect();
    let n = vals.len() as f64;
    let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
    let variance = sq.iter().sum::<f64>() / n;
    let var2 = sq.iter().map(|s| (s - variance).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let stderr = (var2 / n).sqrt();
    let mu = cfg.mass2 + cfg.lambda;
    let lattice_oracle = cfg.sigma.powi(2) * lattice_slice_variance(&grid, mu);
    Ok(FreeFieldResult {
        variance,
        stderr,
        lattice_oracle,
        continuum: cfg.sigma.powi(2) / (4.0 * PI * mu),
        z: (variance - lattice_oracle) / stderr,
        samples: cfg.samples,
    })
}

// ---------------------------------------------------------------------------
// Galerkin reduction

/// How the finite-dimensional reference density is assembled.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceOptions {
    /// Use the lattice-exact Gaussian part instead of `4π(m²+λ)/σ²`.
    pub lattice_gaussian: bool,
    /// The constant written as `4π` in the density.
    pub four_pi: f64,
    /// Multiply the potential term by `f(0)`.
    pub include_f0: bool,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { lattice_gaussian: true, four_pi: 4.0 * PI, include_f0: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalerkinConfig {
    pub grid: GridSpec,
    pub mass2: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub potential: Potential,
    /// `f = ω_β`.
    pub beta: f64,
    #[serde(default)]
    pub reading: DerivativeReading,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_prefactor")]
    pub upsilon_prefactor: f64,
    #[serde(default)]
    pub estimate: EstimateOptions,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub reference: ReferenceOptions,
}

fn default_prefactor() -> f64 {
    UPSILON_PREFACTOR
}

impl Default for GalerkinConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::plane(40.0, 64),
            mass2: 1.0,
            lambda: 0.0,
            sigma: 1.0,
            potential: Potential::Poly { n: 2 },
            beta: 0.2,
            reading: DerivativeReading::SquaredArgument,
            samples: 10_000,
            seed: 2,
            solver: SolverSettings::default(),
            upsilon_prefactor: UPSILON_PREFACTOR,
            estimate: EstimateOptions::default(),
            tolerances: Tolerances::default(),
            reference: ReferenceOptions::default(),
        }
    }
}

impl GalerkinConfig {
    pub fn system(&self) -> Result<GalerkinSystem> {
        positive("sigma", self.sigma)?;
        GalerkinSystem::new(
            self.grid.x_grid()?,
            self.mass2,
            &ModeBasis::Single { lambda: self.lambda },
            vec![self.sigma],
            self.potential.clone(),
            FProfile::Omega { beta: self.beta },
        )
    }

    pub fn cutoffs(&self) -> Cutoffs {
        Cutoffs { f: FProfile::Omega { beta: self.beta }, g: GProfile::One, reading: self.reading }
    }
}

/// Solved samples with `∫ f̃′ V_n` stored without the prefactor, so weights
/// for any prefactor come from the same solves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GalerkinRun {
    pub phi0: Vec<f64>,
    pub upsilon_integral: Vec<f64>,
    pub max_residual: f64,
    pub max_iterations: usize,
    pub unconverged: usize,
    pub hypotheses: HypothesisReport,
}

impl GalerkinRun {
    /// Moments of `φ(0)` weighted by `exp(prefactor·∫ f̃′ V_n)`.
    pub fn sample_set(&self, prefactor: f64) -> Result<WeightedSampleSet> {
        WeightedSampleSet::new(
            moment_names(),
            self.phi0.iter().map(|&v| moments_of(v)).collect(),
            self.upsilon_integral.iter().map(|u| prefactor * u).collect(),
        )
    }
}

pub fn run_galerkin_samples(cfg: &GalerkinConfig) -> Result<GalerkinRun> {
    nonzero_samples(cfg.samples)?;
    cfg.solver.validate()?;
    let sys = cfg.system()?;
    let hypotheses = check_hypotheses(&cfg.potential, &cfg.cutoffs(), &sys.grid, cfg.mass2 + cfg.lambda)?;
    let out: Vec<(f64, f64, f64, usize, bool)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let xi = sys.sample_noise(cfg.seed, i);
            let xt = sys.filtered_noise(&xi);
            let sol = solve_galerkin(&sys, &xt, &cfg.solver, None)?;
            let phi: Vec<RealField> = xt.iter().zip(&sol.fields).map(|(a, b)| a.axpby(1.0, b, 1.0)).collect::<Result<_>>()?;
            let u = upsilon_log_weight_galerkin(&sys, &phi, cfg.reading, 1.0)?;
            Ok((phi[0].values()[0], u, sol.residual, sol.iterations, sol.converged))
        })
        .collect::<Result<_>>()?;
    Ok(GalerkinRun {
        phi0: out.iter().map(|o| o.0).collect(),
        upsilon_integral: out.iter().map(|o| o.1).collect(),
        max_residual: out.iter().map(|o| o.2).fold(0.0, f64::max),
        max_iterations: out.iter().map(|o| o.3).max().unwrap_or(0),
        unconverged: out.iter().filter(|o| !o.4).count(),
        hypotheses,
    })
}

/// The one-mode reference density for `cfg`.
pub fn galerkin_reference_density(cfg: &GalerkinConfig, opts: &ReferenceOptions) -> Result<KappaHatDensity> {
    let mu = cfg.mass2 + cfg.lambda;
    let scale = opts.four_pi / (4.0 * PI);
    let precision = if opts.lattice_gaussian {
        scale / (cfg.sigma.powi(2) * lattice_slice_variance(cfg.grid.x_grid()?.as_ref(), mu))
    } else {
        opts.four_pi * mu / cfg.sigma.powi(2)
    };
    let f0 = if opts.include_f0 { FProfile::Omega { beta: cfg.beta }.at_origin() } else { 1.0 };
    KappaHatDensity::single(precision, opts.four_pi * f0, cfg.potential.clone())
}

/// Compares reweighted samples against the quadrature of the reference.
pub fn compare_galerkin(
    cfg: &GalerkinConfig,
    run: &GalerkinRun,
    prefactor: f64,
    opts: &ReferenceOptions,
) -> Result<ReductionReport> {
    let set = run.sample_set(prefactor)?;
    let law = reduced_law_estimate(&set, &cfg.estimate)?;
    let q = quadrature_reference(&galerkin_reference_density(cfg, opts)?, 4001)?;
    let mut rep = compare_to_reference(&law, &set, Some("m1"), &Reference::from_quadrature(&q), &cfg.tolerances)?;
    if !cfg.potential.is_convex() {
        rep.labels.push("branch-dependent".into());
    }
    rep.config = serde_json::to_value(cfg)?;
    Ok(rep)
}

pub fn galerkin_reduction(cfg: &GalerkinConfig) -> Result<(GalerkinRun, ReductionReport)> {
    let run = run_galerkin_samples(cfg)?;
    let rep = compare_galerkin(cfg, &run, cfg.upsilon_prefactor, &cfg.reference)?;
    Ok((run, rep))
}

// ---------------------------------------------------------------------------
// Exponential model

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentialConfig {
    pub grid: GridSpec,
    pub mass2: f64,
    pub alphas: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub regularization: RegularizationOp,
    #[serde(default = "default_g")]
    pub g: GProfile,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Scale of the random second start for the uniqueness probe.
    #[serde(default = "default_guess_scale")]
    pub guess_scale: f64,
}

fn default_g() -> GProfile {
    GProfile::One
}

fn default_guess_scale() -> f64 {
    1.0
}

impl Default for ExponentialConfig {
    fn default() -> Self {
        let grid = GridSpec::cube(6.0, 24);
        Self {
            grid,
            mass2: 1.0,
            alphas: vec![2.0, 4.0 * PI * 0.8],
            samples: 50,
            seed: 3,
            regularization: RegularizationOp::Identity,
            g: GProfile::One,
            solver: SolverSettings::default(),
            guess_scale: 1.0,
        }
    }
}

/// `ψ₀ = (−Δ + m²)^{−1}𝒜ξ` and its Wick constant.
pub fn gaussian_field(grid: &Arc<Grid>, op: &RegularizationOp, mass2: f64, seed: SeedRecord) -> Result<(RealField, WickConstants)> {
    let mult = filtered_multiplier(op, grid, mass2)?;
    let c = WickConstants::from_multiplier(grid, &mult, crate::wick::provenance_key(op, grid, mass2));
    let xi = sample_white_noise(grid, seed);
    let psi = RealField::from_vec(grid, grid.engine().apply_multiplier(xi.field.values(), &mult))?;
    Ok((psi, c))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentialCheck {
    pub alpha: f64,
    pub index: u64,
    pub converged: bool,
    pub residual: f64,
    pub recomputed_residual: f64,
    /// `max α·φ̄` over the lattice.
    pub worst_sign: f64,
    pub uniqueness_gap: f64,
    pub iterations: usize,
    pub capped_sites: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentialReport {
    pub checks: Vec<ExponentialCheck>,
    pub sign_tolerance: f64,
    pub uniqueness_tolerance: f64,
    pub residual_tolerance: f64,
}

/// Tolerances of the exponential invariants.
pub const SIGN_TOLERANCE: f64 = 1e-8;
pub const UNIQUENESS_TOLERANCE: f64 = 1e-8;

impl ExponentialReport {
    pub fn sign_pass(&self) -> bool {
        self.checks.iter().all(|c| c.worst_sign <= self.sign_tolerance)
    }
    pub fn uniqueness_pass(&self) -> bool {
        self.checks.iter().all(|c| c.uniqueness_gap < self.uniqueness_tolerance)
    }
    pub fn residual_pass(&self) -> bool {
        self.checks.iter().all(|c| c.converged && c.recomputed_residual <= self.residual_tolerance)
    }
}

pub fn exponential_invariants(cfg: &ExponentialConfig) -> Result<ExponentialReport> {
    nonzero_samples(cfg.samples)?;
    positive("mass2", cfg.mass2)?;
    cfg.solver.validate()?;
    let grid = cfg.grid.build()?;
    let g = Cutoffs { g: cfg.g, ..Cutoffs::none() }.g_field(&grid);
    let jobs: Vec<(f64, u64)> = cfg.alphas.iter().flat_map(|&a| (0..cfg.samples as u64).map(move |i| (a, i))).collect();
    let checks = jobs
        .into_par_iter()
        .map(|(alpha, i)| {
            let (psi, c) = gaussian_field(&grid, &cfg.regularization, cfg.mass2, SeedRecord { master: cfg.seed, index: i })?;
            let eta = wick_exp(&psi, alpha, &c);
            let solve = |init: Option<&[RealField]>| {
                solve_exponential(&eta.density, &g, alpha, cfg.mass2, &cfg.solver, init.map(|v| &v[0]))
            };
            let sol = solve(None)?;
            let guess = vec![random_guess(&grid, cfg.guess_scale, cfg.seed ^ i.wrapping_mul(0x9e37_79b9))];
            let gap = uniqueness_probe(solve, &guess)?;
            Ok(ExponentialCheck {
                alpha,
                index: i,
                converged: sol.converged,
                residual: sol.residual,
                recomputed_residual: verify_exponential(&eta.density, &g, alpha, cfg.mass2, &sol),
                worst_sign: sol.field().values().iter().map(|v| alpha * v).fold(f64::NEG_INFINITY, f64::max),
                uniqueness_gap: gap,
                iterations: sol.iterations,
                capped_sites: eta.capped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExponentialReport {
        checks,
        sign_tolerance: SIGN_TOLERANCE,
        uniqueness_tolerance: UNIQUENESS_TOLERANCE,
        // independent recomputation may differ from the solver's own measure by rounding
        residual_tolerance: 10.0 * cfg.solver.tolerance,
    })
}

// ---------------------------------------------------------------------------
// GMC moment scaling

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmcScalingConfig {
    pub grid: GridSpec,
    pub mass2: f64,
    pub alpha: f64,
    pub ps: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub regularization: RegularizationOp,
    /// Radii in lattice spacings; default a geometric ladder over `[1.5h, 8h]`.
    #[serde(default)]
    pub radii_h: Option<Vec<f64>>,
    #[serde(default)]
    pub scaling: ScalingOptions,
}

impl Default for GmcScalingConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::cube(8.0, 32),
            mass2: 1.0,
            alpha: 4.0 * PI,
            ps: vec![1.2, 1.5],
            samples: 200,
            seed: 4,
            regularization: RegularizationOp::Identity,
            radii_h: None,
            scaling: ScalingOptions::default(),
        }
    }
}

/// Geometric radii over `[1.5h, 8h]`.
pub fn default_radii_h() -> Vec<f64> {
    let n = 7;
    (0..n).map(|i| 1.5 * (8.0f64 / 1.5).powf(i as f64 / (n - 1) as f64)).collect()
}

/// One fit per `p`; chaos samples are streamed, never held together.
pub fn gmc_scaling(cfg: &GmcScalingConfig) -> Result<Vec<ScalingFit>> {
    if cfg.samples < 2 {
        return Err(Error::InvalidParameter("gmc scaling needs at least 2 samples".into()));
    }
    let grid = cfg.grid.build()?;
    let h = grid.axes().iter().map(|a| a.spacing()).fold(0.0, f64::max);
    let radii: Vec<f64> = cfg.radii_h.clone().unwrap_or_else(default_radii_h).iter().map(|r| r * h).collect();
    // per sample: [p][radius] log mean mass^p
    let per: Vec<Vec<Vec<f64>>> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let (psi, c) = gaussian_field(&grid, &cfg.regularization, cfg.mass2, SeedRecord { master: cfg.seed, index: i })?;
            let mu = wick_exp(&psi, cfg.alpha, &c);
            log_moments_multi(&mu, &radii, &cfg.ps)
        })
        .collect::<Result<_>>()?;
    cfg.ps
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let rows: Vec<Vec<f64>> = per.iter().map(|s| s[k].clone()).collect();
            fit_moment_scaling(&grid, cfg.alpha, &rows, &radii, p, &cfg.scaling)
        })
        .collect()
}

fn log_moments_multi(mu: &GmcMeasure, radii: &[f64], ps: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(radii.len()); ps.len()];
    for &r in radii {
        let (shift, m) = ball_masses_all(mu, r)?;
        let logs: Vec<f64> = m.iter().map(|v| v.ln() + shift).collect();
        for (k, &p) in ps.iter().enumerate() {
            let mx = logs.iter().map(|l| p * l).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logs.iter().map(|l| (p * l - mx).exp()).sum();
            out[k].push(mx + (s / logs.len() as f64).ln());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Besov study of η_ε

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovStudyConfig {
    pub grid: GridSpec,
    pub mass2: f64,
    pub alpha: f64,
    /// Mollifier scales, coarse to fine.
    pub epsilons: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub params: Vec<BesovParams>,
}

impl Default for BesovStudyConfig {
    fn default() -> Self {
        let h = 4.0 / 32.0;
        Self {
            grid: GridSpec::cube(4.0, 32),
            mass2: 1.0,
            alpha: 4.0 * PI,
            epsilons: vec![8.0 * h, 4.0 * h, 2.0 * h],
            samples: 16,
            seed: 5,
            params: vec![
                BesovParams::diagonal(-0.464, 1.45).expect("valid"),
                BesovParams::diagonal(-0.2, 1.45).expect("valid"),
            ],
        }
    }
}

/// `η_ε = exp^◇(α(−Δ+m²)^{−1}(a_ε∗ξ))` for each ε with shared noise.
pub fn eta_ladder(grid: &Arc<Grid>, mass2: f64, alpha: f64, epsilons: &[f64], seed: SeedRecord) -> Result<Vec<RealField>> {
    let xi = sample_white_noise(grid, seed);
    epsilons
        .iter()
        .map(|&eps| {
            let op = RegularizationOp::Mollifier { eps, profile: crate::noise::MollifierProfile::Gaussian };
            let mult = filtered_multiplier(&op, grid, mass2)?;
            let c = WickConstants::from_multiplier(grid, &mult, crate::wick::provenance_key(&op, grid, mass2));
            let psi = RealField::from_vec(grid, grid.engine().apply_multiplier(xi.field.values(), &mult))?;
            Ok(wick_exp(&psi, alpha, &c).density)
        })
        .collect()
}

pub fn besov_study(cfg: &BesovStudyConfig) -> Result<Vec<StudyRow>> {
    nonzero_samples(cfg.samples)?;
    let grid = cfg.grid.build()?;
    let ladders: Vec<Vec<RealField>> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| eta_ladder(&grid, cfg.mass2, cfg.alpha, &cfg.epsilons, SeedRecord { master: cfg.seed, index: i }))
        .collect::<Result<_>>()?;
    let by_rung: Vec<Vec<RealField>> =
        (0..cfg.epsilons.len()).map(|r| ladders.iter().map(|l| l[r].clone()).collect()).collect();
    gmc_regularity_study(&cfg.epsilons, &by_rung, &cfg.params)
}

// ---------------------------------------------------------------------------
// Polynomial model

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialConfig {
    pub grid: GridSpec,
    pub mass2: f64,
    /// Half the Wick degree (`2n` is the degree).
    pub half_degree: u32,
    pub beta: f64,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_prefactor")]
    pub upsilon_prefactor: f64,
    #[serde(default)]
    pub estimate: EstimateOptions,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub pcn: PcnSettings,
}

impl Default for PolynomialConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                x_extent: 16.0,
                x_points: 16,
                z: vec![AxisSpec { extent: 8.0, points: 8 }; 2],
            },
            mass2: 1.0,
            half_degree: 2,
            beta: 0.2,
            samples: 1000,
            seed: 6,
            solver: SolverSettings::default(),
            upsilon_prefactor: UPSILON_PREFACTOR,
            estimate: EstimateOptions::default(),
            tolerances: Tolerances::default(),
            pcn: PcnSettings { chains: 4, burn_in: 4000, samples: 20_000, thin: 5, seed: 7, ..Default::default() },
        }
    }
}

/// Slice observables: z-averaged moments 1–4 and the nearest-neighbour
/// correlation along the first internal axis.
pub fn slice_observable_names() -> Vec<String> {
    let mut n = moment_names();
    n.push("c01".into());
    n
}

pub fn slice_observables(omega: &[f64], z_grid: &Grid) -> Vec<f64> {
    let n = omega.len() as f64;
    let mut out = vec![0.0; 5];
    for &w in omega {
        for (j, m) in moments_of(w).into_iter().enumerate() {
            out[j] += m / n;
        }
    }
    // neighbour along axis 0 in row-major (axis 0 slowest) order
    let stride: usize = z_grid.dims()[1..].iter().product();
    for (i, &w) in omega.iter().enumerate() {
        out[4] += w * omega[(i + stride) % omega.len()] / n;
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolynomialRun {
    pub set: WeightedSampleSet,
    pub law: ReducedLaw,
    pub wick_c: f64,
    /// See [`polynomial_convexity_margin`]; positive means convex.
    pub convexity_margin: f64,
    pub max_residual: f64,
    pub unconverged: usize,
}

/// Wick-mass domination margin. For `2n = 4` the derivative of
/// `f·H_3(y; c)` is `3f(y² − c) ≥ −3fc`, so the system is convex when
/// `m² > 3·f_max·c`.
pub fn polynomial_convexity_margin(mass2: f64, half_degree: u32, c: f64, f_max: f64) -> Result<f64> {
    match half_degree {
        1 => Ok(mass2),
        2 => Ok(mass2 - 3.0 * f_max * c),
        _ => Err(Error::InvalidParameter("convexity margin is implemented for 2n ≤ 4".into())),
    }
}

pub fn run_polynomial_samples(cfg: &PolynomialConfig) -> Result<PolynomialRun> {
    nonzero_samples(cfg.samples)?;
    cfg.solver.validate()?;
    let grid = cfg.grid.build()?;
    if grid.z_axes().is_empty() {
        return Err(Error::InvalidGrid("the polynomial model needs internal axes".into()));
    }
    let d = 2 * cfg.half_degree as usize;
    let cut = Cutoffs { f: FProfile::Omega { beta: cfg.beta }, g: GProfile::One, reading: DerivativeReading::SquaredArgument };
    let f = cut.f_field(&grid);
    let fp = cut.f_prime_field(&grid);
    let c = wick_constant(&RegularizationOp::Identity, &grid, cfg.mass2)?.c;
    let margin = polynomial_convexity_margin(cfg.mass2, cfg.half_degree, c, f.sup_norm())?;
    let z_grid = cfg.grid.z_grid()?;
    let rows: Vec<(Vec<f64>, f64, f64, bool)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let (psi, wc) =
                gaussian_field(&grid, &RegularizationOp::Identity, cfg.mass2, SeedRecord { master: cfg.seed, index: i })?;
            let powers: Vec<RealField> = (0..=d).map(|k| psi.map(|v| crate::wick::hermite(k, v, wc.c))).collect();
            let sol = solve_polynomial(&powers[..d], &f, cfg.mass2, &cfg.solver, None)?;
            let theta = sol.field();
            let lw = upsilon_log_weight_wick(&powers, theta, &fp, cfg.upsilon_prefactor)?;
            let phi = psi.axpby(1.0, theta, 1.0)?;
            let slice = restrict_to_origin(&phi)?;
            let residual = verify_polynomial(&powers[..d], &f, cfg.mass2, &sol);
            Ok((slice_observables(slice.values(), &z_grid), lw, residual, sol.converged))
        })
        .collect::<Result<_>>()?;
    let set = WeightedSampleSet::new(
        slice_observable_names(),
        rows.iter().map(|r| r.0.clone()).collect(),
        rows.iter().map(|r| r.1).collect(),
    )?;
    let law = reduced_law_estimate(&set, &cfg.estimate)?;
    Ok(PolynomialRun {
        set,
        law,
        wick_c: c,
        convexity_margin: margin,
        max_residual: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        unconverged: rows.iter().filter(|r| !r.3).count(),
    })
}

/// pCN reference for the slice law: lattice Gaussian part, Wick power of
/// the reference's own variance, coupling `4π·f(0)`.
pub fn polynomial_reference(cfg: &PolynomialConfig) -> Result<(Reference, ChainDiagnostics, f64)> {
    let z_grid = cfg.grid.z_grid()?;
    let x_grid = cfg.grid.x_grid()?;
    let sigma = vec![1.0; z_grid.half_spectrum().len()];
    let reference = GaussianReference::lattice(&z_grid, &x_grid, cfg.mass2, &sigma);
    let c = reference.pointwise_variance();
    let f0 = FProfile::Omega { beta: cfg.beta }.at_origin();
    let lik = Likelihood::WickPower { half_degree: cfg.half_degree, c, coupling: 4.0 * PI * f0, g: vec![1.0; z_grid.len()] };
    let chains = sample_kappa_pcn(&reference, &lik, &cfg.pcn)?;
    let diag = diagnose(&chains, |w| slice_observables(w, &z_grid)[1]);
    let r = Reference::from_chains(&chains, slice_observable_names(), |w| slice_observables(w, &z_grid));
    Ok((r, diag, c))
}

pub fn polynomial_reduction(cfg: &PolynomialConfig) -> Result<(PolynomialRun, ReductionReport, ChainDiagnostics)> {
    let run = run_polynomial_samples(cfg)?;
    let (reference, diag, _) = polynomial_reference(cfg)?;
    let mut rep = compare_to_reference(&run.law, &run.set, None, &reference, &cfg.tolerances)?;
    rep.labels.push("branch-dependent".into());
    if run.convexity_margin <= 0.0 {
        rep.labels.push("non-convex".into());
        rep.pass = false;
    }
    rep.config = serde_json::to_value(cfg)?;
    Ok((run, rep, diag))
}

// ---------------------------------------------------------------------------
// Cutoff removal for the exponential model

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffRemovalConfig {
    pub grid: GridSpec,
    pub mass2: f64,
    pub alpha: f64,
    /// Radii of nested `g` windows, increasing.
    pub windows: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub estimate: EstimateOptions,
}

impl Default for CutoffRemovalConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::cube(8.0, 16),
            mass2: 1.0,
            alpha: 1.0,
            windows: vec![1.0, 2.0, 3.0],
            samples: 400,
            seed: 8,
            solver: SolverSettings::default(),
            estimate: EstimateOptions::default(),
        }
    }
}

/// Slice moments of `φ(0, 0)` under nested windows; the exponential
/// reduction carries no reweighting, so all weights are equal.
pub fn cutoff_removal(cfg: &CutoffRemovalConfig) -> Result<Vec<crate::reduction::TrendRow>> {
    nonzero_samples(cfg.samples)?;
    if cfg.windows.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("windows must be nested (increasing)".into()));
    }
    let grid = cfg.grid.build()?;
    crate::reduction::cutoff_removal_study(cfg.windows.len(), |w| {
        let g = Cutoffs { g: GProfile::Bump { radius: cfg.windows[w] }, ..Cutoffs::none() }.g_field(&grid);
        let vals: Vec<Vec<f64>> = (0..cfg.samples as u64)
            .into_par_iter()
            .map(|i| {
                let (psi, c) =
                    gaussian_field(&grid, &RegularizationOp::Identity, cfg.mass2, SeedRecord { master: cfg.seed, index: i })?;
                let eta = wick_exp(&psi, cfg.alpha, &c);
                let sol = solve_exponential(&eta.density, &g, cfg.alpha, cfg.mass2, &cfg.solver, None)?;
                Ok(moments_of(psi.values()[0] + sol.field().values()[0]))
            })
            .collect::<Result<_>>()?;
        let n = vals.len();
        let set = WeightedSampleSet::new(moment_names(), vals, vec![0.0; n])?;
        reduced_law_estimate(&set, &cfg.estimate)
    })
}
