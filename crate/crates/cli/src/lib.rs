//! Experiment orchestration for `esq`: configuration, execution, and the
//! on-disk report format.
//!
//! Every command writes into an output directory:
//! - `report.json` holds the resolved config, its hash, assertions and
//!   observations. It is bit-identical across reruns of the same config.
//! - `manifest.json` holds timings, the thread count and the artifact list.
//! - CSV tables sit next to them, and field snapshots go under `snapshots/`.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use esq_core::lattice::{read_snapshot, write_snapshot, RealField};
use esq_core::model::{FProfile, Potential};
use esq_core::noise::{sample_white_noise, SeedRecord};
use esq_core::pipeline::{galerkin_reference_density, polynomial_reference, GalerkinConfig, GridSpec, PolynomialConfig};
use esq_core::solver::{solve_galerkin, verify_galerkin, GalerkinSystem, ModeBasis, SolverSettings};
use thiserror::Error;

use config::{config_hash, Experiment};
use report::{Assertion, Mode, Observation, Report, RunManifest, Stage, Uncertainty};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("report conflict: {0}")]
    Conflict(String),
    #[error(transparent)]
    Core(#[from] esq_core::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad input, 3 for runtime failures, 4 for merge conflicts.
    /// Exit code 1 is reserved for failed assertions.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) => 2,
            Self::Io(_) | Self::Core(_) | Self::Json(_) => 3,
            Self::Conflict(_) => 4,
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Per-stage wall-clock timings.
#[derive(Default)]
pub struct Stages(Vec<Stage>);

impl Stages {
    pub fn time<T, E: Into<CliError>>(&mut self, name: &str, f: impl FnOnce() -> Result<T, E>) -> Result<T, CliError> {
        let t0 = Instant::now();
        let r = f().map_err(Into::into);
        self.0.push(Stage { name: name.into(), seconds: t0.elapsed().as_secs_f64() });
        r
    }
}

/// What a command produced, before anything is written.
#[derive(Default)]
pub struct Outcome {
    pub assertions: Vec<Assertion>,
    pub observations: Vec<Observation>,
    pub labels: Vec<String>,
    /// `(relative path, bytes)`.
    pub artifacts: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn csv(&mut self, name: &str, body: String) {
        self.artifacts.push((name.into(), body.into_bytes()));
    }

    pub fn json(&mut self, name: &str, v: serde_json::Value) {
        let body = serde_json::to_vec_pretty(&v).expect("JSON values serialize");
        self.artifacts.push((name.into(), body));
    }

    pub fn snapshot(&mut self, name: &str, field: &RealField) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_snapshot(field, &mut buf)?;
        self.artifacts.push((format!("snapshots/{name}"), buf));
        Ok(())
    }
}

/// Options shared by all commands.
#[derive(Clone, Debug)]
pub struct Common {
    pub out: PathBuf,
    pub mode: Mode,
    pub threads: usize,
}

/// Writes artifacts, `report.json` and `manifest.json`.
pub fn finish(command: &str, config: serde_json::Value, outcome: Outcome, stages: Stages, common: &Common, t0: Instant) -> Result<Report, CliError> {
    let hash = config_hash(&config);
    let pass = outcome.assertions.iter().all(|a| a.pass);
    let report = Report {
        command: command.into(),
        config_hash: hash.clone(),
        config,
        mode: common.mode,
        labels: outcome.labels,
        assertions: outcome.assertions,
        observations: outcome.observations,
        pass,
    };
    let mut artifacts = Vec::new();
    for (name, bytes) in &outcome.artifacts {
        write_file(&common.out.join(name), bytes)?;
        artifacts.push(name.clone());
    }
    write_file(&common.out.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    artifacts.push("report.json".into());
    let manifest = RunManifest {
        config_hash: hash,
        version: env!("CARGO_PKG_VERSION").into(),
        threads: common.threads,
        wall_clock_seconds: t0.elapsed().as_secs_f64(),
        stages: stages.0,
        artifacts,
    };
    write_file(&common.out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(report)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io(path, e))
}

pub fn run_experiment(exp: &Experiment, common: &Common) -> Result<Report, CliError> {
    let t0 = Instant::now();
    let mut stages = Stages::default();
    let outcome = experiments::execute(exp, &mut stages)?;
    finish(exp.kind().name(), exp.canonical_json(), outcome, stages, common, t0)
}

/// `count` white-noise snapshots on `grid`, sample `i` from stream `(seed, i)`.
pub fn sample_noise(grid: &GridSpec, count: usize, seed: u64, common: &Common) -> Result<Report, CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let t0 = Instant::now();
    let mut stages = Stages::default();
    let g = stages.time("build", || grid.build())?;
    let mut out = Outcome::default();
    let mut csv = String::from("index,mean,variance,expected_variance\n");
    let expected = 1.0 / g.cell_volume();
    for i in 0..count as u64 {
        let xi = sample_white_noise(&g, SeedRecord { master: seed, index: i });
        let v = xi.field.values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        csv.push_str(&format!("{i},{mean:e},{var:e},{expected:e}\n"));
        out.snapshot(&format!("noise_{i}.fld"), &xi.field)?;
        out.observations.push(Observation::new(
            format!("site_variance_{i}"),
            var,
            Uncertainty::Stderr(var * (2.0 / (v.len() - 1) as f64).sqrt()),
        ));
    }
    out.csv("noise.csv", csv);
    let config = serde_json::json!({ "grid": grid, "count": count, "seed": seed });
    finish("sample-noise", config, out, stages, common, t0)
}

/// Model parameters for `solve-one`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SolveOneParams {
    pub mass2: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub beta: f64,
    /// Half the degree of `V(y) = y^{2n}/(2n)`.
    pub half_degree: u32,
    pub solver: SolverSettings,
}

/// Solves the one-mode Galerkin equation driven by a white-noise snapshot
/// on a 2-D grid and writes the full field `ξ̃ + ψ̄`.
pub fn solve_one(snapshot: &Path, p: &SolveOneParams, common: &Common) -> Result<Report, CliError> {
    let t0 = Instant::now();
    let mut stages = Stages::default();
    let bytes = std::fs::read(snapshot).map_err(|e| io(snapshot, e))?;
    let xi = read_snapshot(bytes.as_slice())?;
    let sys = GalerkinSystem::new(
        xi.grid().clone(),
        p.mass2,
        &ModeBasis::Single { lambda: p.lambda },
        vec![p.sigma],
        Potential::Poly { n: p.half_degree },
        FProfile::Omega { beta: p.beta },
    )?;
    p.solver.validate()?;
    let xt = sys.filtered_noise(std::slice::from_ref(&xi));
    let sol = stages.time("solve", || solve_galerkin(&sys, &xt, &p.solver, None))?;
    let recomputed = verify_galerkin(&sys, &xt, &sol);
    let phi = xt[0].axpby(1.0, &sol.fields[0], 1.0)?;
    let mut out = Outcome::default();
    let converged = sol.converged as u8 as f64;
    out.assertions.push(Assertion::gt("converged", converged, Uncertainty::Tolerance(0.0), converged, 0.5));
    // the recomputation reapplies the operator with independent rounding
    out.assertions.push(Assertion::lt(
        "recomputed_residual",
        recomputed,
        Uncertainty::Tolerance(0.0),
        recomputed,
        10.0 * p.solver.tolerance,
    ));
    out.observations.push(Observation::new("residual", sol.residual, Uncertainty::Tolerance(p.solver.tolerance)));
    out.observations.push(Observation::new("iterations", sol.iterations as f64, Uncertainty::Tolerance(0.0)));
    out.observations.push(Observation::new("phi_origin", phi.values()[0], Uncertainty::Tolerance(sol.residual)));
    out.csv("trace.csv", sol.trace_csv());
    out.snapshot("solution.fld", &phi)?;
    let config = serde_json::json!({ "snapshot_sha256": config::sha256_hex(&bytes), "params": p });
    finish("solve-one", config, out, stages, common, t0)
}

/// Samples the reference law alone: quadrature of κ̂ for a Galerkin config,
/// pCN chains for a polynomial config.
pub fn gibbs_sample(exp: &Experiment, common: &Common) -> Result<Report, CliError> {
    let t0 = Instant::now();
    let mut stages = Stages::default();
    let mut out = Outcome::default();
    match exp {
        Experiment::GalerkinReduction(c) => gibbs_quadrature(c, &mut stages, &mut out)?,
        Experiment::PolynomialReduction(c) => gibbs_pcn(c, &mut stages, &mut out)?,
        other => {
            return Err(CliError::Usage(format!(
                "gibbs-sample needs a galerkin-reduction or polynomial-reduction config, got {}",
                other.kind().name()
            )))
        }
    }
    finish("gibbs-sample", exp.canonical_json(), out, stages, common, t0)
}

/// Grid points of the tabulated reference CDF.
const CDF_POINTS: usize = 4001;

fn gibbs_quadrature(c: &GalerkinConfig, stages: &mut Stages, out: &mut Outcome) -> Result<(), CliError> {
    let q = stages.time("quadrature", || -> esq_core::Result<_> {
        let k = galerkin_reference_density(c, &c.reference)?;
        esq_core::gibbs::quadrature_reference(&k, CDF_POINTS)
    })?;
    for (j, m) in q.moments.iter().enumerate() {
        out.observations.push(Observation::new(
            format!("m{}", j + 1),
            *m,
            Uncertainty::Tolerance(esq_core::gibbs::QUAD_TOL),
        ));
    }
    let mut csv = String::from("y,cdf\n");
    for (y, f) in q.cdf_y.iter().zip(&q.cdf) {
        csv.push_str(&format!("{y:e},{f:e}\n"));
    }
    out.csv("reference_cdf.csv", csv);
    Ok(())
}

fn gibbs_pcn(c: &PolynomialConfig, stages: &mut Stages, out: &mut Outcome) -> Result<(), CliError> {
    let (r, diag, wick_c) = stages.time("pcn", || polynomial_reference(c))?;
    let mut csv = String::from("observable,mean,stderr\n");
    for ((n, m), s) in r.names.iter().zip(&r.means).zip(&r.stderrs) {
        out.observations.push(Observation::new(n.clone(), *m, Uncertainty::Stderr(*s)));
        csv.push_str(&format!("{n},{m:e},{s:e}\n"));
    }
    out.assertions.push(Assertion::lt(
        "pcn_r_hat",
        diag.r_hat,
        Uncertainty::Tolerance(0.0),
        diag.r_hat,
        experiments::R_HAT_MAX,
    ));
    out.observations.push(Observation::new("wick_c", wick_c, Uncertainty::Tolerance(1e-12)));
    for (i, (a, rho)) in diag.acceptance.iter().zip(&diag.rho).enumerate() {
        out.observations.push(Observation::new(format!("acceptance_{i}"), *a, Uncertainty::Tolerance(0.0)));
        out.observations.push(Observation::new(format!("rho_{i}"), *rho, Uncertainty::Tolerance(0.0)));
    }
    out.csv("reference.csv", csv);
    Ok(())
}
