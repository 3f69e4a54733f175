//! Three interactive operations for the static page in `www/`. Each returns
//! a JSON string; the `*_value` functions hold the logic and run natively.
//!
//! Inputs are clamped to sizes a browser tab computes in about a second.

use std::f64::consts::PI;

use esq_core::model::{alpha_max, choose_exponents, Feasibility};
use esq_core::noise::{RegularizationOp, SeedRecord};
use esq_core::pipeline::{galerkin_reference_density, gaussian_field, run_galerkin_samples, GalerkinConfig, GridSpec};
use esq_core::wick::wick_exp;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest lattice side for the 4-D chaos slice.
pub const MAX_SLICE_POINTS: usize = 16;
/// Largest number of solves for the reduced-law histogram.
pub const MAX_REDUCTION_SAMPLES: usize = 4000;

/// `log₁₀` of the chaos density `exp^◇(αX)` on the `z = 0` plane of a
/// `points⁴` torus of side 4, `X = (−Δ+1)^{−1}ξ` at the lattice cutoff.
pub fn gmc_slice_value(alpha: f64, points: usize, seed: u64) -> Result<Value, String> {
    let n = points.clamp(4, MAX_SLICE_POINTS);
    let grid = GridSpec::cube(4.0, n).build().map_err(|e| e.to_string())?;
    let (psi, c) = gaussian_field(&grid, &RegularizationOp::Identity, 1.0, SeedRecord { master: seed, index: 0 })
        .map_err(|e| e.to_string())?;
    let mu = wick_exp(&psi, alpha, &c);
    // axes are (x₁, x₂, z₁, z₂) row-major, so site (i, j, 0, 0) sits at (i·n + j)·n²
    let slice: Vec<f64> = (0..n * n).map(|k| mu.log_density[k * n * n] / std::f64::consts::LN_10).collect();
    Ok(json!({
        "points": n,
        "alpha": alpha,
        "wick_c": c.c,
        "total_mass": mu.total_mass(),
        "volume": grid.volume(),
        "capped_sites": mu.capped,
        "log10_density": slice,
    }))
}

/// The exponent tuple for `α` and a scan of the smallest slack over
/// `α ∈ (0, 1.05·α_max]`.
pub fn feasibility_value(alpha: f64, scan_points: usize) -> Value {
    let am = alpha_max();
    let here = describe(choose_exponents(alpha));
    let scan: Vec<Value> = (1..=scan_points.clamp(2, 400))
        .map(|i| {
            let a = 1.05 * am * i as f64 / scan_points.clamp(2, 400) as f64;
            let f = choose_exponents(a);
            let slack = match &f {
                Feasibility::Feasible { choice, .. } => choice.slacks().constraints_min(),
                Feasibility::Infeasible { best_slack, .. } => *best_slack,
            };
            json!({ "alpha": a, "feasible": matches!(f, Feasibility::Feasible { .. }), "min_slack": slack })
        })
        .collect();
    json!({ "alpha_max": am, "four_pi": 4.0 * PI, "result": here, "scan": scan })
}

fn describe(f: Feasibility) -> Value {
    match f {
        Feasibility::Feasible { choice, min_slack } => {
            let sl = choice.slacks();
            json!({
                "feasible": true,
                "choice": choice,
                "r": choice.r(),
                "slacks": sl,
                "tightest": sl.tightest(),
                "min_slack": min_slack,
            })
        }
        Feasibility::Infeasible { alpha, alpha_max, violated, best_slack } => json!({
            "feasible": false,
            "alpha": alpha,
            "alpha_max": alpha_max,
            "tightest": violated,
            "min_slack": best_slack,
        }),
    }
}

/// Histogram of `φ(0)` from one-mode quartic solves on a 32² torus of side
/// 40, unweighted and reweighted, against the reference density.
pub fn reduced_law_value(samples: usize, beta: f64, seed: u64, bins: usize) -> Result<Value, String> {
    let cfg = GalerkinConfig {
        grid: GridSpec::plane(40.0, 32),
        samples: samples.clamp(10, MAX_REDUCTION_SAMPLES),
        beta,
        seed,
        ..GalerkinConfig::default()
    };
    let run = run_galerkin_samples(&cfg).map_err(|e| e.to_string())?;
    let set = run.sample_set(cfg.upsilon_prefactor).map_err(|e| e.to_string())?;
    let w = set.normalized_weights();
    let kappa = galerkin_reference_density(&cfg, &cfg.reference).map_err(|e| e.to_string())?;

    let bins = bins.clamp(8, 200);
    let half = run.phi0.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1.05;
    let width = 2.0 * half / bins as f64;
    let mut raw = vec![0.0; bins];
    let mut weighted = vec![0.0; bins];
    for (v, wi) in run.phi0.iter().zip(&w) {
        let b = (((v + half) / width) as usize).min(bins - 1);
        raw[b] += 1.0 / (run.phi0.len() as f64 * width);
        weighted[b] += wi / width;
    }
    let centers: Vec<f64> = (0..bins).map(|b| -half + (b as f64 + 0.5) * width).collect();
    let reference: Vec<f64> =
        centers.iter().map(|&y| kappa.log_density(&[y]).map_or(f64::NAN, f64::exp)).collect();
    Ok(json!({
        "samples": run.phi0.len(),
        "beta": beta,
        "ess": set.ess(),
        "unconverged": run.unconverged,
        "hypotheses_pass": run.hypotheses.pass,
        "centers": centers,
        "raw": raw,
        "weighted": weighted,
        "reference": reference,
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gmc_slice(alpha: f64, points: usize, seed: u64) -> Result<String, JsError> {
    to_js(gmc_slice_value(alpha, points, seed))
}

#[wasm_bindgen]
pub fn feasibility(alpha: f64, scan_points: usize) -> String {
    feasibility_value(alpha, scan_points).to_string()
}

#[wasm_bindgen]
pub fn reduced_law(samples: usize, beta: f64, seed: u64, bins: usize) -> Result<String, JsError> {
    to_js(reduced_law_value(samples, beta, seed, bins))
}
