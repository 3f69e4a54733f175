//! Reweighting harness: `Υ_f` log-weights, self-normalized estimates of the
//! slice law and statistical comparison against Gibbs references.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{McmcChain, QuadratureReference};
use crate::lattice::{check_same, RealField};
use crate::model::{Cutoffs, DerivativeReading, Potential};
use crate::rng::stream;
use crate::solver::GalerkinSystem;

/// The constant in front of `∫ f̃′ g V` in `log Υ_f`.
pub const UPSILON_PREFACTOR: f64 = 4.0;

/// `prefactor·Σ f′·g·V(φ)·cellvol` for a field on the full grid.
pub fn upsilon_log_weight(phi: &RealField, cutoffs: &Cutoffs, potential: &Potential, prefactor: f64) -> Result<f64> {
    let grid = phi.grid();
    let fp = cutoffs.f_prime_field(grid);
    let g = cutoffs.g_field(grid);
    let s: f64 = phi
        .values()
        .iter()
        .zip(fp.values())
        .zip(g.values())
        .filter(|((_, f), g)| **f != 0.0 && **g != 0.0)
        .map(|((p, f), g)| f * g * potential.value(*p))
        .sum();
    finite(prefactor * s * grid.cell_volume())
}

/// `prefactor·Σ_x f̃′(|x|²)·V_n(φ(x))·cellvol` for the projected system.
pub fn upsilon_log_weight_galerkin(
    sys: &GalerkinSystem,
    phi: &[RealField],
    reading: DerivativeReading,
    prefactor: f64,
) -> Result<f64> {
    if phi.len() != sys.modes() {
        return Err(Error::ShapeMismatch { expected: sys.modes(), found: phi.len() });
    }
    let grid = &sys.grid;
    let mut y = vec![0.0; sys.modes()];
    let mut s = 0.0;
    for i in 0..grid.len() {
        let (x2, _) = grid.radius2_split(i);
        let fp = match reading {
            DerivativeReading::SquaredArgument => sys.f.deriv(x2),
            DerivativeReading::Radial => 2.0 * x2.sqrt() * sys.f.deriv(x2),
        };
        if fp == 0.0 {
            continue;
        }
        for (k, p) in phi.iter().enumerate() {
            y[k] = p.values()[i];
        }
        s += fp * sys.vn(&y);
    }
    finite(prefactor * s * grid.cell_volume())
}

/// Wick-power form: `(prefactor/2n)·Σ_k C(2n,k)·⟨σ_k θ^{2n−k}, f′⟩`, i.e.
/// `prefactor·∫ f′·H_{2n}(ψ₀ + θ; c)/(2n)`. `powers` holds `σ_0..σ_{2n}`.
pub fn upsilon_log_weight_wick(powers: &[RealField], theta: &RealField, f_prime: &RealField, prefactor: f64) -> Result<f64> {
    if powers.len() < 3 || powers.len() % 2 == 0 {
        return Err(Error::InvalidParameter(format!("expected σ_0..σ_2n, got {} fields", powers.len())));
    }
    check_same(theta.grid(), f_prime.grid())?;
    for p in powers {
        check_same(p.grid(), theta.grid())?;
    }
    let d = powers.len() - 1;
    let binom: Vec<f64> = (0..=d).map(|k| (0..k).fold(1.0, |a, i| a * (d - i) as f64 / (i + 1) as f64)).collect();
    let t = theta.values();
    let s: f64 = (0..t.len())
        .filter(|&i| f_prime.values()[i] != 0.0)
        .map(|i| {
            let mut acc = 0.0;
            for (k, p) in powers.iter().enumerate() {
                acc += binom[k] * p.values()[i] * t[i].powi((d - k) as i32);
            }
            acc * f_prime.values()[i]
        })
        .sum();
    finite(prefactor / d as f64 * s * theta.grid().cell_volume())
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("log Υ_f overflowed".into()))
    }
}

/// Per-sample observables and log-weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedSampleSet {
    pub names: Vec<String>,
    /// `values[sample][observable]`.
    pub values: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    /// Samples dropped because their weight overflowed or the solve failed.
    pub rejected: usize,
}

impl WeightedSampleSet {
    pub fn new(names: Vec<String>, values: Vec<Vec<f64>>, log_weights: Vec<f64>) -> Result<Self> {
        if values.len() != log_weights.len() {
            return Err(Error::ShapeMismatch { expected: values.len(), found: log_weights.len() });
        }
        if let Some(v) = values.iter().find(|v| v.len() != names.len()) {
            return Err(Error::ShapeMismatch { expected: names.len(), found: v.len() });
        }
        if log_weights.iter().any(|w| !w.is_finite()) || values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample set entries must be finite".into()));
        }
        Ok(Self { names, values, log_weights, rejected: 0 })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Self-normalized weights; bit-identical under any common log-weight
    /// shift that is itself exact in floating point.
    pub fn normalized_weights(&self) -> Vec<f64> {
        normalize(&self.log_weights)
    }

    /// `(Σw)²/Σw²`.
    pub fn ess(&self) -> f64 {
        let w = self.normalized_weights();
        1.0 / w.iter().map(|v| v * v).sum::<f64>()
    }

    /// `log Z_f ≈ log mean Υ_f`, reported as a by-product.
    pub fn log_z(&self) -> f64 {
        let m = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + (self.log_weights.iter().map(|w| (w - m).exp()).sum::<f64>() / self.len() as f64).ln()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown observable {name}")))?;
        Ok(self.values.iter().map(|v| v[j]).collect())
    }

    /// `sample_id, observables…, log_weight`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("sample_id,{},log_weight\n", self.names.join(","));
        for (i, (v, w)) in self.values.iter().zip(&self.log_weights).enumerate() {
            let cols: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(s, "{i},{},{w:e}", cols.join(","));
        }
        s
    }
}

fn normalize(log_w: &[f64]) -> Vec<f64> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Moments 1–4 of a scalar, named `m1..m4`.
pub fn moment_names() -> Vec<String> {
    (1..=4).map(|j| format!("m{j}")).collect()
}

pub fn moments_of(x: f64) -> Vec<f64> {
    vec![x, x * x, x * x * x, x * x * x * x]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateOptions {
    pub bootstrap: usize,
    pub seed: u64,
    pub ess_floor: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { bootstrap: 1000, seed: 0, ess_floor: 200.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedLaw {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub ess: f64,
    pub n_samples: usize,
    pub log_z: f64,
}

impl ReducedLaw {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.names.iter().position(|n| n == name).map(|j| (self.means[j], self.stderrs[j]))
    }
}

fn weighted_means(values: &[Vec<f64>], log_w: &[f64], idx: impl Iterator<Item = usize> + Clone, k: usize) -> Vec<f64> {
    let m = idx.clone().map(|i| log_w[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut acc = vec![0.0; k];
    let mut wsum = 0.0;
    for i in idx {
        let w = (log_w[i] - m).exp();
        wsum += w;
        for (a, v) in acc.iter_mut().zip(&values[i]) {
            *a += w * v;
        }
    }
    acc.into_iter().map(|a| a / wsum).collect()
}

/// Self-normalized means with bootstrap standard errors.
pub fn reduced_law_estimate(set: &WeightedSampleSet, opts: &EstimateOptions) -> Result<ReducedLaw> {
    if set.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let ess = set.ess();
    if ess < opts.ess_floor {
        return Err(Error::InsufficientData(format!("ESS {ess:.1} below floor {}", opts.ess_floor)));
    }
    let n = set.len();
    let k = set.names.len();
    let means = weighted_means(&set.values, &set.log_weights, 0..n, k);
    let mut rng = stream(opts.seed, 0);
    let mut sum = vec![0.0; k];
    let mut sum2 = vec![0.0; k];
    for _ in 0..opts.bootstrap {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let b = weighted_means(&set.values, &set.log_weights, idx.iter().copied(), k);
        for j in 0..k {
            sum[j] += b[j];
            sum2[j] += b[j] * b[j];
        }
    }
    let nb = opts.bootstrap as f64;
    let stderrs = (0..k)
        .map(|j| if nb > 1.0 { ((sum2[j] - sum[j] * sum[j] / nb) / (nb - 1.0)).max(0.0).sqrt() } else { 0.0 })
        .collect();
    Ok(ReducedLaw { names: set.names.clone(), means, stderrs, ess, n_samples: n, log_z: set.log_z() })
}

/// Weighted empirical CDF as sorted `(x, F(x))` steps.
pub fn weighted_cdf(x: &[f64], log_w: &[f64]) -> Vec<(f64, f64)> {
    let w = normalize(log_w);
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(w).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    pairs
        .into_iter()
        .map(|(v, w)| {
            acc += w;
            (v, acc)
        })
        .collect()
}

fn step_eval(steps: &[(f64, f64)], y: f64) -> f64 {
    let i = steps.partition_point(|s| s.0 <= y);
    if i == 0 {
        0.0
    } else {
        steps[i - 1].1
    }
}

/// Kolmogorov–Smirnov distance of a weighted sample against a continuous CDF.
pub fn ks_against(x: &[f64], log_w: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let steps = weighted_cdf(x, log_w);
    let mut prev = 0.0;
    let mut d: f64 = 0.0;
    for &(v, f) in &steps {
        let r = cdf(v);
        d = d.max((f - r).abs()).max((prev - r).abs());
        prev = f;
    }
    d
}

/// Two-sample weighted KS distance.
pub fn ks_two_sample(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> f64 {
    let sa = weighted_cdf(a, wa);
    let sb = weighted_cdf(b, wb);
    sa.iter()
        .chain(&sb)
        .map(|&(v, _)| (step_eval(&sa, v) - step_eval(&sb, v)).abs())
        .fold(0.0, f64::max)
}

/// Reference side of a comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reference {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub cdf: Option<ReferenceCdf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceCdf {
    Table(QuadratureReference),
    Empirical { values: Vec<f64>, log_weights: Vec<f64> },
}

impl Reference {
    /// Moments `m1..m4` and the CDF of a one-mode quadrature.
    pub fn from_quadrature(q: &QuadratureReference) -> Self {
        Self { names: moment_names(), means: q.moments.to_vec(), stderrs: vec![0.0; 4], cdf: Some(ReferenceCdf::Table(q.clone())) }
    }

    /// Chain averages of `obs`, with ESS-based errors.
    pub fn from_chains(chains: &[McmcChain], names: Vec<String>, obs: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let k = names.len();
        let mut means = vec![0.0; k];
        let mut stderrs = vec![0.0; k];
        for j in 0..k {
            let (m, s) = crate::gibbs::chain_mean(chains, |w| obs(w)[j]);
            means[j] = m;
            stderrs[j] = s;
        }
        Self { names, means, stderrs, cdf: None }
    }

    /// A reference built from another estimate (e.g. identical sample sets).
    pub fn from_law(law: &ReducedLaw, cdf: Option<ReferenceCdf>) -> Self {
        Self { names: law.names.clone(), means: law.means.clone(), stderrs: law.stderrs.clone(), cdf }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub z_max: f64,
    pub ks_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { z_max: 3.0, ks_max: 0.05 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservableRow {
    pub name: String,
    pub estimate: f64,
    pub estimate_err: f64,
    pub reference: f64,
    pub reference_err: f64,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionReport {
    pub rows: Vec<ObservableRow>,
    /// KS distance on the marginal, with the bound it is tested against.
    pub ks: Option<f64>,
    pub ks_bound: f64,
    pub z_bound: f64,
    pub ess: f64,
    pub n_samples: usize,
    pub log_z: f64,
    pub labels: Vec<String>,
    pub pass: bool,
    pub config: serde_json::Value,
}

impl ReductionReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// z-scores per observable and KS on `marginal` (an observable of `set`);
/// passes iff every `|z| ≤ z_max` and `KS ≤ ks_max`.
pub fn compare_to_reference(
    law: &ReducedLaw,
    set: &WeightedSampleSet,
    marginal: Option<&str>,
    reference: &Reference,
    tol: &Tolerances,
) -> Result<ReductionReport> {
    let mut rows = Vec::new();
    for (j, name) in reference.names.iter().enumerate() {
        let (est, err) = law
            .get(name)
            .ok_or_else(|| Error::InvalidParameter(format!("observable {name} missing on the estimate side")))?;
        let (r, rerr) = (reference.means[j], reference.stderrs[j]);
        let se = (err * err + rerr * rerr).sqrt();
        let z = if est == r {
            0.0
        } else if se > 0.0 {
            (est - r) / se
        } else {
            f64::INFINITY.copysign(est - r)
        };
        rows.push(ObservableRow { name: name.clone(), estimate: est, estimate_err: err, reference: r, reference_err: rerr, z });
    }
    if rows.len() != law.names.len() {
        return Err(Error::InvalidParameter("observable sets differ between estimate and reference".into()));
    }
    let ks = match (marginal, &reference.cdf) {
        (Some(m), Some(cdf)) => {
            let x = set.column(m)?;
            Some(match cdf {
                ReferenceCdf::Table(q) => ks_against(&x, &set.log_weights, |y| q.cdf_at(y)),
                ReferenceCdf::Empirical { values, log_weights } => ks_two_sample(&x, &set.log_weights, values, log_weights),
            })
        }
        (Some(_), None) => return Err(Error::InvalidParameter("reference has no CDF for the KS test".into())),
        _ => None,
    };
    let pass = rows.iter().all(|r| r.z.abs() <= tol.z_max) && ks.is_none_or(|d| d <= tol.ks_max);
    Ok(ReductionReport {
        rows,
        ks,
        ks_bound: tol.ks_max,
        z_bound: tol.z_max,
        ess: law.ess,
        n_samples: law.n_samples,
        log_z: law.log_z,
        labels: Vec::new(),
        pass,
        config: serde_json::Value::Null,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrendRow {
    pub window: usize,
    pub name: String,
    pub estimate: f64,
    pub err: f64,
    /// Difference to the previous window and its combined error.
    pub cauchy_diff: Option<f64>,
    pub cauchy_err: Option<f64>,
}

/// Runs `estimate` on each nested window and tabulates successive differences.
pub fn cutoff_removal_study(
    windows: usize,
    mut estimate: impl FnMut(usize) -> Result<ReducedLaw>,
) -> Result<Vec<TrendRow>> {
    let mut rows = Vec::new();
    let mut prev: Option<ReducedLaw> = None;
    for w in 0..windows {
        let law = estimate(w)?;
        for (j, name) in law.names.iter().enumerate() {
            let (cd, ce) = match &prev {
                Some(p) => {
                    let (pm, pe) = p.get(name).ok_or_else(|| Error::InvalidParameter("observable sets differ across windows".into()))?;
                    (Some(law.means[j] - pm), Some((law.stderrs[j].powi(2) + pe * pe).sqrt()))
                }
                None => (None, None),
            };
            rows.push(TrendRow { window: w, name: name.clone(), estimate: law.means[j], err: law.stderrs[j], cauchy_diff: cd, cauchy_err: ce });
        }
        prev = Some(law);
    }
    Ok(rows)
}

pub fn trend_csv(rows: &[TrendRow]) -> String {
    let mut s = String::from("window,observable,estimate,err,cauchy_diff,cauchy_err\n");
    for r in rows {
        let o = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{:e},{:e},{},{}", r.window, r.name, r.estimate, r.err, o(r.cauchy_diff), o(r.cauchy_err));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{quadrature_reference, KappaHatDensity};
    use crate::lattice::Grid;
    use crate::model::{FProfile, GProfile};
    use crate::solver::ModeBasis;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn omega_cutoffs() -> Cutoffs {
        Cutoffs { f: FProfile::Omega { beta: 0.2 }, g: GProfile::One, reading: DerivativeReading::SquaredArgument }
    }

    #[test]
    fn trivial_weights_are_zero() {
        let g = Grid::new((8.0, 16), &[(4.0, 4)]).unwrap();
        let phi = RealField::from_fn(&g, |c| c[0] + c[2]);
        let flat = Cutoffs::none();
        assert_eq!(upsilon_log_weight(&phi, &flat, &Potential::Poly { n: 2 }, 4.0).unwrap(), 0.0);
        assert_eq!(upsilon_log_weight(&phi, &omega_cutoffs(), &Potential::Zero, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn single_site_weight_matches_direct_evaluation() {
        let g = Grid::new((8.0, 16), &[(4.0, 8)]).unwrap();
        let site = g.flat_index(&[3, 14, 2]);
        let mut v = vec![0.0; g.len()];
        v[site] = 1.3;
        let phi = RealField::from_vec(&g, v).unwrap();
        let c = Cutoffs { g: GProfile::Bump { radius: 1.5 }, ..omega_cutoffs() };
        let pot = Potential::Poly { n: 2 };
        let x = g.coords(site);
        let t = x[0] * x[0] + x[1] * x[1];
        let want = 4.0 * c.f.deriv(t) * c.g.value(x[2].abs()) * pot.value(1.3) * g.cell_volume();
        let got = upsilon_log_weight(&phi, &c, &pot, 4.0).unwrap();
        assert!((got - want).abs() < 1e-15 * want.abs().max(1.0), "{got} vs {want}");
        assert!(got < 0.0);
    }

    #[test]
    fn galerkin_weight_matches_full_field_form_for_one_mode() {
        let g = Grid::new((10.0, 16), &[]).unwrap();
        let sys = GalerkinSystem::new(
            g.clone(),
            1.0,
            &ModeBasis::Single { lambda: 0.0 },
            vec![1.0],
            Potential::Poly { n: 2 },
            FProfile::Omega { beta: 0.2 },
        )
        .unwrap();
        let phi = RealField::from_fn(&g, |c| (c[0] * 0.3).sin() + c[1] * 0.1);
        let a = upsilon_log_weight_galerkin(&sys, &[phi.clone()], DerivativeReading::SquaredArgument, 4.0).unwrap();
        let b = upsilon_log_weight(&phi, &omega_cutoffs(), &Potential::Poly { n: 2 }, 4.0).unwrap();
        assert!((a - b).abs() < 1e-12 * b.abs());
    }

    #[test]
    fn wick_weight_is_the_wick_quartic() {
        // σ_k = H_k(ψ; c) makes the sum collapse to H_4(ψ + θ; c)
        let g = Grid::new((6.0, 8), &[(2.0, 4)]).unwrap();
        let c = 0.07;
        let psi = RealField::from_fn(&g, |x| 0.3 * (x[0] - x[2]).cos());
        let theta = RealField::from_fn(&g, |x| 0.2 * x[1].sin());
        let powers: Vec<RealField> = (0..=4).map(|k| psi.map(|v| crate::wick::hermite(k, v, c))).collect();
        let fp = omega_cutoffs().f_prime_field(&g);
        let got = upsilon_log_weight_wick(&powers, &theta, &fp, 4.0).unwrap();
        let want: f64 = (0..g.len())
            .map(|i| fp.values()[i] * crate::wick::hermite(4, psi.values()[i] + theta.values()[i], c))
            .sum::<f64>()
            * g.cell_volume();
        assert!((got - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn equal_weights_give_plain_means_and_point_mass_picks_a_sample() {
        let set = WeightedSampleSet::new(vec!["x".into()], vec![vec![1.0], vec![2.0], vec![6.0]], vec![0.3; 3]).unwrap();
        let law = reduced_law_estimate(&set, &EstimateOptions { ess_floor: 1.0, ..Default::default() }).unwrap();
        assert!((law.means[0] - 3.0).abs() < 1e-15);
        assert!((set.ess() - 3.0).abs() < 1e-12);
        let set = WeightedSampleSet::new(vec!["x".into()], vec![vec![1.5], vec![2.0]], vec![0.0, f64::MIN]).unwrap();
        let law = reduced_law_estimate(&set, &EstimateOptions { ess_floor: 1.0, ..Default::default() }).unwrap();
        assert_eq!(law.means[0], 1.5);
    }

    #[test]
    fn ess_floor_and_bad_inputs_are_rejected() {
        let set = WeightedSampleSet::new(vec!["x".into()], vec![vec![1.0]; 10], vec![0.0; 10]).unwrap();
        assert!(matches!(reduced_law_estimate(&set, &EstimateOptions::default()), Err(Error::InsufficientData(_))));
        assert!(WeightedSampleSet::new(vec!["x".into()], vec![vec![1.0]], vec![f64::NAN]).is_err());
    }

    fn gaussian_set(n: usize, seed: u64, shift: f64, log_w: impl Fn(f64) -> f64) -> WeightedSampleSet {
        let mut rng = stream(seed, 0);
        let mut vals = Vec::new();
        let mut lw = Vec::new();
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = shift + z / (4.0 * PI).sqrt();
            vals.push(moments_of(x));
            lw.push(log_w(x));
        }
        WeightedSampleSet::new(moment_names(), vals, lw).unwrap()
    }

    #[test]
    fn estimates_are_invariant_under_weight_scaling() {
        // dyadic log-weights so that the shift itself is exact
        let a = gaussian_set(500, 1, 0.0, |x| (-x * x * 1024.0).round() / 1024.0);
        let mut b = a.clone();
        b.log_weights.iter_mut().for_each(|w| *w += 123.0);
        let o = EstimateOptions { ess_floor: 1.0, bootstrap: 50, seed: 2 };
        let la = reduced_law_estimate(&a, &o).unwrap();
        let lb = reduced_law_estimate(&b, &o).unwrap();
        assert_eq!(la.means, lb.means);
        assert_eq!(la.stderrs, lb.stderrs);
    }

    #[test]
    fn identical_sets_compare_perfectly() {
        let set = gaussian_set(2000, 3, 0.0, |_| 0.0);
        let law = reduced_law_estimate(&set, &EstimateOptions::default()).unwrap();
        let r = Reference::from_law(
            &law,
            Some(ReferenceCdf::Empirical { values: set.column("m1").unwrap(), log_weights: set.log_weights.clone() }),
        );
        let rep = compare_to_reference(&law, &set, Some("m1"), &r, &Tolerances::default()).unwrap();
        assert!(rep.rows.iter().all(|r| r.z == 0.0));
        assert_eq!(rep.ks, Some(0.0));
        assert!(rep.pass);
    }

    #[test]
    fn reweighted_gaussian_matches_quadrature_and_shift_fails() {
        // N(0, 1/4π) draws reweighted by exp(−4π y⁴/4) target the quartic κ̂¹
        let k = KappaHatDensity::single(4.0 * PI, 4.0 * PI, Potential::Poly { n: 2 }).unwrap();
        let q = quadrature_reference(&k, 2001).unwrap();
        let reference = Reference::from_quadrature(&q);
        let set = gaussian_set(10_000, 5, 0.0, |x| -PI * x.powi(4));
        let law = reduced_law_estimate(&set, &EstimateOptions::default()).unwrap();
        let rep = compare_to_reference(&law, &set, Some("m1"), &reference, &Tolerances::default()).unwrap();
        assert!(rep.pass, "{:?}", rep.rows);
        assert!(rep.ks.unwrap() < 0.05);
        let shifted = gaussian_set(10_000, 5, 0.1, |x| -PI * (x - 0.1).powi(4));
        let law = reduced_law_estimate(&shifted, &EstimateOptions::default()).unwrap();
        let rep = compare_to_reference(&law, &shifted, Some("m1"), &reference, &Tolerances::default()).unwrap();
        assert!(!rep.pass);
        assert!(rep.rows[0].z.abs() > 3.0);
    }

    #[test]
    fn ks_of_a_large_free_sample_is_small() {
        let k = KappaHatDensity::single(4.0 * PI, 4.0 * PI, Potential::Zero).unwrap();
        let q = quadrature_reference(&k, 2001).unwrap();
        let set = gaussian_set(10_000, 8, 0.0, |_| 0.0);
        let d = ks_against(&set.column("m1").unwrap(), &set.log_weights, |y| q.cdf_at(y));
        // 1.36/√n is the 5% critical value
        assert!(d < 1.36 / 100.0, "{d}");
    }

    #[test]
    fn cutoff_study_reports_cauchy_differences() {
        let rows = cutoff_removal_study(3, |w| {
            Ok(ReducedLaw {
                names: vec!["x".into()],
                means: vec![1.0 - 0.5f64.powi(w as i32)],
                stderrs: vec![0.01],
                ess: 1000.0,
                n_samples: 1000,
                log_z: 0.0,
            })
        })
        .unwrap();
        assert_eq!(rows[0].cauchy_diff, None);
        assert!((rows[2].cauchy_diff.unwrap() - 0.25).abs() < 1e-15);
        assert!(trend_csv(&rows).starts_with("window,observable,estimate,err,cauchy_diff,cauchy_err\n"));
    }

    #[test]
    fn sample_csv_has_header() {
        let set = WeightedSampleSet::new(vec!["a".into(), "b".into()], vec![vec![1.0, 2.0]], vec![-0.5]).unwrap();
        assert!(set.to_csv().starts_with("sample_id,a,b,log_weight\n0,"));
    }
}
