//! Run configuration: a TOML file naming the experiment plus a `[params]`
//! table. Top-level keys of `[params]` override the experiment defaults;
//! a nested table given by the user replaces the default value whole.

use std::path::Path;

use esq_core::pipeline::{
    BesovStudyConfig, CutoffRemovalConfig, ExponentialConfig, FreeFieldConfig, GalerkinConfig, GmcScalingConfig,
    GridSpec, PolynomialConfig,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FreeFieldCalibration,
    GalerkinReduction,
    ExponentialReduction,
    PolynomialReduction,
    GmcScaling,
    BesovStudy,
    CutoffRemoval,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::FreeFieldCalibration => "free-field-calibration",
            Self::GalerkinReduction => "galerkin-reduction",
            Self::ExponentialReduction => "exponential-reduction",
            Self::PolynomialReduction => "polynomial-reduction",
            Self::GmcScaling => "gmc-scaling",
            Self::BesovStudy => "besov-study",
            Self::CutoffRemoval => "cutoff-removal",
        }
    }
}

/// The file as written by the user.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub params: toml::Table,
}

/// A fully resolved experiment; its canonical JSON defines the config hash.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "experiment", content = "params", rename_all = "kebab-case")]
pub enum Experiment {
    FreeFieldCalibration(FreeFieldConfig),
    GalerkinReduction(GalerkinConfig),
    ExponentialReduction(ExponentialConfig),
    PolynomialReduction(PolynomialConfig),
    GmcScaling(GmcScalingConfig),
    BesovStudy(BesovStudyConfig),
    CutoffRemoval(CutoffRemovalConfig),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn defaults(kind: ExperimentKind) -> Self {
        Self { experiment: kind, params: toml::Table::new() }
    }

    /// The fully resolved default config as TOML.
    pub fn defaults_toml(kind: ExperimentKind) -> Result<String, CliError> {
        let exp = Self::defaults(kind).resolve()?;
        let mut table = toml::Table::try_from(&exp).map_err(|e| CliError::Config(e.to_string()))?;
        let params = table.remove("params").unwrap_or_else(|| toml::Value::Table(toml::Table::new()));
        let mut out = toml::Table::new();
        out.insert("experiment".into(), kind.name().into());
        out.insert("params".into(), params);
        toml::to_string(&out).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.params.insert(key.to_string(), value.into());
    }

    pub fn resolve(&self) -> Result<Experiment, CliError> {
        use ExperimentKind as K;
        let exp = match self.experiment {
            K::FreeFieldCalibration => Experiment::FreeFieldCalibration(merge(FreeFieldConfig::default(), &self.params)?),
            K::GalerkinReduction => Experiment::GalerkinReduction(merge(GalerkinConfig::default(), &self.params)?),
            K::ExponentialReduction => Experiment::ExponentialReduction(merge(ExponentialConfig::default(), &self.params)?),
            K::PolynomialReduction => Experiment::PolynomialReduction(merge(PolynomialConfig::default(), &self.params)?),
            K::GmcScaling => Experiment::GmcScaling(merge(GmcScalingConfig::default(), &self.params)?),
            K::BesovStudy => Experiment::BesovStudy(merge(BesovStudyConfig::default(), &self.params)?),
            K::CutoffRemoval => Experiment::CutoffRemoval(merge(CutoffRemovalConfig::default(), &self.params)?),
        };
        exp.validate()?;
        Ok(exp)
    }
}

fn merge<T: Serialize + serde::de::DeserializeOwned>(defaults: T, user: &toml::Table) -> Result<T, CliError> {
    let mut table = toml::Table::try_from(&defaults).map_err(|e| CliError::Config(e.to_string()))?;
    for (k, v) in user {
        table.insert(k.clone(), v.clone());
    }
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("params.{path}: {}", e.into_inner().message()))
    })
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("params.{field} must be positive, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::Config(format!("params.{field} must be at least {min}, got {v}")))
    }
}

fn grid(g: &GridSpec) -> Result<(), CliError> {
    positive("grid.x_extent", g.x_extent)?;
    at_least("grid.x_points", g.x_points, 2)?;
    for (i, a) in g.z.iter().enumerate() {
        positive(&format!("grid.z[{i}].extent"), a.extent)?;
        at_least(&format!("grid.z[{i}].points"), a.points, 2)?;
    }
    Ok(())
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Self::FreeFieldCalibration(_) => ExperimentKind::FreeFieldCalibration,
            Self::GalerkinReduction(_) => ExperimentKind::GalerkinReduction,
            Self::ExponentialReduction(_) => ExperimentKind::ExponentialReduction,
            Self::PolynomialReduction(_) => ExperimentKind::PolynomialReduction,
            Self::GmcScaling(_) => ExperimentKind::GmcScaling,
            Self::BesovStudy(_) => ExperimentKind::BesovStudy,
            Self::CutoffRemoval(_) => ExperimentKind::CutoffRemoval,
        }
    }

    /// Schema checks beyond types; errors name the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        match self {
            Self::FreeFieldCalibration(c) => {
                grid(&c.grid)?;
                positive("mass2", c.mass2)?;
                positive("sigma", c.sigma)?;
                at_least("samples", c.samples, 2)
            }
            Self::GalerkinReduction(c) => {
                grid(&c.grid)?;
                positive("mass2", c.mass2)?;
                positive("sigma", c.sigma)?;
                positive("beta", c.beta)?;
                at_least("samples", c.samples, 1)
            }
            Self::ExponentialReduction(c) => {
                grid(&c.grid)?;
                positive("mass2", c.mass2)?;
                if c.alphas.is_empty() {
                    return Err(CliError::Config("params.alphas must not be empty".into()));
                }
                at_least("samples", c.samples, 1)
            }
            Self::PolynomialReduction(c) => {
                grid(&c.grid)?;
                positive("mass2", c.mass2)?;
                positive("beta", c.beta)?;
                at_least("half_degree", c.half_degree as usize, 1)?;
                at_least("samples", c.samples, 1)
            }
            Self::GmcScaling(c) => {
                grid(&c.grid)?;
                positive("mass2", c.mass2)?;
                if c.ps.is_empty() {
                    return Err(CliError::Config("params.ps must not be empty".into()));
                }
                at_least("samples", c.samples, 2)
            }
            Self::BesovStudy(c) => {
                grid(&c.grid)?;
                positive("mass2", c.mass2)?;
                at_least("epsilons", c.epsilons.len(), 2)?;
                for (i, e) in c.epsilons.iter().enumerate() {
                    positive(&format!("epsilons[{i}]"), *e)?;
                }
                at_least("samples", c.samples, 2)
            }
            Self::CutoffRemoval(c) => {
                grid(&c.grid)?;
                positive("mass2", c.mass2)?;
                at_least("windows", c.windows.len(), 1)?;
                at_least("samples", c.samples, 2)
            }
        }
    }

    pub fn canonical_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configs serialize to JSON")
    }
}

/// SHA-256 of the compact JSON form; object keys are sorted, so the hash
/// does not depend on the order keys appear in the file.
pub fn config_hash(canonical: &serde_json::Value) -> String {
    sha256_hex(&serde_json::to_vec(canonical).expect("JSON values serialize"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let c = RunConfig::parse("experiment = \"gmc-scaling\"\n[params]\nsampels = 3\n").unwrap();
        let e = c.resolve().unwrap_err().to_string();
        assert!(e.contains("sampels"), "{e}");
        let c = RunConfig::parse("experiment = \"gmc-scaling\"\n[params.grid]\nx_extent = 4.0\nx_points = 8\nbogus = 1\n")
            .unwrap();
        let e = c.resolve().unwrap_err().to_string();
        assert!(e.contains("params.grid") && e.contains("bogus"), "{e}");
        assert!(RunConfig::parse("experiment = \"gmc-scaling\"\nextra = 1\n").is_err());
        assert!(RunConfig::parse("experiment = \"nope\"\n").is_err());
    }

    #[test]
    fn negative_mass_names_the_field() {
        let c = RunConfig::parse("experiment = \"free-field-calibration\"\n[params]\nmass2 = -1.0\n").unwrap();
        let e = c.resolve().unwrap_err().to_string();
        assert!(e.contains("params.mass2"), "{e}");
    }

    #[test]
    fn hash_ignores_key_order_and_tracks_values() {
        let a = RunConfig::parse("experiment = \"besov-study\"\n[params]\nseed = 3\nsamples = 4\n").unwrap();
        let b = RunConfig::parse("experiment = \"besov-study\"\n[params]\nsamples = 4\nseed = 3\n").unwrap();
        let c = RunConfig::parse("experiment = \"besov-study\"\n[params]\nsamples = 4\nseed = 4\n").unwrap();
        let h = |r: &RunConfig| config_hash(&r.resolve().unwrap().canonical_json());
        assert_eq!(h(&a), h(&b));
        assert_ne!(h(&a), h(&c));
        assert_eq!(h(&a).len(), 64);
    }

    #[test]
    fn every_kind_resolves_from_defaults() {
        use ExperimentKind as K;
        for k in [
            K::FreeFieldCalibration,
            K::GalerkinReduction,
            K::ExponentialReduction,
            K::PolynomialReduction,
            K::GmcScaling,
            K::BesovStudy,
            K::CutoffRemoval,
        ] {
            let e = RunConfig::defaults(k).resolve().unwrap();
            assert_eq!(e.kind(), k);
            assert_eq!(e.canonical_json()["experiment"], k.name());
        }
    }
}
