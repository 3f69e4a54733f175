//! `report.json` (deterministic) and `manifest.json` (timings, artifacts).
//! Assertions decide the exit status; observations never do.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every reported number carries one of these.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    /// Monte Carlo standard error.
    Stderr(f64),
    /// Deterministic quantity known to within this absolute tolerance.
    Tolerance(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub uncertainty: Uncertainty,
    /// The test statistic compared against `bound` (for example a z-score).
    pub statistic: f64,
    pub bound: f64,
    /// How `statistic` and `bound` are compared, in words.
    pub criterion: String,
    pub pass: bool,
}

impl Assertion {
    /// `|statistic| ≤ bound`.
    pub fn abs_le(name: impl Into<String>, value: f64, u: Uncertainty, statistic: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            uncertainty: u,
            statistic,
            bound,
            criterion: "abs(statistic) <= bound".into(),
            pass: statistic.abs() <= bound,
        }
    }

    /// `statistic < bound`.
    pub fn lt(name: impl Into<String>, value: f64, u: Uncertainty, statistic: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            uncertainty: u,
            statistic,
            bound,
            criterion: "statistic < bound".into(),
            pass: statistic < bound,
        }
    }

    /// `statistic > bound`.
    pub fn gt(name: impl Into<String>, value: f64, u: Uncertainty, statistic: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            uncertainty: u,
            statistic,
            bound,
            criterion: "statistic > bound".into(),
            pass: statistic > bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub name: String,
    pub value: f64,
    pub uncertainty: Uncertainty,
}

impl Observation {
    pub fn new(name: impl Into<String>, value: f64, uncertainty: Uncertainty) -> Self {
        Self { name: name.into(), value, uncertainty }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Assert,
    ObserveOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config_hash: String,
    /// The fully resolved configuration.
    pub config: serde_json::Value,
    pub mode: Mode,
    pub labels: Vec<String>,
    pub assertions: Vec<Assertion>,
    pub observations: Vec<Observation>,
    /// All assertions pass.
    pub pass: bool,
}

impl Report {
    /// Nonzero only in assert mode with a failing assertion.
    pub fn exit_failed(&self) -> bool {
        self.mode == Mode::Assert && !self.pass
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub stages: Vec<Stage>,
    /// Paths relative to the output directory, including `report.json`.
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergedReport {
    pub reports: Vec<Report>,
    pub pass: bool,
}

/// Concatenates reports. Two reports of the same command with different
/// config hashes conflict unless `allow_conflicts`; identical reports
/// appear once.
pub fn merge_reports(reports: Vec<Report>, allow_conflicts: bool) -> Result<MergedReport, CliError> {
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    let mut out: Vec<Report> = Vec::new();
    let mut conflicts = Vec::new();
    for r in reports {
        match seen.get(&r.command) {
            Some(h) if *h != r.config_hash => conflicts.push(format!("{}: {} vs {}", r.command, h, r.config_hash)),
            Some(_) if out.contains(&r) => continue,
            _ => {
                seen.insert(r.command.clone(), r.config_hash.clone());
            }
        }
        out.push(r);
    }
    if !conflicts.is_empty() && !allow_conflicts {
        return Err(CliError::Conflict(conflicts.join("; ")));
    }
    let pass = out.iter().all(|r| r.pass);
    Ok(MergedReport { reports: out, pass })
}
