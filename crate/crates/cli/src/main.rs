use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use esq_cli::config::{ExperimentKind, RunConfig};
use esq_cli::report::{merge_reports, Mode, Report};
use esq_cli::{CliError, Common, SolveOneParams};
use esq_core::pipeline::{AxisSpec, GridSpec};
use esq_core::solver::SolverSettings;

#[derive(Parser)]
#[command(name = "esq", version, about = "Elliptic stochastic quantization experiments on periodic lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = "esq-out")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Failed assertions give exit status 1 (the default).
    #[arg(long = "assert", conflicts_with = "observe_only")]
    assert_mode: bool,
    /// Record assertions without letting them affect the exit status.
    #[arg(long)]
    observe_only: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `params.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write white-noise snapshots.
    SampleNoise {
        #[arg(long)]
        x_extent: f64,
        #[arg(long)]
        x_points: usize,
        /// Internal axes, all of the same extent and size.
        #[arg(long, default_value_t = 0)]
        z_axes: usize,
        #[arg(long, default_value_t = 1.0)]
        z_extent: f64,
        #[arg(long, default_value_t = 8)]
        z_points: usize,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve the one-mode Galerkin equation for a 2-D noise snapshot.
    SolveOne {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        mass2: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
        /// `V(y) = y^{2n}/(2n)`.
        #[arg(long, default_value_t = 2)]
        half_degree: u32,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Reweighted reduction (galerkin-reduction or polynomial-reduction config).
    Reduce {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `params.samples`.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// GMC ball-moment scaling; defaults apply without a config.
    GmcScaling {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Besov norms of the mollified chaos along an ε ladder.
    Besov {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Reference law alone: quadrature (galerkin config) or pCN (polynomial config).
    GibbsSample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print the fully resolved default config of an experiment kind.
    Defaults {
        /// free-field-calibration, galerkin-reduction, exponential-reduction,
        /// polynomial-reduction, gmc-scaling, besov-study or cutoff-removal.
        kind: String,
    },
    /// Concatenate reports, refusing differing configs for the same command.
    ReportMerge {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        allow_conflicts: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl CommonArgs {
    fn resolve(&self) -> Result<Common, CliError> {
        if self.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build_global()
                .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
        }
        Ok(Common {
            out: self.out.clone(),
            mode: if self.observe_only { Mode::ObserveOnly } else { Mode::Assert },
            threads: rayon::current_num_threads(),
        })
    }
}

fn load(
    path: Option<&PathBuf>,
    default_kind: ExperimentKind,
    allowed: &[ExperimentKind],
    seed: Option<u64>,
    samples: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::defaults(default_kind),
    };
    if !allowed.contains(&cfg.experiment) {
        let names: Vec<&str> = allowed.iter().map(|k| k.name()).collect();
        return Err(CliError::Usage(format!(
            "this command takes a {} config, got {}",
            names.join(" or "),
            cfg.experiment.name()
        )));
    }
    if let Some(s) = seed {
        cfg.set("seed", s as i64);
    }
    if let Some(n) = samples {
        cfg.set("samples", n as i64);
    }
    Ok(cfg)
}

const ALL: [ExperimentKind; 7] = [
    ExperimentKind::FreeFieldCalibration,
    ExperimentKind::GalerkinReduction,
    ExperimentKind::ExponentialReduction,
    ExperimentKind::PolynomialReduction,
    ExperimentKind::GmcScaling,
    ExperimentKind::BesovStudy,
    ExperimentKind::CutoffRemoval,
];

fn dispatch(cmd: Command) -> Result<Report, CliError> {
    use ExperimentKind as K;
    match cmd {
        Command::Run { config, seed, common } => {
            let cfg = load(Some(&config), K::FreeFieldCalibration, &ALL, seed, None)?;
            esq_cli::run_experiment(&cfg.resolve()?, &common.resolve()?)
        }
        Command::SampleNoise { x_extent, x_points, z_axes, z_extent, z_points, count, seed, common } => {
            let grid = GridSpec {
                x_extent,
                x_points,
                z: vec![AxisSpec { extent: z_extent, points: z_points }; z_axes],
            };
            esq_cli::sample_noise(&grid, count as usize, seed, &common.resolve()?)
        }
        Command::SolveOne { snapshot, mass2, lambda, sigma, beta, half_degree, common } => {
            let p = SolveOneParams { mass2, lambda, sigma, beta, half_degree, solver: SolverSettings::default() };
            esq_cli::solve_one(&snapshot, &p, &common.resolve()?)
        }
        Command::Reduce { config, samples, seed, common } => {
            let cfg = load(Some(&config), K::GalerkinReduction, &[K::GalerkinReduction, K::PolynomialReduction], seed, samples)?;
            esq_cli::run_experiment(&cfg.resolve()?, &common.resolve()?)
        }
        Command::GmcScaling { config, samples, seed, common } => {
            let cfg = load(config.as_ref(), K::GmcScaling, &[K::GmcScaling], seed, samples)?;
            esq_cli::run_experiment(&cfg.resolve()?, &common.resolve()?)
        }
        Command::Besov { config, samples, seed, common } => {
            let cfg = load(config.as_ref(), K::BesovStudy, &[K::BesovStudy], seed, samples)?;
            esq_cli::run_experiment(&cfg.resolve()?, &common.resolve()?)
        }
        Command::GibbsSample { config, seed, common } => {
            let cfg = load(Some(&config), K::GalerkinReduction, &[K::GalerkinReduction, K::PolynomialReduction], seed, None)?;
            esq_cli::gibbs_sample(&cfg.resolve()?, &common.resolve()?)
        }
        Command::Defaults { .. } => unreachable!("handled before dispatch"),
        Command::ReportMerge { reports, allow_conflicts, common } => {
            let common = common.resolve()?;
            let mut parsed = Vec::new();
            for p in &reports {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                parsed.push(serde_json::from_str::<Report>(&text)?);
            }
            let merged = merge_reports(parsed, allow_conflicts)?;
            std::fs::create_dir_all(&common.out).map_err(|e| CliError::Io(e.to_string()))?;
            let path = common.out.join("merged.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&merged)?).map_err(|e| CliError::Io(e.to_string()))?;
            // a summary report so the exit status follows the merged verdict
            let all: Vec<_> = merged.reports.iter().flat_map(|r| r.assertions.clone()).collect();
            Ok(Report {
                command: "report-merge".into(),
                config_hash: String::new(),
                config: serde_json::Value::Null,
                mode: common.mode,
                labels: Vec::new(),
                assertions: all,
                observations: Vec::new(),
                pass: merged.pass,
            })
        }
    }
}

fn print_defaults(kind: &str) -> Result<(), CliError> {
    let kind: ExperimentKind = toml::Value::String(kind.to_string())
        .try_into()
        .map_err(|_| CliError::Usage(format!("unknown experiment kind {kind:?}")))?;
    print!("{}", RunConfig::defaults_toml(kind)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Defaults { kind } = &cli.command {
        return match print_defaults(kind) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("esq: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        };
    }
    match dispatch(cli.command) {
        Ok(report) => {
            for a in &report.assertions {
                println!(
                    "{} {}: statistic {:.4e} ({}, bound {:.4e})",
                    if a.pass { "PASS" } else { "FAIL" },
                    a.name,
                    a.statistic,
                    a.criterion,
                    a.bound
                );
            }
            println!("{}: {}", report.command, if report.pass { "pass" } else { "fail" });
            if report.exit_failed() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("esq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
