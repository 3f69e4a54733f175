use std::path::Path;
use std::process::{Command, Output};

use esq_cli::report::{Report, RunManifest};
use esq_core::lattice::read_snapshot;

fn esq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esq")).current_dir(dir).args(args).output().expect("esq runs")
}

fn write(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

fn report(dir: &Path) -> Report {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

const FREE_FIELD: &str = r#"
experiment = "free-field-calibration"
[params]
samples = 20000
lambda = 0.5
[params.grid]
x_extent = 16.0
x_points = 32
"#;

const SMALL_GALERKIN: &str = r#"
experiment = "galerkin-reduction"
[params]
samples = 40
[params.grid]
x_extent = 40.0
x_points = 32
[params.estimate]
bootstrap = 50
seed = 0
ess_floor = 10.0
"#;

#[test]
fn free_field_run_passes_and_writes_report() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "ff.toml", FREE_FIELD);
    let o = esq(t.path(), &["run", "--config", "ff.toml", "--out", "a"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&t.path().join("a"));
    assert!(r.pass);
    assert_eq!(r.command, "free-field-calibration");
    assert_eq!(r.config["params"]["samples"], 20000);
    // resolved defaults are echoed too
    assert_eq!(r.config["params"]["mass2"], 1.0);
    let m: RunManifest = serde_json::from_slice(&std::fs::read(t.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.config_hash, r.config_hash);
    for a in &m.artifacts {
        assert!(t.path().join("a").join(a).exists(), "{a}");
    }
}

#[test]
fn negative_mass_is_a_schema_error_naming_the_field() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "bad.toml", "experiment = \"free-field-calibration\"\n[params]\nmass2 = -1.0\n");
    let o = esq(t.path(), &["run", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.mass2"));
    assert!(!t.path().join("esq-out/report.json").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "bad.toml", "experiment = \"besov-study\"\n[params]\nsample = 3\n");
    let o = esq(t.path(), &["run", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sample"));
}

#[test]
fn reduce_with_zero_samples_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "g.toml", SMALL_GALERKIN);
    let o = esq(t.path(), &["reduce", "--config", "g.toml", "--samples", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("samples"));
}

#[test]
fn reduce_rejects_a_config_of_the_wrong_kind() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "ff.toml", FREE_FIELD);
    let o = esq(t.path(), &["reduce", "--config", "ff.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gmc_scaling_writes_the_csv_contract() {
    let t = tempfile::tempdir().unwrap();
    write(
        t.path(),
        "gmc.toml",
        r#"
experiment = "gmc-scaling"
[params]
samples = 2
radii_h = [1.5, 2.5, 4.0, 6.0]
[params.grid]
x_extent = 4.0
x_points = 16
z = [{ extent = 4.0, points = 16 }, { extent = 4.0, points = 16 }]
"#,
    );
    let o = esq(t.path(), &["gmc-scaling", "--config", "gmc.toml", "--out", "g", "--observe-only"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(t.path().join("g/gmc_scaling.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("r,p,E_hat,stderr"));
    // two exponents times four radii, one header
    assert_eq!(lines.count(), 8);
    assert!(!csv[1..].contains("r,p"));
}

#[test]
fn reruns_are_bit_identical_across_thread_counts() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "g.toml", SMALL_GALERKIN);
    let a = esq(t.path(), &["run", "--config", "g.toml", "--out", "a", "--threads", "1", "--observe-only"]);
    let b = esq(t.path(), &["run", "--config", "g.toml", "--out", "b", "--threads", "3", "--observe-only"]);
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    for f in ["report.json", "samples.csv", "snapshots/phi_0.fld"] {
        let x = std::fs::read(t.path().join("a").join(f)).unwrap();
        let y = std::fs::read(t.path().join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    let phi = read_snapshot(std::fs::read(t.path().join("a/snapshots/phi_0.fld")).unwrap().as_slice()).unwrap();
    assert_eq!(phi.grid().dims(), vec![32, 32]);
}

#[test]
fn seed_override_changes_the_hash() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "ff.toml", FREE_FIELD);
    assert!(esq(t.path(), &["run", "--config", "ff.toml", "--out", "a"]).status.success());
    assert!(esq(t.path(), &["run", "--config", "ff.toml", "--out", "b", "--seed", "99"]).status.success());
    let (ra, rb) = (report(&t.path().join("a")), report(&t.path().join("b")));
    assert_ne!(ra.config_hash, rb.config_hash);
    assert_eq!(rb.config["params"]["seed"], 99);
}

#[test]
fn assertions_drive_the_exit_status_unless_observe_only() {
    let t = tempfile::tempdir().unwrap();
    // a zero z-bound cannot be met
    write(t.path(), "g.toml", &format!("{SMALL_GALERKIN}\n[params.tolerances]\nz_max = 0.0\nks_max = 0.0\n"));
    let a = esq(t.path(), &["run", "--config", "g.toml", "--out", "a", "--assert"]);
    assert_eq!(a.status.code(), Some(1));
    let b = esq(t.path(), &["run", "--config", "g.toml", "--out", "b", "--observe-only"]);
    assert_eq!(b.status.code(), Some(0));
    let r = report(&t.path().join("b"));
    assert!(!r.pass);
    assert!(r.assertions.iter().any(|x| !x.pass));
}

#[test]
fn solve_one_reproduces_its_logged_residual() {
    let t = tempfile::tempdir().unwrap();
    let o = esq(t.path(), &["sample-noise", "--x-extent", "40", "--x-points", "32", "--count", "2", "--seed", "7", "--out", "n"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.path().join("n/snapshots/noise_1.fld").exists());
    let snap = "n/snapshots/noise_0.fld";
    let a = esq(t.path(), &["solve-one", "--snapshot", snap, "--out", "s1"]);
    let b = esq(t.path(), &["solve-one", "--snapshot", snap, "--out", "s2"]);
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let residual = |d: &str| {
        report(&t.path().join(d)).observations.iter().find(|o| o.name == "residual").unwrap().value
    };
    assert_eq!(residual("s1").to_bits(), residual("s2").to_bits());
    assert!(residual("s1") <= 1e-10);
    let sol = read_snapshot(std::fs::read(t.path().join("s1/snapshots/solution.fld")).unwrap().as_slice()).unwrap();
    assert!(sol.is_finite());
}

#[test]
fn solve_one_rejects_a_negative_mass() {
    let t = tempfile::tempdir().unwrap();
    assert!(esq(t.path(), &["sample-noise", "--x-extent", "40", "--x-points", "16", "--out", "n"]).status.success());
    let o = esq(t.path(), &["solve-one", "--snapshot", "n/snapshots/noise_0.fld", "--mass2", "-1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("m²"));
}

#[test]
fn gibbs_sample_tabulates_the_reference_cdf() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "g.toml", SMALL_GALERKIN);
    let o = esq(t.path(), &["gibbs-sample", "--config", "g.toml", "--out", "q"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(t.path().join("q/reference_cdf.csv")).unwrap();
    assert!(csv.starts_with("y,cdf\n"));
    let r = report(&t.path().join("q"));
    let m1 = r.observations.iter().find(|o| o.name == "m1").unwrap();
    // the reference law is symmetric
    assert!(m1.value.abs() < 1e-10);
}

#[test]
fn report_merge_detects_config_conflicts() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "ff.toml", FREE_FIELD);
    assert!(esq(t.path(), &["run", "--config", "ff.toml", "--out", "a"]).status.success());
    assert!(esq(t.path(), &["run", "--config", "ff.toml", "--out", "b", "--seed", "5"]).status.success());
    assert!(esq(t.path(), &["run", "--config", "ff.toml", "--out", "c"]).status.success());

    let o = esq(t.path(), &["report-merge", "a/report.json", "b/report.json", "--out", "m"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("free-field-calibration"));

    let o = esq(t.path(), &["report-merge", "a/report.json", "b/report.json", "--allow-conflicts", "--out", "m"]);
    assert!(o.status.success());

    // identical reports collapse to one
    let o = esq(t.path(), &["report-merge", "a/report.json", "c/report.json", "--out", "m2"]);
    assert!(o.status.success());
    let merged: serde_json::Value = serde_json::from_slice(&std::fs::read(t.path().join("m2/merged.json")).unwrap()).unwrap();
    assert_eq!(merged["reports"].as_array().unwrap().len(), 1);
}

#[test]
fn shipped_configs_match_the_printed_defaults() {
    let t = tempfile::tempdir().unwrap();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let kind = path.file_stem().unwrap().to_str().unwrap().to_string();
        let o = esq(t.path(), &["defaults", &kind]);
        assert!(o.status.success(), "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(String::from_utf8(o.stdout).unwrap(), std::fs::read_to_string(&path).unwrap(), "{kind}");
        let cfg = esq_cli::config::RunConfig::load(&path).unwrap();
        assert_eq!(cfg.experiment.name(), kind);
        cfg.resolve().unwrap();
        n += 1;
    }
    assert_eq!(n, 7);
}
