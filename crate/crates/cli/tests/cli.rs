use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wkam_cli::ExperimentConfig;

fn wkam(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wkam"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn check<'a>(summary: &'a Value, name: &str) -> &'a Value {
    summary["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap()
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    cfg.command = "weakkam".into();
    cfg.seed = 17;
    cfg.tol = Some(2.5e-3);
    cfg.problem.masses = vec![1.0, 0.5, 2.0];
    cfg.phi.horizon = Some(0.75);
    cfg.holder.scales = vec![0.1, 1.0, 10.0];
    cfg.weakkam.reduced = "planar".into();
    cfg.weakkam.oracle = "rotation_invariant".into();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn config_rejects_unknown_keys() {
    assert!(ExperimentConfig::from_toml("[connect]\nradiu = 2.0\n").is_err());
}

#[test]
fn printed_config_reflects_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.toml");
    std::fs::write(&file, "seed = 9\n[connect]\nradius = 5.0\nsamples = 3\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wkam"))
        .args(["--config", file.to_str().unwrap(), "--print-config", "connect", "--samples", "7"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let cfg = ExperimentConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.connect.radius, 5.0);
    assert_eq!(cfg.connect.samples, 7);
    assert_eq!(cfg.command, "connect");
}

#[test]
fn help_documents_defaults_and_exit_codes() {
    let o = Command::new(env!("CARGO_BIN_EXE_wkam")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[weakkam]") && text.contains("samples = 100") && text.contains("Exit codes"));
}

#[test]
fn connect_certifies_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    let o = wkam(
        dir.path(),
        &["--bodies", "3", "--kappa", "0.5", "connect", "--radius", "1", "--horizon", "2", "--samples", "100"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let lines = std::fs::read_to_string(dir.path().join("connect.jsonl")).unwrap();
    let certs: Vec<Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(certs.len(), 100);
    assert!(certs.iter().all(|c| c["certificate"]["satisfied"] == true));
    let csv = std::fs::read_to_string(dir.path().join("connect_paths.csv")).unwrap();
    assert!(csv.starts_with("sample,t,body0_x0"));
    let s = summary(dir.path());
    assert_eq!(s["pass"], true);
    assert_eq!(s["config"]["connect"]["samples"], 100);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--masses=-1,1,1", "connect"][..],
        &["connect", "--horizon", "0"],
        &["--kappa", "1.5", "phi"],
        &["--masses", "1,1", "connect"],
        &["weakkam", "--oracle", "nonsense"],
        &["weakkam", "--oracle", "u_plus", "--reduced", "planar"],
        &["weakkam", "--spacing", "0.7"],
        &["connect", "--no-such-flag"],
        &[],
    ] {
        let o = wkam(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    let missing = wkam(dir.path(), &["--config", "/nonexistent/exp.toml", "connect"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn outputs_are_deterministic_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "42", "connect", "--samples", "24"];
    wkam(a.path(), &[&["--workers", "1"][..], &args].concat());
    wkam(b.path(), &[&["--workers", "4"][..], &args].concat());
    for name in ["connect.jsonl", "connect_paths.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn failing_check_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // A zero gradient tolerance is unattainable in floating point.
    let o = wkam(dir.path(), &["central", "--restarts", "1", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(summary(dir.path())["pass"], false);
}

#[test]
fn holder_recovers_two_body_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let o = wkam(dir.path(), &["--bodies", "2", "--kappa", "0.5", "holder"]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("holder.json")).unwrap()).unwrap();
    assert!((report["fitted_exponent"].as_f64().unwrap() - 0.5).abs() <= 0.05);
}

#[test]
fn phi_estimates_respect_their_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = wkam(dir.path(), &["--bodies", "2", "phi", "--samples", "3", "--horizon", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = std::fs::read_to_string(dir.path().join("phi.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn weakkam_reports_oracle_defect_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let o = wkam(dir.path(), &["weakkam", "--oracle", "u_minus", "--upper", "10"]);
    let s = summary(dir.path());
    assert!(check(&s, "oracle_defect_ratio")["value"].as_f64().unwrap() >= 1.8);
    for name in ["sup_change_h", "sup_change_h2", "domination_h", "domination_h2"] {
        assert_eq!(check(&s, name)["pass"], true, "{name}");
    }
    // On a truncated domain the fixed-point constant stays at the potential of the outer edge.
    assert_eq!(check(&s, "drift_c_h2")["pass"], false);
    assert_eq!(o.status.code(), Some(1));
    for name in ["report_h.json", "limit_h2.csv", "limit_h2.dat", "weakkam.jsonl"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn parabolic_quadrature_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = wkam(dir.path(), &["--bodies", "3", "--kappa", "0.5", "parabolic"]);
    assert_eq!(o.status.code(), Some(0));
    let s = summary(dir.path());
    assert!(check(&s, "relative_action_error")["value"].as_f64().unwrap() < 1e-3);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("parabolic.json")).unwrap()).unwrap();
    assert!((report["u0"].as_f64().unwrap() - 3.0).abs() < 1e-8);
}
