use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subcrit"))
        .current_dir(dir)
        .args(args)
        .args(["--out", dir.join("out").to_str().unwrap()])
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

#[test]
fn verify_constants_passes_by_default() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["verify-constants"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(tmp.path(), "constants.json");
    assert_eq!(report["checks"].as_array().unwrap().len(), 5);
    let closed = report["checks"][0]["frakB_closed"].as_f64().unwrap();
    assert!((closed - 3f64.sqrt() * PI * PI / 16.0).abs() < 1e-12);
    assert!(report["pass"].as_bool().unwrap());
}

#[test]
fn verify_constants_reports_unattainable_tolerance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"tolerances": {"frak_b": 1e-30}}"#);
    let out = run(tmp.path(), &["verify-constants", "--config", &cfg, "--n", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frakB"));
    let report = read_json(tmp.path(), "constants.json");
    assert!(report["checks"][0]["frak_b_rel_error"].as_f64().unwrap() > 0.0);
}

#[test]
fn robin_on_ball_and_cube() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["robin", "--n", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let cp = read_json(tmp.path(), "critical_point.json");
    assert_eq!(cp["rho"].as_f64(), Some(1.0));
    assert!(cp["xi"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap().abs() < 1e-12));
    let table = fs::read_to_string(tmp.path().join("out/robin.csv")).unwrap();
    assert!(table.starts_with("x1,x2,x3,rho\n"));
    assert_eq!(table.lines().count(), 10);

    let cfg = write_config(
        tmp.path(),
        r#"{"domain": {"kind": "box", "N": 3, "sides": [1.0, 1.0, 1.0], "resolution": 17}, "x0": [0.0625, 0.0, -0.0625], "table_points": 3}"#,
    );
    let out = run(tmp.path(), &["robin", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cp = read_json(tmp.path(), "critical_point.json");
    assert!(cp["xi"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap().abs() < 1e-12));
}

#[test]
fn malformed_domain_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"domain": {"kind": "torus", "N": 3}}"#);
    let out = run(tmp.path(), &["robin", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}

#[test]
fn reduced_root() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["reduced", "--n", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let r = read_json(tmp.path(), "reduced.json");
    assert!((r["d0"].as_f64().unwrap() - 16.0 / PI).abs() < 1e-4);
    assert!(r["constants"]["A1"].as_f64().unwrap() > 0.0);

    let out = run(tmp.path(), &["reduced", "--n", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(read_json(tmp.path(), "reduced.json")["d0"].as_f64().unwrap() > 0.0);

    let cfg = write_config(tmp.path(), r#"{"x0": [1.0, 0.0, 0.0]}"#);
    let out = run(tmp.path(), &["reduced", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

fn sweep_slope(n: &str) -> f64 {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["sweep", "--n", n]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    assert!(csv.starts_with("epsilon,delta_num,u0,correction_energy,newton_iters,converged\n"));
    read_json(tmp.path(), "sweep.json")["rate_fit"]["slope"].as_f64().unwrap()
}

#[test]
fn sweep_rates() {
    assert!((sweep_slope("3") - 1.0).abs() < 0.1);
    assert!((sweep_slope("4") - 0.5).abs() < 0.05);
}

#[test]
fn single_point_sweep_still_writes_csv() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"sweep": {"epsilons": [0.01]}}"#);
    let out = run(tmp.path(), &["sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let summary = read_json(tmp.path(), "sweep.json");
    assert!(summary["rate_fit"].is_null());
    assert!(summary["rate_fit_error"].as_str().unwrap().contains("points"));
}

#[test]
fn lost_branch_is_a_partial_sweep() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"sweep": {"epsilons": [0.5, 0.25], "newton": {"max_iter": 0, "shooting": false}}}"#);
    let out = run(tmp.path(), &["sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(read_json(tmp.path(), "sweep.json")["failed_at"].as_f64(), Some(0.5));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"sweep": {"start": 0.1, "stop": 0.01}, "bound_samples": 2000}"#);
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        for cmd in ["sweep", "verify-constants"] {
            let out = run(tmp.path(), &[cmd, "--config", &cfg, "--seed", "11"]);
            assert_eq!(out.status.code(), Some(0));
        }
        let names = ["sweep.csv", "sweep.json", "constants.json"];
        snapshots.push(names.map(|f| fs::read(tmp.path().join("out").join(f)).unwrap()));
    }
    assert_eq!(snapshots[0], snapshots[1]);
}
