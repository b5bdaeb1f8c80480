use std::path::Path;
use std::process::{Command, Output};

fn minlag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minlag")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const DISK_TO_ELLIPSE: &str = r#"{
    "name": "disk_to_ellipse",
    "domain": {"kind": "disk", "radius": 1},
    "target": {"kind": "ellipse", "matrix": [1.5, 0.5, 0.5, 2]},
    "ladder": [0.3, 0.15],
    "mesh": {"c_theta": 1.0, "c_r": 2.0, "delta_factor": 0.5, "hB_exponent": 1.5},
    "solver": {"tol": 1e-8, "max_iter": 100, "kappa_mode": "auto"},
    "experiment": {"exact_kind": "affine"}
}"#;

#[test]
fn solve_writes_mesh_and_solution() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), DISK_TO_ELLIPSE);
    let out = dir.path().join("run");
    let o = minlag(&["solve", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("c = ") && stdout.contains("error = "), "{stdout}");
    assert!(out.join("mesh.csv").exists());
    let csv = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert!(csv.lines().count() > 10);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert!(json.is_object());
}

#[test]
fn convergence_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), DISK_TO_ELLIPSE);
    let out = dir.path().join("ladder");
    let o = minlag(&["convergence", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("mean order"), "{stdout}");
    let table = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn poisson_reports_eigenvalue() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.csv");
    let o = minlag(&["poisson1d", "--n", "32", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let c: f64 = stdout.split("c = ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((c - 1.0).abs() < 0.05, "{c}");
    assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 34);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = minlag(&["solve", "--config", dir.path().join("missing.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let config = write_config(dir.path(), &DISK_TO_ELLIPSE.replace("[0.3, 0.15]", "[]"));
    let o = minlag(&["convergence", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let o = minlag(&["poisson1d", "--n", "1"]);
    assert!(!o.status.success());
    let config = write_config(dir.path(), &DISK_TO_ELLIPSE.replace(r#""max_iter": 100"#, r#""max_iter": 1"#));
    let o = minlag(&["solve", "--config", &config, "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success(), "one Newton step cannot converge");
}
