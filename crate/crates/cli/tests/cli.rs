use std::path::Path;
use std::process::{Command, Output};

fn icpw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icpw")).args(args).output().unwrap()
}

fn write_toy(dir: &Path) -> String {
    let path = dir.join("toy.csv");
    std::fs::write(&path, "g,a,y\n1,1,3\n1,0,1\n2,1,2\n2,0,2\n").unwrap();
    path.to_str().unwrap().to_string()
}

fn point(report: &serde_json::Value, method: &str) -> f64 {
    report["results"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["method"] == method)
        .unwrap()["point"]
        .as_f64()
        .unwrap()
}

#[test]
fn naive_estimate_of_a_toy_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_toy(dir.path());
    let base = ["estimate", "--input", &input, "--cluster-col", "g", "--treatment-col", "a", "--outcome-col", "y", "--method", "naive"];
    let out = icpw(&base);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["units"], 4);
    assert!((point(&report, "naive") - 0.5).abs() < 1e-12);

    let mut grouped = base.to_vec();
    grouped.extend(["--naive-variant", "group-means"]);
    let report: serde_json::Value = serde_json::from_slice(&icpw(&grouped).stdout).unwrap();
    assert!((point(&report, "naive") - 1.0).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_toy(dir.path());
    let missing = icpw(&["estimate", "--input", &input, "--cluster-col", "g", "--treatment-col", "a"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--outcome-col"));
    assert_eq!(icpw(&["simulate", "--scenario", "9", "--reps", "2"]).status.code(), Some(2));
    assert_eq!(icpw(&["selftest", "--suite", "nope"]).status.code(), Some(2));
    let bad_method = icpw(&["estimate", "--input", &input, "--cluster-col", "g", "--treatment-col", "a", "--outcome-col", "y", "--method", "magic"]);
    assert_eq!(bad_method.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_toy(dir.path());
    let out = icpw(&["estimate", "--input", &input, "--cluster-col", "g", "--treatment-col", "a", "--outcome-col", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
    let missing_file = icpw(&["estimate", "--input", "/nonexistent.csv", "--cluster-col", "g", "--treatment-col", "a", "--outcome-col", "y"]);
    assert_eq!(missing_file.status.code(), Some(1));
}

#[test]
fn selftest_runs_only_the_requested_suite() {
    let out = icpw(&["selftest", "--suite", "gradients"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("PASS gradients"));
}

#[test]
fn perturbed_selftest_fails() {
    let out = icpw(&["selftest", "--suite", "dp", "--suite", "unbiasedness", "--perturb", "1e-6"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().filter(|l| l.starts_with("FAIL")).count() >= 2);
}

#[test]
fn manifest_is_written_next_to_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_toy(dir.path());
    let out_path = dir.path().join("report.csv");
    let out = icpw(&[
        "estimate", "--input", &input, "--cluster-col", "g", "--treatment-col", "a", "--outcome-col", "y",
        "--method", "naive", "--format", "csv", "--seed", "11", "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.lines().next().unwrap().contains("method"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "estimate");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["input_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["estimate"]["model"]["likelihood"], "joint");
}

#[test]
fn explicit_manifest_path_and_simulation_output() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    let out = icpw(&[
        "--manifest", manifest.to_str().unwrap(), "simulate", "--scenario", "1", "--reps", "3",
        "--clusters", "30", "--format", "json", "--methods", "naive,icpw",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let methods: Vec<&str> = report["rows"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["simu", "naive", "icpw"]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "simulate");
}
