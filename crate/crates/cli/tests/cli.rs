use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hflgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hflgen")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

/// Runs `cmd` on `body` and returns the exit code and output directory.
fn run(cmd: &str, body: &str, extra: &[&str]) -> (i32, TempDir) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("out");
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = hflgen(&args);
    (o.status.code().unwrap(), dir)
}

fn rows(dir: &TempDir) -> Vec<std::collections::BTreeMap<String, String>> {
    let csv = std::fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn num(row: &std::collections::BTreeMap<String, String>, k: &str) -> f64 {
    row[k].parse().unwrap()
}

fn glm_config(branching: &str, sigmas: &str, sweep: &str) -> String {
    format!(
        r#"{{"schema": 1, "seed": 9, "topology": {{"branching": {branching}}},
            "kernel": {{"type": "gaussian_location", "sigmas": {sigmas}}},
            "trials": {{"outer": 20000, "inner": 16}} {sweep}}}"#
    )
}

#[test]
fn glm_single_point_matches_closed_forms() {
    let (code, dir) = run("glm", &glm_config("[4]", "[1.0]", ""), &[]);
    assert_eq!(code, 0);
    let r = &rows(&dir)[0];
    assert!((num(r, "true_gen") - 0.2011).abs() < 1e-4);
    assert!((num(r, "wasserstein_bound") - 0.2821).abs() < 1e-4);
    assert!((num(r, "gen_mc") - num(r, "true_gen")).abs() <= 3.0 * num(r, "gen_mc_se"));
    assert_eq!(r["axis"], "none");
}

#[test]
fn glm_zero_sigma_gives_zero_columns() {
    let sweep = r#", "sweep": {"axis": "n", "values": [2, 4, 8]}"#;
    let (code, dir) = run("glm", &glm_config("[2]", "[0.0]", sweep), &[]);
    assert_eq!(code, 0);
    for r in rows(&dir) {
        for k in ["true_gen", "taylor_gen", "wasserstein_bound", "gen_mc", "gen_mc_se"] {
            assert_eq!(num(&r, k), 0.0, "{k}");
        }
    }
    assert!(dir.path().join("out/comparison.svg").exists());
}

#[test]
fn homogeneous_three_layers_ratio_is_sqrt_six() {
    let sweep = r#", "sweep": {"axis": "sigma", "values": [0.5, 1.0, 2.0]}"#;
    let (code, dir) = run("glm", &glm_config("[2, 2, 2]", "[1.0, 1.0, 1.0]", sweep), &["--trials", "200"]);
    assert_eq!(code, 0);
    for r in rows(&dir) {
        assert!((num(&r, "bound_over_taylor") - 6f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn report_records_provenance() {
    let body = glm_config("[4]", "[1.0]", "");
    let (code, dir) = run("glm", &body, &["--trials", "100"]);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    let hash = report["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(report["input_digest"].as_str().unwrap().len(), 64);
    assert!(report["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    let csv = std::fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with(hash)));
    assert!(!csv.contains("wall"));
}

#[test]
fn seed_override_changes_hash_and_rows() {
    let body = glm_config("[4]", "[1.0]", "");
    let (_, a) = run("glm", &body, &["--trials", "100"]);
    let (_, b) = run("glm", &body, &["--trials", "100", "--seed", "10"]);
    let (_, c) = run("glm", &body, &["--trials", "100"]);
    let read = |d: &TempDir| std::fs::read(d.path().join("out/results.csv")).unwrap();
    assert_eq!(read(&a), read(&c));
    assert_ne!(read(&a), read(&b));
}

#[test]
fn glm_rejects_other_kernels() {
    let body = r#"{"schema": 1, "seed": 1, "topology": {"branching": [2]},
                   "kernel": {"type": "bounded_bernoulli"}, "root_param": 0.5}"#;
    assert_eq!(run("glm", body, &[]).0, 2);
}

#[test]
fn bounds_on_glm_match_closed_form() {
    let body = r#"{"schema": 1, "seed": 4, "topology": {"branching": [2, 2]},
                   "kernel": {"type": "gaussian_location", "sigmas": [1.0, 1.0]},
                   "bounds": ["wasserstein"], "trials": {"outer": 100000, "inner": 2}}"#;
    let (code, dir) = run("bounds", body, &[]);
    assert_eq!(code, 0);
    let total = num(&rows(&dir)[0], "total");
    // (2 / sqrt(pi)) (1/2 + 1/4)
    let want = 2.0 / std::f64::consts::PI.sqrt() * 0.75;
    assert!((total - want).abs() / want < 0.02, "{total} vs {want}");
}

#[test]
fn bounds_on_discrete_toy_order_cmi_above_wasserstein() {
    let body = r#"{"schema": 1, "seed": 3, "topology": {"branching": [2, 2]},
        "kernel": {"type": "discrete_finite",
                   "transitions": [[[0.7, 0.3], [0.2, 0.8]], [[0.9, 0.1], [0.3, 0.7]]]},
        "loss": {"type": "zero_one", "threshold": 0.5},
        "bounds": ["cmi"], "flip": 0.2, "trials": {"outer": 100}}"#;
    let (code, dir) = run("bounds", body, &[]);
    assert_eq!(code, 0);
    let rows = rows(&dir);
    let total = |fam: &str| num(rows.iter().find(|r| r["family"] == fam).unwrap(), "total");
    assert!(total("cmi") >= total("wasserstein_exact"));
    assert!(total("wasserstein_exact") > 0.0);
}

#[test]
fn bounds_zero_sigma_totals_vanish() {
    let body = r#"{"schema": 1, "seed": 4, "topology": {"branching": [2, 2]},
                   "kernel": {"type": "gaussian_location", "sigmas": [0.0, 0.0]},
                   "bounds": ["wasserstein", "subtree"], "trials": {"outer": 200, "inner": 2}}"#;
    let (code, dir) = run("bounds", body, &[]);
    assert_eq!(code, 0);
    assert!(rows(&dir).iter().all(|r| num(r, "total") == 0.0));
}

#[test]
fn exact_cmi_on_continuous_kernel_is_unsupported() {
    let body = r#"{"schema": 1, "seed": 1, "topology": {"branching": [2]},
                   "kernel": {"type": "bounded_bernoulli"}, "root_param": 0.5,
                   "bounds": ["cmi"]}"#;
    assert_eq!(run("bounds", body, &[]).0, 3);
}

const DP: &str = r#"{"schema": 1, "seed": 5, "topology": {"branching": [4, 4]},
    "kernel": {"type": "bounded_bernoulli", "concentration": 2.0}, "root_param": 0.5,
    "loss": {"type": "zero_one", "threshold": 0.5}, "trials": {"outer": 2000},
    "dp": {"epsilons": [0.1, 0.1], "range": [0, 1], "mechanism": "laplace", "grid": [[20.0, 20.0]]}}"#;

#[test]
fn dp_rows_report_bound_and_dominance() {
    let (code, dir) = run("dp", DP, &[]);
    assert_eq!(code, 0);
    let rows = rows(&dir);
    assert!((num(&rows[0], "bound") - 0.4102).abs() < 1e-4);
    assert!(num(&rows[1], "bound") > num(&rows[0], "bound"));
    assert!(num(&rows[1], "gen_mc") < 0.5);
    assert!(rows.iter().all(|r| r["dominates"] == "true"));
}

#[test]
fn dp_config_errors() {
    let no_dp = glm_config("[2]", "[1.0]", "");
    assert_eq!(run("dp", &no_dp, &[]).0, 2);
    let unbounded = DP.replace(r#"{"type": "zero_one", "threshold": 0.5}"#, r#"{"type": "absolute"}"#);
    assert_eq!(run("dp", &unbounded, &[]).0, 2);
}

#[test]
fn config_errors_exit_two() {
    let unknown = glm_config("[2]", "[1.0]", r#", "colour": "blue""#);
    assert_eq!(run("glm", &unknown, &[]).0, 2);
    let no_seed = glm_config("[2]", "[1.0]", "").replace(r#""seed": 9,"#, "");
    assert_eq!(run("glm", &no_seed, &[]).0, 2);
    assert_eq!(hflgen(&["glm", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
    assert_eq!(hflgen(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_thread_env_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_hflgen"))
        .args(["verify", "pinsker"])
        .env("HFLGEN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_suite_passes_with_json_report() {
    let dir = TempDir::new().unwrap();
    let o = hflgen(&["verify", "pinsker", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], Value::Bool(true));
    assert_eq!(report["suites"][0]["suite"], "pinsker");
    assert_eq!(report["suites"][0]["checks"][0]["cases"], 1000);
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn verify_telescoping_passes() {
    assert_eq!(hflgen(&["verify", "telescoping"]).status.code(), Some(0));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let o = hflgen(&["verify", "unknown-name"]);
    assert_eq!(o.status.code(), Some(2));
    assert_ne!(o.status.code(), Some(1));
}
