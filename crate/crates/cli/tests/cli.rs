//! End-to-end tests of the binary: exit codes, file formats, and
//! byte-identical reruns.

use std::path::Path;
use std::process::{Command, Output};

fn fracp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracp"))
}

fn run(args: &[&str]) -> Output {
    fracp().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const BASE_CONFIG: &str = r#"{
  "domain": {"left": -1.0, "right": 1.0, "n": 24},
  "operator": {"p": 2.0, "s": 0.4},
  "weight": {"kind": "power", "beta": 0.0},
  "solver": {"tol": 1e-9, "max_iter": 2000, "step0": 1.0, "seed": 42},
  "eigen": {"second": true, "path_points": 16, "oracle": false, "simplicity_trials": 3}
}"#;

#[test]
fn check_weight_examples_and_exit_codes() {
    let out = run(&[
        "check-weight",
        "--beta", "0.6667",
        "--N", "3",
        "--p", "2",
        "--s", "1",
        "--q", "2",
        "--class", "lorentz",
        "--q0", "2",
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["member"], serde_json::Value::Bool(false));

    let out = run(&["check-weight", "--beta", "0.5", "--class", "lorentz", "--q0", "2"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["member"], serde_json::Value::Bool(true));

    // Malformed flag value: usage error with a nonzero exit.
    let out = run(&["check-weight", "--beta", "abc", "--class", "wq"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    // Unknown class: validation exit code.
    let out = run(&["check-weight", "--beta", "0.5", "--class", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eigen_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE_CONFIG);
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");

    for outdir in [&out1, &out2] {
        let out = run(&[
            "eigen",
            "--config",
            cfg.to_str().unwrap(),
            "--outdir",
            outdir.to_str().unwrap(),
            "--threads",
            "2",
        ]);
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    for name in ["eigen.json", "e1.csv", "e2_maximizer.csv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
        // Every output begins with the config-hash comment line.
        let text = String::from_utf8_lossy(&a);
        assert!(text.starts_with("# config-hash: "), "{name} lacks the hash line");
    }

    let summary: serde_json::Value = {
        let text = std::fs::read_to_string(out1.join("eigen.json")).unwrap();
        let body = text.splitn(2, '\n').nth(1).unwrap();
        serde_json::from_str(body).unwrap()
    };
    assert!(summary["lambda2"].as_f64().unwrap() > summary["lambda1"].as_f64().unwrap());
    assert_eq!(summary["simplicity"], "proportional");
}

#[test]
fn oracle_flag_requires_p2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
  "domain": {"left": -1.0, "right": 1.0, "n": 16},
  "operator": {"p": 1.5, "s": 0.4},
  "eigen": {"second": false, "path_points": 16, "oracle": false, "simplicity_trials": 0},
  "solver": {"tol": 1e-5, "max_iter": 2000, "step0": 1.0, "seed": 42}
}"#,
    );
    let out = run(&[
        "eigen",
        "--config",
        cfg.to_str().unwrap(),
        "--outdir",
        dir.path().join("out").to_str().unwrap(),
        "--oracle",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p = 2"));
}

#[test]
fn bounds_roundtrip_certifies_eigenfunction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = r#"{
  "domain": {"left": -1.0, "right": 1.0, "n": 24},
  "operator": {"p": 2.0, "s": 0.4},
  "eigen": {"second": false, "path_points": 16, "oracle": false, "simplicity_trials": 0},
  "bounds": {"q_tilde": 4.0},
  "solver": {"tol": 1e-9, "max_iter": 2000, "step0": 1.0, "seed": 42}
}"#;
    let cfg = write_config(dir.path(), cfg_text);
    let outdir = dir.path().join("out");
    let out = run(&[
        "eigen",
        "--config",
        cfg.to_str().unwrap(),
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let out = run(&[
        "bounds",
        "--config",
        cfg.to_str().unwrap(),
        "--outdir",
        outdir.to_str().unwrap(),
        "--solution",
        outdir.join("e1.csv").to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["converged"], serde_json::Value::Bool(true));
    assert_eq!(summary["chain_ok"], serde_json::Value::Bool(true));
    assert!(summary["sup_norm"].as_f64().unwrap() <= summary["bound"].as_f64().unwrap());
    assert!(outdir.join("trace.csv").exists());

    // A solution on the wrong grid is rejected up front.
    let bad_cfg = write_config(
        dir.path(),
        &cfg_text.replace("\"n\": 24", "\"n\": 32"),
    );
    let out = run(&[
        "bounds",
        "--config",
        bad_cfg.to_str().unwrap(),
        "--outdir",
        outdir.to_str().unwrap(),
        "--solution",
        outdir.join("e1.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_small_finds_negative_energy_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
  "domain": {"left": -1.0, "right": 1.0, "n": 24},
  "operator": {"p": 2.0, "s": 0.4},
  "rhs": {"terms": [{"coef": 1.0, "beta": 0.0, "q": 1.5, "odd": true}]},
  "solve": {"mode": "small", "levels": 3},
  "solver": {"tol": 1e-9, "max_iter": 2000, "step0": 1.0, "seed": 42}
}"#,
    );
    let outdir = dir.path().join("out");
    let out = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let solutions = summary["solutions"].as_array().unwrap();
    assert!(!solutions.is_empty());
    for s in solutions {
        assert!(s["energy"].as_f64().unwrap() < 0.0);
    }
    assert!(outdir.join("small_00.csv").exists());
}

#[test]
fn bifurcate_writes_branch_and_detection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
  "domain": {"left": -1.0, "right": 1.0, "n": 24},
  "operator": {"p": 2.0, "s": 0.4},
  "rhs": {"terms": [{"coef": -1.0, "beta": 0.0, "q": 4.0, "odd": true}]},
  "bifurcate": {"eps": 0.008, "step": 0.015, "steps": 18, "path_points": 16},
  "solver": {"tol": 1e-9, "max_iter": 2000, "step0": 1.0, "seed": 42}
}"#,
    );
    let outdir = dir.path().join("out");
    let out = run(&[
        "bifurcate",
        "--config",
        cfg.to_str().unwrap(),
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["relative_gap"].as_f64().unwrap() < 0.05);
    let branch = std::fs::read_to_string(outdir.join("branch.csv")).unwrap();
    let mut lines = branch.lines();
    assert!(lines.next().unwrap().starts_with("# config-hash: "));
    assert_eq!(lines.next().unwrap(), "lambda,norm,sup_norm,residual");
    assert!(lines.count() >= 10);
}

#[test]
fn starved_solver_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    // One iteration cannot reach a 1e-9 residual; the solver reports
    // non-convergence instead of handing back a bad pair.
    let cfg = write_config(
        dir.path(),
        r#"{
  "domain": {"left": -1.0, "right": 1.0, "n": 24},
  "operator": {"p": 2.0, "s": 0.4},
  "eigen": {"second": false, "path_points": 16, "oracle": false, "simplicity_trials": 0},
  "solver": {"tol": 1e-9, "max_iter": 1, "step0": 1.0, "seed": 42}
}"#,
    );
    let out = run(&[
        "eigen",
        "--config",
        cfg.to_str().unwrap(),
        "--outdir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver"));
}

#[test]
fn outdir_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
  "domain": {"left": -1.0, "right": 1.0, "n": 16},
  "operator": {"p": 2.0, "s": 0.4},
  "eigen": {"second": false, "path_points": 16, "oracle": false, "simplicity_trials": 0},
  "solver": {"tol": 1e-9, "max_iter": 2000, "step0": 1.0, "seed": 42}
}"#,
    );
    let envdir = dir.path().join("from-env");
    let out = fracp()
        .args(["eigen", "--config", cfg.to_str().unwrap()])
        .env("FRACP_OUTDIR", &envdir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(envdir.join("eigen.json").exists());
}

#[test]
fn config_validation_names_the_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
  "domain": {"left": -1.0, "right": 1.0, "n": 24},
  "operator": {"p": 2.0, "s": 0.6}
}"#,
    );
    let out = run(&["eigen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s*p < 1"));
}
