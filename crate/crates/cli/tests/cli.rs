use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn scatterlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scatterlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn presets_are_listed_and_printable() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatterlab(&["presets"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "figure-angle",
        "figure-example3traj",
        "figure-example3sde",
        "figure-legendre",
        "figure-oned",
        "tent-heatbath",
        "tent-elastic",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
    let out = scatterlab(&["presets", "--show", "figure-example3traj"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("radius = 4.0") && text.contains("m0 = 80.0") && text.contains("steps = 10_000"));
    let out = scatterlab(&["presets", "--show", "missing"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oned_preset_writes_path_csv_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatterlab(&["simulate-sde", "--preset", "figure-oned", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("run/data.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,v_1,retries");
    assert_eq!(lines.len(), 1 + 10_001);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[1].parse::<f64>().unwrap(), 10.0);
    let last: Vec<&str> = lines[10_001].split(',').collect();
    assert!((last[0].parse::<f64>().unwrap() - 10.0).abs() < 1e-9);
    let meta = read_json(&dir.path().join("run/meta.json"));
    for key in ["config", "version", "wall_clock_seconds", "counters", "rng", "seed", "threads"] {
        assert!(meta.get(key).is_some(), "meta.json lacks {key}");
    }
    assert_eq!(meta["config"]["model"]["type"], "normalized_laguerre");
    assert!(meta["counters"].get("boundary_retries").is_some());
}

#[test]
fn negative_variance_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatterlab(
        &["stationary-test", "--preset", "figure-angle", "--set", "hidden.sigma0_sq=-0.5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["field"], "hidden.sigma0_sq");

    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[profile]\ntype = \"tent\"\nm = 1.0\nmasses = [1.0]\n[hidden]\ntype = \"gaussian\"\nk = 1\nsigma2 = -1.0\n[chain]\nsteps = 10\n",
    )
    .unwrap();
    let out = scatterlab(&["simulate-chain", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["field"], "hidden.sigma2");
}

#[test]
fn unknown_keys_and_mismatched_experiment_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatterlab(&["simulate-sde", "--preset", "figure-oned", "--set", "sde.dtt=0.1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert!(err["error"]["message"].as_str().unwrap().contains("dtt"));
    let out = scatterlab(&["simulate-chain", "--preset", "figure-oned"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["field"], "experiment");
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatterlab(
        &["verify-generator", "--preset", "tent-heatbath", "--set", "generator.max_samples=10"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "runtime");
}

#[test]
fn config_echo_reproduces_outputs_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatterlab(
        &["simulate-chain", "--preset", "figure-example3traj", "--set", "chain.steps=500", "--seed", "9", "--out", "a"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = read_json(&dir.path().join("a/meta.json"));
    fs::write(dir.path().join("echo.json"), meta["config"].to_string()).unwrap();
    let out = scatterlab(&["simulate-chain", "--config", "echo.json", "--out", "b", "--threads", "1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = fs::read(dir.path().join("a/data.csv")).unwrap();
    let b = fs::read(dir.path().join("b/data.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("step,v_1,v_2,collisions,resamples\n"));
    assert_eq!(text.lines().count(), 1 + 501);
}

#[test]
fn compute_matrices_for_a_single_tent() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("tent.toml"),
        "experiment = \"compute-matrices\"\n[profile]\ntype = \"tent\"\nm = 0.05\nmasses = [1.0]\n[hidden]\ntype = \"gaussian\"\nk = 1\nsigma2 = 2.0\n",
    )
    .unwrap();
    let out = scatterlab(&["compute-matrices", "--config", "tent.toml", "--out", "m"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("m/report.json"));
    let a00 = report["a"][0][0].as_f64().unwrap();
    assert!((a00 - 0.05 / 1.05).abs() < 1e-12);
    assert!((report["derived"]["sigma2"].as_f64().unwrap() - 2.0).abs() < 1e-15);
    let csv = fs::read_to_string(dir.path().join("m/data.csv")).unwrap();
    assert!(csv.starts_with("row,col,a,lambda,c\n"));
}

#[test]
fn generator_table_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatterlab(
        &["verify-generator", "--preset", "tent-heatbath", "--set", "generator.h_sequence=[0.04, 0.02]", "--out", "g"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("g/data.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "h,estimate,analytic,abs_error,std_error");
    assert_eq!(lines.len(), 3);
}

#[test]
fn stationary_test_writes_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatterlab(
        &["stationary-test", "--preset", "figure-angle", "--set", "chain.steps=20000", "--out", "s"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let angle = fs::read_to_string(dir.path().join("s/data.csv")).unwrap();
    let speed = fs::read_to_string(dir.path().join("s/data_speed.csv")).unwrap();
    for csv in [&angle, &speed] {
        assert!(csv.starts_with("bin_left,bin_right,count,expected\n"));
        assert_eq!(csv.lines().count(), 61);
    }
    let report = read_json(&dir.path().join("s/report.json"));
    assert_eq!(report["marginals"].as_array().unwrap().len(), 2);
}

#[test]
fn chain_vs_sde_for_the_flat_floor_agrees_exactly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("flat.toml"),
        "experiment = \"chain-vs-sde\"\n[family]\ntype = \"flat\"\ndim = 1\n[compare]\nh_sequence = [0.1]\nt_end = 1.0\npaths = 50\ninitial = [0.3, -0.8]\nsde_dt = 0.01\n",
    )
    .unwrap();
    let out = scatterlab(&["chain-vs-sde", "--config", "flat.toml", "--out", "c"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("c/report.json"));
    assert_eq!(report["model"], "frozen");
    for ks in report["rows"][0]["ks"].as_array().unwrap() {
        assert_eq!(ks.as_f64().unwrap(), 0.0);
    }
}
