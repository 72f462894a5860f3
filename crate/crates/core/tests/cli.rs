use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bellman-calib"));
    c.env("BELLMAN_CALIB_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(bytes)))
}

fn simulate(dir: &Path, name: &str, seed: &str) -> String {
    let out = dir.join(name);
    let o = run(&["simulate", "--out", out.to_str().unwrap(), "--n", "300", "--gamma", "0.5", "--beta", "0.2", "--seed", seed]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", "5");
    let b = simulate(dir.path(), "b.csv", "5");
    let c = simulate(dir.path(), "c.csv", "6");
    let read = |p: &str| std::fs::read_to_string(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert!(read(&a).starts_with("s0,a0,y0,s1"));
    let manifest = json(read(&format!("{a}.manifest.json")).as_bytes());
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn estimate_prints_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", "1");
    for method in ["plugin-calibrated", "drl-semi", "drl-robust", "drl-nonparam"] {
        let o = run(&["estimate", &data, "--method", method, "--gamma", "0.5", "--folds", "3", "--seed", "2"]);
        assert_eq!(o.status.code(), Some(0), "{method}: {}", String::from_utf8_lossy(&o.stderr));
        let r = json(&o.stdout);
        assert_eq!(r["method"], method);
        assert_eq!(r["n"], 300);
        let (lo, est, hi) = (r["ci_lo"].as_f64().unwrap(), r["estimate"].as_f64().unwrap(), r["ci_hi"].as_f64().unwrap());
        assert!(lo <= est && est <= hi);
    }
}

#[test]
fn estimate_to_file_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", "1");
    let mut reports = Vec::new();
    for name in ["r1.json", "r2.json"] {
        let out = dir.path().join(name);
        let o = run(&["estimate", &data, "--method", "drl-semi", "--gamma", "0.5", "--folds", "3", "--seed", "4", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        reports.push(json(&std::fs::read(&out).unwrap()));
    }
    assert_eq!(reports[0]["estimate"], reports[1]["estimate"]);
    assert_eq!(reports[0]["se"], reports[1]["se"]);
}

#[test]
fn experiment_writes_tables_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = run(&[
        "experiment", "--out", out.to_str().unwrap(), "--method", "plugin-calibrated,drl-nonparam",
        "--gamma", "0.3,0.6", "--beta", "0", "--n", "200", "--reps", "2", "--folds", "2", "--seed", "8",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["raw.csv", "summary.csv", "plot_data.json", "truths.json", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let raw = std::fs::read_to_string(out.join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 2 * 2 * 2);
    let plot = json(&std::fs::read(out.join("plot_data.json")).unwrap());
    let series = plot["series"].as_array().unwrap();
    assert_eq!(series.len(), 2);
    for s in series {
        assert_eq!(s["gamma"].as_array().unwrap().len(), 2);
        assert_eq!(s["coverage"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn usage_errors_exit_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", "1");
    let cases: Vec<Vec<&str>> = vec![
        vec!["estimate", &data, "--method", "bogus"],
        vec!["estimate", &data, "--method", "drl-semi", "--gamma", "1.5"],
        vec!["estimate", &data, "--method", "drl-semi", "--folds", "0"],
        vec!["simulate", "--out", "/tmp/never.csv", "--n", "0"],
        vec!["experiment", "--out", "/tmp/never", "--reps", "0"],
    ];
    for args in cases {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let e = json(&o.stderr);
        assert!(e["message"].is_string(), "{args:?}");
    }
    // clap's own parse errors
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let o = run(&["estimate", "/nonexistent/d.csv", "--method", "drl-semi"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&o.stderr)["error"], "io");
}
