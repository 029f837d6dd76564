use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lqgame"));
    c.env_remove("MGARE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn lqgame")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../lqgame/fixtures/section6.toml")
}

#[test]
fn check_above_threshold_exists() {
    let out = run(&["check", "--example", "1", "--delta", "0.8", "--samples", "300"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["verdict"], "Exists");
    assert_eq!(v["ra_source"], "certificate");
    assert!(v["residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn check_below_threshold_diverges() {
    let out = run(&["check", "--example", "1", "--delta", "0.5", "--samples", "300"]);
    assert_eq!(code(&out), 4);
    assert!(json(&out)["verdict"]["DivergedAt"].as_u64().unwrap() > 0);
}

#[test]
fn malformed_row_reports_key_and_line() {
    let text = std::fs::read_to_string(fixture()).unwrap();
    let broken = text.replacen("[[0.275, 0.2745, 0.2466, 0.2724, 0.2516, 0.2975]", "[[0.275, 0.2745, 0.2466]", 1);
    assert_ne!(text, broken);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, broken).unwrap();
    let out = run(&["check", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().position(|l| l.starts_with("a = ")).unwrap() + 1;
    assert!(err.contains("`a`"), "{err}");
    assert!(err.contains(&format!("line {line}")), "{err}");
}

#[test]
fn certify_example_one() {
    let out = run(&["certify", "--example", "1", "--delta", "0.8", "--samples", "300"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["certificate"]["verdict"], "Certified");
    let rho = v["certificate"]["rho_kron"].as_f64().unwrap();
    assert!((rho - 0.2 * 1.6016f64.powi(2)).abs() < 1e-3, "{rho}");
    assert!(v["example"]["condition_holds"].as_bool().unwrap());

    let out = run(&["certify", "--example", "1", "--delta", "0.5", "--samples", "300"]);
    assert_eq!(code(&out), 4);
    let v = json(&out);
    assert_eq!(v["certificate"]["verdict"]["ConditionFailed"], "RhoKron");
    assert!((v["certificate"]["rho_kron"].as_f64().unwrap() - 1.283).abs() < 1e-3);
}

#[test]
fn certify_attacker_free_stable_plant() {
    let scn = r#"{
        "name": "quiet",
        "a": [[0.5, 0.1], [0.0, 0.4]],
        "b_list": [[[1.0, 0.0], [0.0, 1.0]]],
        "q": [[1.0, 0.0], [0.0, 1.0]],
        "rc": [[1.0, 0.0], [0.0, 1.0]],
        "ra": [[1.0, 0.0], [0.0, 1.0]],
        "w": [[1.0, 0.0], [0.0, 1.0]],
        "v": [[0.0, 0.0], [0.0, 0.0]],
        "x0": [1.0, 1.0],
        "n_r": 2, "nt_c": 2, "nt_a": 2,
        "controllers": {"players": [{"kind": "finite_support", "atoms": [[[1.0, 0.0], [0.0, 1.0]]], "probs": [1.0]}]},
        "attackers": {"players": [{"kind": "finite_support", "atoms": [[[0.0, 0.0], [0.0, 0.0]]], "probs": [1.0]}]},
        "seed": 3, "samples": 10
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quiet.json");
    std::fs::write(&path, scn).unwrap();
    let out = run(&["certify", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["certificate"]["verdict"], "Certified");
    let bound: f64 = v["certificate"]["ra_bound"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|x| x.as_f64().unwrap().abs()).fold(0.0, f64::max);
    assert!(bound <= 1e-12, "{bound}");
}

#[test]
fn single_point_sweep_gives_one_row() {
    let out = run(&["sweep", "--example", "1", "--samples", "300", "--sweep", "delta=0.8:0.8:0.05"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("delta,"));
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells.len(), lines[0].split(',').count());
    assert_eq!(cells[0].parse::<f64>().unwrap(), 0.8);
    assert_eq!(cells[7], "Certified");
    assert_eq!(cells[8], "Exists");
}

#[test]
fn sweep_over_threshold_keeps_going() {
    let out = run(&["sweep", "--example", "1", "--samples", "200", "--sweep", "delta=0.55:0.75:0.1"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][2], "inf");
    assert!(rows[0][8].starts_with("DivergedAt"));
    let lower: Vec<f64> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(lower[0] > lower[1]);
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("run{i}.json"))).collect();
    let traces: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("trace{i}.csv"))).collect();
    for (p, t) in paths.iter().zip(&traces) {
        let out = run(&[
            "--out", p.to_str().unwrap(), "simulate", "--scenario", fixture().to_str().unwrap(), "--samples", "200",
            "--seed", "9", "--horizon", "200", "--runs", "3", "--trace", t.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    assert_eq!(std::fs::read(&traces[0]).unwrap(), std::fs::read(&traces[1]).unwrap());
    let trace = std::fs::read_to_string(&traces[0]).unwrap();
    assert_eq!(trace.lines().count(), 1 + 200 + 20);

    // thread count does not change the numbers
    let one = bin().env("MGARE_THREADS", "1").args(["solve", "--scenario", fixture().to_str().unwrap(), "--samples", "200"]).output().unwrap();
    let dflt = run(&["solve", "--scenario", fixture().to_str().unwrap(), "--samples", "200"]);
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, dflt.stdout);
}

#[test]
fn seed_changes_sampled_results() {
    let a = run(&["solve", "--scenario", fixture().to_str().unwrap(), "--samples", "100", "--seed", "1"]);
    let b = run(&["solve", "--scenario", fixture().to_str().unwrap(), "--samples", "100", "--seed", "2"]);
    assert_eq!(code(&a), 0);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn configuration_errors_exit_with_two() {
    let f = fixture();
    let f = f.to_str().unwrap();
    for args in [
        vec!["check"],
        vec!["check", "--scenario", f, "--tol", "0"],
        vec!["check", "--scenario", "/nonexistent/scenario.toml"],
        vec!["check", "--example", "4"],
        vec!["check", "--example", "1", "--delta", "1.5"],
        vec!["sweep", "--scenario", f, "--sweep", "delta=0.7:0.8:0.1"],
        vec!["sweep", "--example", "1", "--sweep", "gamma=1:2:1"],
        vec!["simulate", "--scenario", f, "--runs", "0"],
    ] {
        let out = run(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = bin().env("MGARE_THREADS", "zero").args(["check", "--scenario", f]).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn help_documents_exit_codes() {
    let out = run(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Exit codes:") && text.contains("MGARE_THREADS"), "{text}");
}
