use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safe-mdp")).args(args).output().expect("binary runs")
}

fn run_fixture(args: &[&str]) -> Output {
    let owned: Vec<String> = args
        .iter()
        .map(|a| if a.ends_with(".json") { fixture(a).display().to_string() } else { a.to_string() })
        .collect();
    let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
    run(&refs)
}

fn json_out(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn solve_prints_consistent_policy_and_return() {
    let v = json_out(&run_fixture(&["solve", "counts_chain.json"]));
    assert_eq!(v["policy"]["actions"], serde_json::json!([1, 0]));
    assert!((v["return"].as_f64().unwrap() - 1.8).abs() < 1e-9);
}

#[test]
fn missing_and_malformed_inputs_exit_2() {
    assert_eq!(run(&["solve", "/nonexistent/model.json"]).status.code(), Some(2));
    assert_eq!(run_fixture(&["solve", "bad_shape.json"]).status.code(), Some(2));
    assert_eq!(run_fixture(&["solve", "baseline_first.json"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn safe_flag_contract() {
    let rbc = run_fixture(&[
        "safe", "exact_two_armed.json", "--method", "rbc",
        "--baseline-policy", "baseline_first.json", "--baseline-return", "1",
    ]);
    assert_eq!(rbc.status.code(), Some(2));
    let no_return = run_fixture(&[
        "safe", "exact_two_armed.json", "--method", "rmdp", "--baseline-policy", "baseline_first.json",
    ]);
    assert_eq!(no_return.status.code(), Some(2));
    let wrong_flag = run_fixture(&[
        "safe", "exact_two_armed.json", "--method", "ramdp", "--baseline-policy", "baseline_first.json",
        "--baseline-return", "1", "--error", "inline", "--restarts", "3",
    ]);
    assert_eq!(wrong_flag.status.code(), Some(2));
    let no_counts = run_fixture(&[
        "safe", "exact_two_armed.json", "--method", "ramdp", "--baseline-policy", "baseline_first.json",
        "--baseline-return", "1",
    ]);
    assert_eq!(no_counts.status.code(), Some(2));
}

#[test]
fn exact_model_accepts_against_low_baseline() {
    for method in ["ramdp", "rmdp", "armdp"] {
        let v = json_out(&run_fixture(&[
            "safe", "exact_two_armed.json", "--method", method, "--baseline-policy", "baseline_first.json",
            "--baseline-return", "1", "--error", "inline",
        ]));
        assert_eq!(v["accepted"], Value::Bool(true), "{method}");
        assert!((v["certified_value"].as_f64().unwrap() - 9.0).abs() < 1e-6, "{method}");
    }
    let v = json_out(&run_fixture(&[
        "safe", "exact_two_armed.json", "--method", "rbc", "--baseline-policy", "baseline_first.json",
        "--error", "inline",
    ]));
    assert_eq!(v["accepted"], Value::Bool(true));
    assert_eq!(v["policy"]["policy"]["actions"], serde_json::json!([1, 0, 0]));
}

#[test]
fn unattainable_baseline_hits_multiplier_cap() {
    let v = json_out(&run_fixture(&[
        "safe", "exact_two_armed.json", "--method", "armdp", "--baseline-policy", "baseline_first.json",
        "--baseline-return", "100", "--error", "inline",
    ]));
    assert_eq!(v["accepted"], Value::Bool(false));
    assert_eq!(v["diagnostics"]["lambda_cap_hit"], Value::Bool(true));
    assert_eq!(v["policy"]["policy"]["actions"], serde_json::json!([0, 0, 0]));
}

#[test]
fn counts_feed_the_uncertainty_set() {
    let v = json_out(&run_fixture(&[
        "safe", "counts_chain.json", "--method", "rmdp", "--baseline-policy", "chain_mixed.json",
        "--baseline-return", "0", "--delta", "0.1",
    ]));
    assert_eq!(v["method"], "rmdp");
    assert!(v["certified_value"].as_f64().unwrap().is_finite());
}

#[test]
fn bounds_hold_on_fixtures() {
    let v = json_out(&run_fixture(&[
        "bounds", "tight_true.json", "tight_sim.json", "--policy", "baseline_first.json", "--error", "inline",
    ]));
    let reports = v.as_array().unwrap();
    assert!(!reports.is_empty());
    for r in reports {
        assert_eq!(r["holds"], Value::Bool(true), "{r}");
    }
    let regret = reports.iter().find(|r| r["name"] == "regret_policy_loss").unwrap();
    assert!((regret["value"].as_f64().unwrap() - 13.5).abs() < 1e-9);
    assert!((regret["inputs"]["observed"].as_f64().unwrap() - 13.5).abs() < 1e-9);
}

#[test]
fn exact_simulator_gives_zero_bounds() {
    let v = json_out(&run_fixture(&[
        "bounds", "exact_two_armed.json", "exact_two_armed.json", "--policy", "baseline_first.json",
        "--error", "inline",
    ]));
    for r in v.as_array().unwrap() {
        if r["name"] != "residual_loss" {
            assert!(r["value"].as_f64().unwrap().abs() < 1e-9, "{r}");
        }
    }
}

#[test]
fn bounds_reject_mismatched_models() {
    let out = run_fixture(&[
        "bounds", "tight_true.json", "counts_chain.json", "--policy", "baseline_first.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_writes_csv_and_sidecar_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_safe-mdp"))
            .env("SAFE_MDP_THREADS", "1")
            .args(["benchmark", "--config"])
            .arg(fixture("small_benchmark.json"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        json_out(&status);
        outputs.push(std::fs::read_to_string(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let lines: Vec<&str> = outputs[0].lines().collect();
    assert_eq!(lines[0], "method,sample_size,trial,improvement_pct");
    assert_eq!(lines.len(), 1 + 4 * 2 * 2);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.csv.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["dim1"], 3);
    assert!(meta["membership_violation_rate"].as_f64().unwrap() <= 1.0);
    for r in meta["optimal_reference"].as_array().unwrap() {
        assert_eq!(r["improvement_pct"], 100.0);
    }
}

#[test]
fn bad_thread_setting_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_safe-mdp"))
        .env("SAFE_MDP_THREADS", "many")
        .arg("solve")
        .arg(fixture("counts_chain.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
