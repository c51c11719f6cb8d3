use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn qoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qoc")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn single_arm() -> Value {
    json!({
        "schema": 1,
        "design": "single_arm",
        "protocol": {"n": 50, "reference_rate": 0.4, "decision_threshold": 0.9},
        "scenarios": [
            {"id": "r40", "rate": 0.4},
            {"id": "r50", "rate": 0.5},
            {"id": "r60", "rate": 0.6}
        ],
        "engine": "both",
        "replicates": {"q": 20000, "mc": 2000},
        "seed": 7
    })
}

fn two_arm(ids: &[usize]) -> Value {
    let scenarios: Vec<Value> = ids
        .iter()
        .map(|n| json!({"id": format!("n{n}"), "n": n, "local_alternative": {"control": 0.4, "a": 2.1}}))
        .collect();
    json!({
        "schema": 1,
        "design": "two_arm",
        "protocol": {"stages": [{"n0": 50, "n1": 50}], "decision_threshold": 0.9, "posterior_draws": 2000},
        "scenarios": scenarios,
        "engine": "both",
        "replicates": {"q": 5000, "mc": 40},
        "seed": 17
    })
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_is_reproducible_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ex1.json", &single_arm());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = qoc(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["results.csv", "comparison.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    // 3 scenarios × 2 engines × 1 OC.
    let rows = csv_rows(&a.join("results.csv"));
    assert_eq!(rows.len(), 6);
    let summary: Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cases"].as_array().unwrap().len(), 3);
    assert!(summary["cases"][1]["exact"]["positive_prob"].as_f64().unwrap() > 0.5);
}

#[test]
fn overrides_change_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ex1.json", &single_arm());
    let out = tmp.path().join("o");
    let o = qoc(&[
        "run", "--config", &cfg, "--engine", "q", "--replicates", "123", "--seed", "99", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| &r[2] == "q" && &r[6] == "123"));
    assert!(!out.join("comparison.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut empty = single_arm();
    empty["scenarios"] = json!([]);
    let o = qoc(&["run", "--config", &write(tmp.path(), "empty.json", &empty)]);
    assert_eq!(o.status.code(), Some(2));

    let mut typo = single_arm();
    typo["protocol"]["refrence_rate"] = json!(0.4);
    let o = qoc(&["run", "--config", &write(tmp.path(), "typo.json", &typo)]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("protocol") && msg.contains("line"), "{msg}");

    let mut schema = single_arm();
    schema["schema"] = json!(2);
    let o = qoc(&["run", "--config", &write(tmp.path(), "schema.json", &schema)]);
    assert_eq!(o.status.code(), Some(2));

    let o = qoc(&["run", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = single_arm();
    cfg["scenarios"] = json!([{"id": "edge", "rate": 1.0}]);
    let o = qoc(&["run", "--config", &write(tmp.path(), "edge.json", &cfg), "--engine", "q", "--out",
        tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("edge"));
}

#[test]
fn audit_needs_both_engines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "a.json", &two_arm(&[50, 60, 70]));
    let o = qoc(&["audit", "--config", &cfg, "--engine", "q"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn minimal_audit_reports_a_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "a.json", &two_arm(&[50, 60, 70]));
    let out = tmp.path().join("audit");
    let o = qoc(&["audit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("audit.csv"));
    assert_eq!(rows.len(), 3);
    let header = csv::Reader::from_path(out.join("audit.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["scenario_id", "psi_q", "se_q", "psi_mc", "se_mc", "delta", "runtime_q_s", "runtime_mc_s"]
    );
    let s: Value = serde_json::from_slice(&fs::read(out.join("audit_summary.json")).unwrap()).unwrap();
    assert!(s["delta"].is_f64() && s["tau"].as_f64().unwrap() >= 0.0);
    assert_eq!(s["scenarios"], 3);
}

#[test]
fn single_point_sweep_is_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = two_arm(&[100]);
    cfg["scenarios"][0]["id"] = json!("local");
    let run_cfg = write(tmp.path(), "run.json", &cfg);
    let mut sweep = cfg.clone();
    sweep["scenarios"][0].as_object_mut().unwrap().remove("n");
    sweep["sweep"] = json!({"axis": "n", "values": [100]});
    let sweep_cfg = write(tmp.path(), "sweep.json", &sweep);
    let (ro, so) = (tmp.path().join("r"), tmp.path().join("s"));
    assert!(qoc(&["run", "--config", &run_cfg, "--out", ro.to_str().unwrap()]).status.success());
    let o = qoc(&["sweep", "--config", &sweep_cfg, "--out", so.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_rows = csv_rows(&ro.join("results.csv"));
    let sweep_rows = csv_rows(&so.join("sweep.csv"));
    for r in &run_rows {
        let s = sweep_rows.iter().find(|s| &s[3] == &r[2] && &s[4] == &r[3]).unwrap();
        assert_eq!(&s[5], &r[4], "estimate for {}", &r[2]);
        assert_eq!(&s[6], &r[5]);
    }
    let plot = csv::Reader::from_path(so.join("plot.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(plot.iter().collect::<Vec<_>>(), ["x", "y", "series"]);
}

#[test]
fn n_sweep_approaches_eighty_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = two_arm(&[]);
    cfg["scenarios"] = json!([{"id": "local", "local_alternative": {"control": 0.4, "a": 2.1}}]);
    cfg["protocol"]["posterior_draws"] = json!(20000);
    cfg["replicates"] = json!({"q": 40000, "mc": 400});
    cfg["sweep"] = json!({"axis": "n", "values": [1000]});
    let out = tmp.path().join("s");
    let o = qoc(&["sweep", "--config", &write(tmp.path(), "s.json", &cfg), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in csv_rows(&out.join("sweep.csv")) {
        let (est, se): (f64, f64) = (r[5].parse().unwrap(), r[6].parse().unwrap());
        assert!((est - 0.80).abs() < 0.02 + 3.0 * se, "{} {est}", &r[3]);
    }
}

#[test]
fn budget_sweep_has_a_flat_mc_region() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = two_arm(&[]);
    cfg["scenarios"] = json!([{"id": "alt", "rates": [0.4, 0.61]}]);
    cfg["protocol"]["posterior_draws"] = json!(20000);
    cfg["sweep"] = json!({"axis": "budget", "values": [0.0005], "repeats": 20});
    let out = tmp.path().join("b");
    let o = qoc(&["sweep", "--config", &write(tmp.path(), "b.json", &cfg), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("sweep.csv"));
    let q = rows.iter().find(|r| &r[1] == "q").unwrap();
    let mc = rows.iter().find(|r| &r[1] == "mc").unwrap();
    assert_eq!(&mc[4], "0");
    assert_eq!(&mc[6], "");
    let rmse: f64 = q[6].parse().unwrap();
    assert!(rmse > 0.005 && rmse < 0.06, "Q RMSE {rmse}");
}

#[test]
fn help_and_bad_flags() {
    assert!(qoc(&["--help"]).status.success());
    assert_eq!(qoc(&["run"]).status.code(), Some(2));
    assert_eq!(qoc(&["frobnicate"]).status.code(), Some(2));
}
