use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use qoc_ffi::*;

const EX1: &str = r#"{
    "schema": 1,
    "design": "single_arm",
    "protocol": { "n": 50, "reference_rate": 0.4, "decision_threshold": 0.9 },
    "scenarios": [{ "id": "a", "rate": 0.5 }, { "id": "b", "rate": 0.6 }],
    "replicates": { "q": 20000, "mc": 2000 },
    "seed": 3
}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qoc_last_error()) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> (QocStatus, *mut QocConfig) {
    let json = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { qoc_config_parse(json.as_ptr(), &mut cfg) };
    (status, cfg)
}

#[test]
fn run_through_handles() {
    let (status, cfg) = parse(EX1);
    assert_eq!(status, QocStatus::Ok);
    unsafe {
        let mut count = 0usize;
        assert_eq!(qoc_config_scenario_count(cfg, &mut count), QocStatus::Ok);
        assert_eq!(count, 2);
        assert_eq!(qoc_config_set_engine(cfg, QocEngine::Both), QocStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(qoc_run(cfg, 1, &mut res), QocStatus::Ok);
        assert_eq!(qoc_results_len(res), 4);

        let mut exact = 0.0;
        assert_eq!(qoc_exact_single_arm(50, 0.4, 0.9, 0.5, &mut exact), QocStatus::Ok);
        let mut row = std::mem::zeroed::<QocResultRow>();
        for i in 0..2 {
            assert_eq!(qoc_results_row(res, i, &mut row), QocStatus::Ok);
            assert_eq!(CStr::from_ptr(row.scenario_id).to_str().unwrap(), "a");
            assert_eq!(CStr::from_ptr(row.oc).to_str().unwrap(), "positive_prob");
            assert!((row.estimate - exact).abs() < 4.0 * row.se + 0.02, "{} vs {exact}", row.estimate);
        }
        assert_eq!(qoc_results_row(res, 4, &mut row), QocStatus::OutOfRange);
        assert!(last_error().contains("out of range"));
        qoc_results_free(res);
        qoc_config_free(cfg);
    }
}

#[test]
fn same_seed_same_numbers_across_thread_counts() {
    let collect = |threads: usize| unsafe {
        let (_, cfg) = parse(EX1);
        qoc_config_set_engine(cfg, QocEngine::Q);
        qoc_config_set_seed(cfg, 99);
        let mut res = ptr::null_mut();
        assert_eq!(qoc_run(cfg, threads, &mut res), QocStatus::Ok);
        let mut row = std::mem::zeroed::<QocResultRow>();
        let out: Vec<f64> = (0..qoc_results_len(res))
            .map(|i| {
                qoc_results_row(res, i, &mut row);
                row.estimate
            })
            .collect();
        qoc_results_free(res);
        qoc_config_free(cfg);
        out
    };
    assert_eq!(collect(1), collect(3));
}

#[test]
fn error_codes() {
    let (status, cfg) = parse("{ \"schema\": 1, \"design\": \"two_arm\", \"protocol\": {}, \"scenarios\": [] ");
    assert_eq!(status, QocStatus::ConfigError);
    assert!(cfg.is_null());
    assert!(last_error().contains("line"), "{}", last_error());

    let (status, _) = parse(&EX1.replace("\"seed\"", "\"sede\""));
    assert_eq!(status, QocStatus::ConfigError);
    assert!(last_error().contains("sede"), "{}", last_error());

    unsafe {
        assert_eq!(qoc_config_parse(ptr::null(), ptr::null_mut()), QocStatus::NullPointer);
        assert_eq!(qoc_config_set_seed(ptr::null_mut(), 1), QocStatus::NullPointer);
        assert_eq!(qoc_results_len(ptr::null()), 0);
        qoc_config_free(ptr::null_mut());
        qoc_results_free(ptr::null_mut());
        let mut out = 0.0;
        assert_eq!(qoc_exact_two_arm_power(50, 50, 0.9, 0.4, 1.5, &mut out), QocStatus::OutOfRange);
        assert_eq!(qoc_exact_two_arm_power(0, 50, 0.9, 0.4, 0.5, &mut out), QocStatus::ConfigError);
        assert_eq!(qoc_exact_two_arm_power(50, 50, 0.9, 0.4, 0.61, &mut out), QocStatus::Ok);
        assert!(out > 0.5 && out < 1.0);
        let (_, cfg) = parse(EX1);
        assert_eq!(qoc_config_set_replicates(cfg, 0, 10), QocStatus::OutOfRange);
        qoc_config_free(cfg);
    }
    let v = unsafe { CStr::from_ptr(qoc_version()) }.to_str().unwrap().to_string();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "qoc.h"
int main(void) {
    double p = 0.0;
    if (qoc_exact_two_arm_power(50, 50, 0.9, 0.4, 0.61, &p) != QOC_STATUS_OK) return 1;
    QocConfig *cfg = NULL;
    if (qoc_config_parse("{", &cfg) != QOC_STATUS_CONFIG_ERROR) return 2;
    if (strlen(qoc_last_error()) == 0) return 3;
    printf("%.6f\n", p);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static
/// library. Skipped when no C compiler or static library is available.
#[test]
fn c_program_links_against_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/qoc.h");
    assert!(header.exists(), "generated header missing");
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libqoc_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link test: no cc or {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, C_SMOKE).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C smoke exited with {:?}", out.status);
    let p: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    let mut expect = 0.0;
    unsafe { qoc_exact_two_arm_power(50, 50, 0.9, 0.4, 0.61, &mut expect) };
    assert!((p - expect).abs() < 1e-6);
}
