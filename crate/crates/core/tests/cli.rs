use std::path::Path;
use std::process::Command;

use fhn_core::harness::output::{parse_table, read_ensemble};

fn fhn(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_fhn")).args(args).output().expect("spawn fhn");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"meso": {"n_particles": 300, "T": 0.1}, "macro": {"T": 0.1, "cells": 64}}"#;

#[test]
fn identities_pass() {
    let (code, stdout) = fhn(&["check", "identities", "--seed", "7", "--trials", "10"]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["trials"], 10);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(fhn(&["meso", "run", "--config", "/no/such/file.json", "--out", out]).0, 2);
    let typo = write(dir.path(), "typo.json", r#"{"meso": {"epsilon": 0.1}}"#);
    assert_eq!(fhn(&["meso", "run", "--config", &typo, "--out", out]).0, 2);
    let neg = write(dir.path(), "neg.json", r#"{"meso": {"dt": -0.1}}"#);
    assert_eq!(fhn(&["macro", "run", "--config", &neg, "--out", out]).0, 2);
    assert_eq!(fhn(&["meso", "walk"]).0, 2);
}

#[test]
fn meso_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out = dir.path().join("meso");
    assert_eq!(fhn(&["meso", "run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]).0, 0);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_particles"], 300);
    assert_eq!(manifest["config"]["meso"]["seed"], 3);
    let (header, rows) = parse_table(&std::fs::read_to_string(out.join("diagnostics.csv")).unwrap()).unwrap();
    assert_eq!(header[0], "t");
    assert_eq!(rows.len(), 11);
    let ens = read_ensemble(&out.join("ensemble_final.fhne")).unwrap();
    assert_eq!(ens.masses.len(), 300);
    assert!((ens.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn macro_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out = dir.path().join("macro");
    assert_eq!(fhn(&["macro", "run", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 0);
    let (header, rows) = parse_table(&std::fs::read_to_string(out.join("macro_final.csv")).unwrap()).unwrap();
    assert_eq!(header, ["x", "rho0", "V", "W"]);
    assert_eq!(rows.len(), 64);
    let (_, mon) = parse_table(&std::fs::read_to_string(out.join("macro_monitors.csv")).unwrap()).unwrap();
    assert!(mon.iter().all(|r| r[5] == Some(0.0)));
}

#[test]
fn fit_reads_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "m.csv", "eps,a,b\n0.4,0.16,1\n0.2,0.04,1\n0.1,0.01,1\n");
    let (code, stdout) = fhn(&["fit", "--input", &csv, "--metrics", "a"]);
    assert_eq!(code, 0);
    let fits: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((fits["a"]["slope"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(fhn(&["fit", "--input", &csv, "--metrics", "nope"]).0, 1);
}

#[test]
fn blow_up_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "blow.json",
        r#"{"meso": {"n_particles": 200, "dt": 0.1, "T": 1.0, "v0": {"kind": "constant", "value": 1000.0}}}"#,
    );
    let out = dir.path().join("o");
    assert_eq!(fhn(&["meso", "run", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 3);
}
