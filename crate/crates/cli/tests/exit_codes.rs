//! Exit codes and outputs of the `inviscid` binary.

use std::process::Command;

fn inviscid() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_inviscid"));
    for v in ["INVISCID_CONFIG", "INVISCID_OUT", "INVISCID_SEED", "INVISCID_JOBS"] {
        c.env_remove(v);
    }
    c
}

#[test]
fn config_prints_the_defaults() {
    let out = inviscid().arg("config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"viscosity\""), "{text}");
}

#[test]
fn default_check_succeeds_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = inviscid().args(["check", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("check.csv").is_file());
}

#[test]
fn failing_check_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("iso.json");
    std::fs::write(&cfg, r#"{ "geometry": { "profile": "flat" }, "viscosity": { "kind": "isotropic" } }"#).unwrap();
    let out = inviscid().arg("check").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("check failed"));
}

#[test]
fn unknown_config_key_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{ "grid": { "cells": 4 } }"#).unwrap();
    let out = inviscid().arg("config").env("INVISCID_CONFIG", &cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_on_empty_directory_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = inviscid().arg("report").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no runs found"));
}

#[test]
fn unstable_step_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfl.json");
    std::fs::write(&cfg, r#"{ "grid": { "n1": 8, "n2": 8 }, "time": { "t_end": 1.0, "dt": 1.0 } }"#).unwrap();
    let out = inviscid().arg("run").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}
