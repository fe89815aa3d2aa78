use std::path::Path;
use std::process::{Command, Output};

fn prl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prl")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Value of `column` in the last data row of a CSV table.
fn last_value(csv: &str, column: &str) -> f64 {
    let mut lines = csv.lines().filter(|l| !l.is_empty());
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == column).unwrap();
    lines.next_back().unwrap().split(',').nth(k).unwrap().parse().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_is_deterministic() {
    let a = prl(&["--seed", "3", "generate", "--generator", "gauss-mixture"]);
    let b = prl(&["--seed", "3", "generate", "--generator", "gauss-mixture"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = prl(&["--seed", "4", "generate", "--generator", "gauss-mixture"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn eval_reads_a_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.json");
    let path = path.to_str().unwrap();
    assert!(prl(&["generate", "--generator", "three-point", "--output", path]).status.success());
    let out = prl(&["eval", "--dataset", path, "--set", "tilde_A", "--functional", "probrisk", "--psi", "esssup0"]);
    assert!(out.status.success());
    assert!((last_value(&stdout(&out), "value") - 0.2).abs() < 1e-12);

    let out = prl(&["--format", "json", "eval", "--dataset", path, "--set", "tilde_A", "--functional", "risk-adv"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["report"]["value"].as_f64().unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn oracle_finds_the_adversarial_minimum() {
    let out = prl(&["oracle", "--generator", "three-point", "--objective", "risk_adv", "--cells", "12"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!((last_value(&text, "value") - 0.2).abs() < 1e-12);
    assert!(text.contains(",true,"));
}

#[test]
fn sweep_rows_approach_the_adversarial_minimum() {
    let out = prl(&["sweep-p", "--generator", "three-point", "--cells", "12"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!((last_value(&text, "min_probrisk") - last_value(&text, "min_risk_adv")).abs() < 1e-9);
}

#[test]
fn asymptotics_converge() {
    let out = prl(&["asymptotics", "--max-rel-error", "0.05"]);
    assert!(out.status.success());
    assert!(last_value(&stdout(&out), "rel_error") <= 0.05);
}

#[test]
fn train_writes_trace_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("model.json");
    let cfg = write(
        dir.path(),
        "train.json",
        r#"{"p": 0.1, "epsilon": 0.5, "m": 5, "t": 5, "eta_alpha": 1.0, "eta": 0.1, "batch": 20,
            "epochs": 3, "optimizer": {"kind": "sgd"}, "variant": "modified", "loss": "bce"}"#,
    );
    let out = prl(&["train", "--config", &cfg, "--snapshot", snap.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 4);
    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&snap).unwrap()).unwrap();
    assert!(model.get("variant").is_some());
}

#[test]
fn patho_scan_flags_the_spike_point() {
    let out = prl(&["patho-scan"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let flagged: Vec<&str> = text.split("\n\n").next().unwrap().lines().skip(1).collect();
    assert_eq!(flagged.len(), 1);
    assert!(flagged[0].starts_with("0,0,"));
}

#[test]
fn run_config_matches_direct_invocation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.json",
        r#"{"seed": 0, "task": {"command": "oracle", "generator": "three-point", "cells": 12}}"#,
    );
    let via_config = prl(&["run", "--config", &cfg]);
    assert!(via_config.status.success());
    let direct = prl(&["oracle", "--generator", "three-point", "--cells", "12"]);
    assert_eq!(via_config.stdout, direct.stdout);
}

#[test]
fn malformed_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"seed": 0, "bogus": 1, "task": {"command": "properties"}}"#);
    let out = prl(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["status"], "error");

    let cfg = write(dir.path(), "bad_task.json", r#"{"task": {"command": "oracle", "cels": 12}}"#);
    assert_eq!(prl(&["run", "--config", &cfg]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(prl(&["eval", "--dataset", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(prl(&["asymptotics", "--eps", "0.1,0.2"]).status.code(), Some(2));
    assert_eq!(prl(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_one() {
    let out = prl(&["asymptotics", "--eps", "0.2", "--max-rel-error", "1e-9"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["status"], "failed");
}

#[test]
fn properties_pass() {
    let out = prl(&["properties", "--cases", "20"]);
    assert!(out.status.success(), "{}", stdout(&out));
}
