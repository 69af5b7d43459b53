mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use optscale::law_models::Law;
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optscale"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_of(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.lines().last().unwrap()).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let runs = run_set(vec![
        runs(&Law::Chinchilla(TRUTH), "AdamW", 0.003, 1),
        runs(&rho_law(1.0, 1.5), "Muon", 0.003, 2),
    ]);
    let mut csv = Vec::new();
    runs.write_csv(&mut csv).unwrap();
    std::fs::write(dir.path().join("runs.csv"), csv).unwrap();
    dir
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn fit_writes_envelope() {
    let dir = workspace();
    ok(dir.path(), &["fit", "--in", "runs.csv", "--optimizer", "AdamW", "--out", "fit.json"]);
    let v = read_json(&dir.path().join("fit.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "fit");
    assert_eq!(v["result"]["optimizer"], "AdamW");
    assert_eq!(v["input"]["records"], 20);
    let alpha = v["result"]["theta"]["alpha"].as_f64().unwrap();
    assert!(alpha > 0.01 && alpha < 1.5);
}

#[test]
fn fit_shared_without_reference_is_usage_error() {
    let dir = workspace();
    let out = run(dir.path(), &["fit-shared", "--in", "runs.csv", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["class"], "usage");
    assert!(!dir.path().join("s.json").exists());
}

#[test]
fn unknown_reference_is_usage_error() {
    let dir = workspace();
    let out = run(dir.path(), &["fit-shared", "--in", "runs.csv", "--reference", "Lion", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "argument");
}

#[test]
fn missing_input_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["fit", "--in", "nope.csv", "--out", "f.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_compute_column_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("r.csv"),
        "optimizer,arch,n_params,tokens,loss,compute\nAdamW,x,1000,20000,3.5,\n",
    )
    .unwrap();
    let out = run(dir.path(), &["fit-compute", "--in", "r.csv", "--reference", "AdamW", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_of(&out)["error"]["message"].as_str().unwrap().contains("compute"));
}

#[test]
fn malformed_csv_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("r.csv"),
        "optimizer,arch,n_params,tokens,loss,compute\nAdamW,x,1000,20000,-3.5,1\n",
    )
    .unwrap();
    let out = run(dir.path(), &["ingest", "--in", "r.csv", "--out", "o.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "simulate", "--alpha", "1.5", "--beta", "1", "--gamma-l", "0.5", "--delta", "1", "--l-star", "1",
            "--grid", "d=10,100;k=1,10", "--noise", "0.01", "--seed", "7", "--out", out,
        ]
    };
    ok(dir.path(), &args("a.csv"));
    ok(dir.path(), &args("b.csv"));
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&a).lines().filter(|l| !l.starts_with('#')).count(), 5);
    assert!(dir.path().join("a.csv.breakdown.json").exists());
}

#[test]
fn report_renders_plus_minus_cells() {
    let dir = workspace();
    ok(dir.path(), &["fit-shared", "--in", "runs.csv", "--reference", "AdamW", "--out", "shared.json"]);
    let path = dir.path().join("shared.json");
    let mut v = read_json(&path);
    let muon = &mut v["result"]["per_optimizer"]["Muon"];
    muon["factors"]["rho_N"] = 2.08.into();
    muon["rho_n_std"] = 0.08.into();
    std::fs::write(&path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    let out = ok(dir.path(), &["report", "shared.json"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("Muon")).unwrap();
    assert!(row.contains("2.08 ± 0.08"), "{text}");
}

#[test]
fn report_without_inputs_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["report"]).status.code(), Some(2));
}

#[test]
fn report_rejects_mixed_schema_versions() {
    let dir = workspace();
    ok(dir.path(), &["fit", "--in", "runs.csv", "--optimizer", "AdamW", "--out", "a.json"]);
    let mut v = read_json(&dir.path().join("a.json"));
    v["schema_version"] = 2.into();
    std::fs::write(dir.path().join("b.json"), v.to_string()).unwrap();
    let out = run(dir.path(), &["report", "a.json", "b.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_of(&out)["error"]["kind"], "schema");
}

#[test]
fn report_writes_extrapolation_bars() {
    let dir = workspace();
    for name in ["e1.json", "e2.json"] {
        ok(dir.path(), &["extrapolate", "--in", "runs.csv", "--reference", "AdamW", "--threshold-n", "3e8", "--out", name]);
    }
    ok(dir.path(), &["report", "e1.json", "e2.json", "--plot-data", "plots"]);
    let bars = std::fs::read_to_string(dir.path().join("plots/extrapolation_bars.csv")).unwrap();
    assert!(bars.contains("e1") && bars.contains("e2"), "{bars}");
}

#[test]
fn version_flag_reports_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--version"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "optscale 0.1.0 (schema 1)");
}
