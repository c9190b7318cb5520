use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn aspca(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aspca"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = aspca(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(dir: &Path, output: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{output}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Temp dir holding `syn.csv` (seed 0) and its column config.
fn synthetic_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["synth", "--seed", "0", "--out", "syn.csv"]);
    dir
}

const DATA: [&str; 4] = ["--data", "syn.csv", "--config", "syn.columns.json"];

fn fit(dir: &Path, variant: &str, lambda: &str, model: &str) -> Value {
    let mut args = vec!["fit"];
    args.extend(DATA);
    args.extend([
        "--variant",
        variant,
        "--d",
        "4",
        "--lambda",
        lambda,
        "--out-model",
        model,
    ]);
    ok(dir, &args);
    manifest(dir, model)
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn synth_is_deterministic_in_seed() {
    let dir = synthetic_dir();
    let p = dir.path();
    ok(p, &["synth", "--seed", "0", "--out", "again.csv"]);
    ok(p, &["synth", "--seed", "7", "--out", "s7.csv"]);
    ok(p, &["synth", "--seed", "8", "--out", "s8.csv"]);
    let text = String::from_utf8(read(p, "syn.csv")).unwrap();
    assert_eq!(text.lines().count(), 516);
    assert_eq!(read(p, "syn.csv"), read(p, "again.csv"));
    assert_ne!(read(p, "s7.csv"), read(p, "s8.csv"));
    assert_eq!(manifest(p, "syn.csv")["results"]["anomalies"], 15);
}

#[test]
fn fit_reaches_reference_sparsity() {
    let dir = synthetic_dir();
    let p = dir.path();
    let bg = fit(p, "bg", "5", "bg.json");
    let l11 = bg["results"]["l11"].as_f64().unwrap();
    assert!(l11 <= 5.9, "ASPCA-BG l11 {l11}");
    let pca = fit(p, "pca", "0", "pca.json");
    let l11 = pca["results"]["l11"].as_f64().unwrap();
    assert!((6.3..=7.8).contains(&l11), "PCA l11 {l11}");
    assert_eq!(bg["config"]["fit"]["solver"]["max_iter"], 5000);
    assert_eq!(bg["outputs"][0]["path"], "bg.json");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = synthetic_dir();
    let p = dir.path();
    fit(p, "bg", "5", "a.json");
    fit(p, "bg", "5", "b.json");
    assert_eq!(read(p, "a.json"), read(p, "b.json"));
}

#[test]
fn exit_codes() {
    let dir = synthetic_dir();
    let p = dir.path();
    let mut args = vec!["fit"];
    args.extend(DATA);
    args.extend(["--variant", "pca", "--d", "7", "--out-model", "m.json"]);
    assert_eq!(aspca(p, &args).status.code(), Some(2));

    let mut args = vec!["fit"];
    args.extend(DATA);
    args.extend([
        "--variant",
        "b",
        "--d",
        "4",
        "--lambda",
        "5",
        "--max-iter",
        "2",
        "--out-model",
        "m.json",
    ]);
    let out = aspca(p, &args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));

    let out = aspca(
        p,
        &[
            "detect",
            "--model",
            "missing.json",
            "--data",
            "syn.csv",
            "--out-scores",
            "s.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(aspca(p, &["fit", "--bogus"]).status.code(), Some(2));
}

fn detect(p: &Path, threshold: &str, out: &str) -> Value {
    let mut args = vec!["detect", "--model", "bg.json"];
    args.extend(DATA);
    args.extend(["--threshold", threshold, "--out-scores", out]);
    ok(p, &args);
    manifest(p, out)["results"].clone()
}

#[test]
fn detect_at_quarter_threshold() {
    let dir = synthetic_dir();
    let p = dir.path();
    fit(p, "bg", "5", "bg.json");
    let r = detect(p, "0.25", "s.csv");
    assert_eq!(
        (r["flagged"].as_u64(), r["false_positives"].as_u64()),
        (Some(15), Some(0))
    );
    let r = detect(p, "inf", "none.csv");
    assert_eq!(r["flagged"], 0);
    let scores = String::from_utf8(read(p, "s.csv")).unwrap();
    assert!(scores.starts_with("row_id,spe,is_anomaly,proj_1,proj_2,proj_3,proj_4\n"));
    assert_eq!(scores.lines().count(), 516);
}

fn interpret(p: &Path, threshold: &str, cutoff: &str, out: &str) -> Value {
    let mut args = vec!["interpret", "--model", "bg.json"];
    args.extend(DATA);
    args.extend([
        "--threshold",
        threshold,
        "--cutoff",
        cutoff,
        "--out-report",
        out,
        "--svg-heatmap",
        "h.svg",
    ]);
    ok(p, &args);
    serde_json::from_slice(&read(p, out)).unwrap()
}

#[test]
fn interpret_groups_and_cutoff() {
    let dir = synthetic_dir();
    let p = dir.path();
    fit(p, "bg", "5", "bg.json");
    let r = interpret(p, "0.25", "0.1", "r.json");
    let groups = r["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3);
    assert!(groups.iter().all(|g| g["count"] == 5));
    assert!(String::from_utf8(read(p, "h.svg"))
        .unwrap()
        .starts_with("<svg"));

    // a different cutoff only changes the rendered strings
    let r2 = interpret(p, "0.25", "0.5", "r2.json");
    assert_eq!(r["groups"], r2["groups"]);
    assert_eq!(r["anomalies"], r2["anomalies"]);
    assert_ne!(r["components"], r2["components"]);

    let empty = interpret(p, "1e6", "0.1", "empty.json");
    assert_eq!(empty["groups"].as_array().unwrap().len(), 0);
}

#[test]
fn eval_roc_and_sweep() {
    let dir = synthetic_dir();
    let p = dir.path();
    fit(p, "b", "5", "bg.json");
    let mut args = vec!["eval", "--model", "bg.json"];
    args.extend(DATA);
    args.extend(["--out", "roc.csv"]);
    ok(p, &args);
    assert_eq!(manifest(p, "roc.csv")["results"]["auc"], 1.0);

    args.truncate(args.len() - 2);
    args.extend([
        "--out",
        "grid.csv",
        "--sweep-d",
        "3..4",
        "--sweep-lambda",
        "0,5,10",
    ]);
    ok(p, &args);
    let grid = String::from_utf8(read(p, "grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 2 * 3);
    assert!(grid.starts_with("d,lambda,l11,variance_abnormal,auc,status\n"));
}

#[test]
fn eval_random_labels_is_near_chance() {
    let dir = synthetic_dir();
    let p = dir.path();
    fit(p, "pca", "0", "bg.json");
    // relabel rows with a fixed pseudo-random pattern
    let text = String::from_utf8(read(p, "syn.csv")).unwrap();
    let mut lines = text.lines();
    let mut out = format!("{},coin\n", lines.next().unwrap());
    let mut state: u64 = 0x9e3779b97f4a7c15;
    for line in lines {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        out.push_str(&format!("{line},{}\n", state % 2));
    }
    std::fs::write(p.join("coin.csv"), out).unwrap();
    ok(
        p,
        &[
            "eval", "--model", "bg.json", "--data", "coin.csv", "--labels", "coin", "--out",
            "roc.csv",
        ],
    );
    let auc = manifest(p, "roc.csv")["results"]["auc"].as_f64().unwrap();
    assert!((auc - 0.5).abs() <= 0.1, "AUC {auc}");
}
