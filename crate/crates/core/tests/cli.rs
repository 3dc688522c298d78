mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use serde_json::Value;

fn magnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = magnet(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn mix_reports_the_ratio() {
    let v = ok_json(&["mix", "--single", "20000", "--multi", "8000", "--irrelevance", "5000"]);
    assert_eq!(v["irrelevance_ratio_pct"], "15.2");
    assert_eq!(v["total"], 33000);
}

#[test]
fn exit_codes() {
    assert_eq!(magnet(&["mix", "--single", "x"]).status.code(), Some(1));
    assert_eq!(magnet(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(magnet(&["--help"]).status.code(), Some(0));
    let missing = magnet(&["stats", "--in", "/definitely/not/here.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not/here.jsonl"));
    assert_eq!(
        magnet(&["mix", "--single", "0", "--multi", "0", "--irrelevance", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn loss_check_on_the_fixture() {
    let file = fixture("toy_losses.json");
    let v = ok_json(&["loss-check", "--instances", p(&file)]);
    assert_eq!(v["fd_ok"], true);
    let ln2 = v["ln2"].as_f64().unwrap();
    assert!((v["mdpo_at_reference"].as_f64().unwrap() - ln2).abs() < 1e-12);
    assert_eq!(v["pairs"].as_array().unwrap().len(), 3);
    let printed = ok_json(&[
        "loss-check",
        "--instances",
        p(&file),
        "--form",
        "as-printed",
        "--lambda",
        "0.5",
    ]);
    assert_eq!(printed["fd_ok"], true);
}

#[test]
fn staged_commands_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let d = |f: &str| dir.path().join(f);
    let pool = fixture("toy_pool.json");

    ok_json(&[
        "--seed",
        "3",
        "build-graph",
        "--pool",
        p(&pool),
        "--out",
        p(&d("g.json")),
    ]);
    let s = ok_json(&[
        "--seed",
        "3",
        "sample-fsp",
        "--graphs",
        p(&d("g.json")),
        "--steps",
        "3",
        "--count",
        "6",
        "--out",
        p(&d("f.jsonl")),
    ]);
    assert!(s.to_string().contains('6'), "{s}");
    ok_json(&[
        "--seed",
        "3",
        "enhance",
        "--in",
        p(&d("f.jsonl")),
        "--pool",
        p(&pool),
        "--graphs",
        p(&d("g.json")),
        "--out",
        p(&d("e.jsonl")),
    ]);
    assert!(d("e.split.jsonl").exists());
    ok_json(&[
        "--seed",
        "3",
        "translate",
        "--in",
        p(&d("e.split.jsonl")),
        "--pool",
        p(&pool),
        "--graphs",
        p(&d("g.json")),
        "--out",
        p(&d("t.jsonl")),
    ]);
    let dist = ok_json(&[
        "--seed",
        "3",
        "distill",
        "--in",
        p(&d("t.jsonl")),
        "--pool",
        p(&pool),
        "--negatives",
        "--rollouts",
        "4",
        "--out",
        p(&d("pos.jsonl")),
    ]);
    assert!(dist["positives"].as_u64().unwrap() > 0);
    let stats = ok_json(&["stats", "--in", p(&d("pos.jsonl")), "--pairs", p(&d("pos.pairs.jsonl"))]);
    assert_eq!(stats["sft_total"], dist["positives"]);
    assert_eq!(stats["preference_total"], dist["pairs"]);

    let c = ok_json(&["contaminate", "--train", p(&d("f.jsonl")), "--test", p(&d("f.jsonl"))]);
    assert_eq!(c["exact_match_pct"], "100.00");
    assert_eq!(c["ngram_pct"], "100.00");
}

#[test]
fn run_subcommand_uses_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&[
        "run",
        "--config",
        p(&fixture("toy_run.toml")),
        "--out-dir",
        p(dir.path()),
    ]);
    assert_eq!(v["seed"], 2024);
    assert_eq!(v["stages"].as_array().unwrap().len(), 7);
    assert!(dir.path().join("dataset.jsonl").exists());
}
