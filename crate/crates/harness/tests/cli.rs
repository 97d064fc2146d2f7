use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dbnn_harness::eval::MetricsReport;
use serde_json::Value;

fn dbnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbnn")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(out: &Output) -> MetricsReport {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("report JSON")
}

#[test]
fn fixture_files_reproduce_the_builtin_run() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("nb");
    assert!(dbnn(&["fixture", "noisy-boundary", "--out", path(&fx)]).status.success());
    for f in ["model.dbnnw", "stream.csv", "stream.jsonl", "config.json"] {
        assert!(fx.join(f).exists(), "{f}");
    }
    let common = ["--limit", "150", "--modes", "SP,DBNN", "--oracle", "SP"];
    let builtin = dbnn(&[&["eval", "--fixture", "noisy-boundary"][..], &common].concat());
    for data in ["stream.csv", "stream.jsonl"] {
        let from_files = dbnn(
            &[
                &["eval", "--model", path(&fx.join("model.dbnnw")), "--data", path(&fx.join(data))][..],
                &["--config", path(&fx.join("config.json"))],
                &common,
            ]
            .concat(),
        );
        assert_eq!(report(&builtin), report(&from_files));
        assert_eq!(builtin.stdout, from_files.stdout);
    }
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"mu_samples": 7, "och_y_params": {"lambda": 0.25}}"#).unwrap();
    let args = ["eval", "--fixture", "drift-regression", "--limit", "20", "--modes", "SP", "--oracle", "SP"];
    let out = dbnn(&[&args[..], &["--mu-samples", "5", "--och-y-k-target", "9", "--och-y-lambda", "3", "--config", path(&cfg)]].concat());
    let r = report(&out);
    assert_eq!(r.config.mu_samples, 7);
    assert_eq!(r.config.och_y_params.k_target, 9);
    assert_eq!(r.config.och_y_params.lambda, 0.25);
    // untouched fixture settings survive
    assert_eq!(r.config.m_samples, 100);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = dir.path().join("c.json");
    fs::write(&bad_key, r#"{"och_y_params": {"k_targte": 3}}"#).unwrap();
    let out = dbnn(&["eval", "--fixture", "noisy-boundary", "--config", path(&bad_key)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_targte"));

    assert_eq!(dbnn(&["eval", "--fixture", "nope"]).status.code(), Some(1));
    assert_eq!(dbnn(&["eval", "--fixture", "noisy-boundary", "--och-y-lambda", "-1"]).status.code(), Some(1));
    assert_eq!(dbnn(&["eval", "--fixture", "noisy-boundary", "--modes", "XX"]).status.code(), Some(1));
    assert_eq!(dbnn(&["eval"]).status.code(), Some(1));

    let fx = dir.path().join("fx");
    assert!(dbnn(&["fixture", "noisy-boundary", "--out", path(&fx)]).status.success());
    let data = dir.path().join("bad.csv");
    fs::write(&data, "x0,x1,label\n0.1,0.2,1\n0.3,zz,0\n").unwrap();
    let out = dbnn(&["eval", "--model", path(&fx.join("model.dbnnw")), "--data", path(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let missing = dbnn(&["eval", "--model", path(&dir.path().join("none.dbnnw")), "--data", path(&data)]);
    assert_eq!(missing.status.code(), Some(2));

    assert_eq!(dbnn(&["--help"]).status.code(), Some(0));
}

#[test]
fn gen_writes_both_formats_identically() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let jsonl = dir.path().join("s.jsonl");
    for out in [&csv, &jsonl] {
        let o = dbnn(&[
            "gen", "--kind", "drifting-gaussian", "--steps", "50", "--start", "-1", "--delta", "0.01",
            "--labeler", "threshold", "--flip-max", "0.2", "--seed", "3", "--out", path(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = dbnn_harness::records::load(&csv, dbnn_harness::records::Format::Csv, None).unwrap();
    let b = dbnn_harness::records::load(&jsonl, dbnn_harness::records::Format::Jsonl, None).unwrap();
    assert_eq!(a.len(), 50);
    assert_eq!(a, b);
    assert_eq!(dbnn(&["gen", "--labeler", "bogus", "--out", path(&csv)]).status.code(), Some(1));
}

#[test]
fn sweep_and_bench_emit_tables() {
    let out = dbnn(&[
        "sweep", "--fixture", "noisy-boundary", "--limit", "60", "--grid-k-target", "1,5", "--grid-lambda", "5", "--seeds", "0,1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("k_target,lambda,phi_logit,seed,accuracy,error"));
    assert_eq!(text.lines().count(), 5);

    let out = dbnn(&["bench", "--fixture", "noisy-boundary", "--records", "20", "--modes", "SP,DBNN"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
}

#[test]
fn report_json_has_schema_version_and_config_echo() {
    let out = dbnn(&["eval", "--fixture", "perfect-classifier", "--limit", "40"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["config"]["och_y_params"]["k_target"], 5);
    assert_eq!(v["modes"].as_array().unwrap().len(), 4);
}
