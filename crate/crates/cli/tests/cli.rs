mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn topeval(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topeval")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = topeval(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(topeval(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(topeval(&["--version"], dir.path()).status.code(), Some(0));
    assert_eq!(topeval(&["stats", "power", "--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(topeval(&["no-such-command"], p).status.code(), Some(1));
    assert_eq!(topeval(&["stats", "power", "--task", "bogus", "--seed", "1"], p).status.code(), Some(1));
    assert_eq!(topeval(&["stats", "power", "--task", "rating", "--seed", "1", "--alpha", "2"], p).status.code(), Some(1));
    assert_eq!(topeval(&["cooc", "count", "--corpus", "x", "--vocab", "y", "--window", "0", "--output", "z"], p).status.code(), Some(1));
    let out = topeval(&["corpus", "vocab", "--input", "missing.jsonl", "--output", "v.tsv"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    std::fs::write(p.join("bad.toml"), "seed = 1\n").unwrap();
    assert_eq!(topeval(&["pipeline", "run", "--config", "bad.toml"], p).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    common::write_raw_corpus(p, 60, 2);
    let cfg = common::write_pipeline_config(p, "[10, 110]", 30);
    ok(&["pipeline", "run", "--config", cfg.to_str().unwrap()], p);
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap().to_string();
    let out = topeval(&["survey", "serve", "--items", "work/items.jsonl", "--log", "log.jsonl", "--addr", &addr, "--seed", "1"], p);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stats_records_echo_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ok(&["stats", "power", "--task", "intrusion", "--seed", "4", "--m", "10", "--n-sims", "40"], p);
    let v = stdout_json(&out);
    assert_eq!(v["command"], "power");
    assert_eq!(v["seed"], 4);
    assert_eq!(v["config"]["m"], 10);
    let power = v["result"]["power"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&power));
    let again = stdout_json(&ok(&["stats", "power", "--task", "intrusion", "--seed", "4", "--m", "10", "--n-sims", "40"], p));
    assert_eq!(again, v);

    let out = ok(&["stats", "min-annotators", "--task", "rating", "--seed", "1", "--n-sims", "40", "--grid-cap", "20"], p);
    assert_eq!(stdout_json(&out)["command"], "min_annotators");

    std::fs::write(p.join("var.txt"), "0.002\n0.003\n0.0025\n0.004\n").unwrap();
    let out = ok(&["stats", "epsilon", "--task", "rating", "--seed", "1", "--n-sims", "60", "--variances", "var.txt"], p);
    let v = stdout_json(&out);
    assert_eq!(v["simulation"]["kind"], "automated");
    assert!(v["result"]["epsilon"].as_f64().unwrap() > 0.0);

    let mut pool = String::new();
    for i in 0..60 {
        let q = i as f64 / 60.0;
        let human: Vec<u8> = (0..10).map(|j| u8::from((j as f64) < q * 10.0)).collect();
        pool.push_str(&serde_json::json!({ "id": format!("t{i}"), "auto": q, "human": human }).to_string());
        pool.push('\n');
    }
    std::fs::write(p.join("pool.jsonl"), pool).unwrap();
    let out = ok(&["stats", "fdr", "--pool", "pool.jsonl", "--task", "intrusion", "--seed", "2", "--n-iter", "50", "--k", "20"], p);
    let v = stdout_json(&out);
    assert_eq!(v["config"]["pool_size"], 60);
    assert!(v["result"].get("fdr").is_some());

    let mut corr = String::new();
    for i in 0..12 {
        let h: Vec<f64> = (0..5).map(|j| (i + j % 2) as f64).collect();
        corr.push_str(&serde_json::json!({ "topic": format!("t{i}"), "human": h, "metric": i as f64 * 0.1 }).to_string());
        corr.push('\n');
    }
    std::fs::write(p.join("corr.jsonl"), corr).unwrap();
    let v = stdout_json(&ok(&["stats", "correlate", "--input", "corr.jsonl", "--seed", "3", "--n-boot", "200"], p));
    assert!((v["result"]["rho"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let rows: String = (0..40).map(|i| format!("{},{}\n", u8::from(i % 3 == 0 || i > 30), i as f64 / 10.0)).collect();
    std::fs::write(p.join("reg.csv"), format!("y,x\n{rows}")).unwrap();
    let v = stdout_json(&ok(&["stats", "regress", "--model", "logistic", "--input", "reg.csv"], p));
    assert_eq!(v["n"], 40);
    let rows: String = (0..30).map(|i| format!("{},{}\n", 1 + i % 3, (i % 3) as f64 + (i % 5) as f64 * 0.3)).collect();
    std::fs::write(p.join("ord.csv"), format!("y,x\n{rows}")).unwrap();
    ok(&["stats", "regress", "--model", "ordered-probit", "--input", "ord.csv"], p);
    std::fs::write(p.join("badreg.csv"), "y\n0.5\n").unwrap();
    assert_eq!(topeval(&["stats", "regress", "--model", "logistic", "--input", "badreg.csv"], p).status.code(), Some(1));
}

#[test]
fn step_by_step_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    common::write_raw_corpus(p, 90, 8);
    common::write_pool(p);
    std::fs::write(p.join("pre.toml"), "min_df = 2\n").unwrap();
    ok(&["corpus", "preprocess", "--input", "raw.jsonl", "--output", "tok.jsonl", "--config", "pre.toml"], p);
    let audit = stdout_json(&ok(&["corpus", "vocab", "--input", "tok.jsonl", "--output", "vocab.tsv", "--config", "pre.toml"], p));
    assert_eq!(audit["documents"], 90);
    assert_eq!(audit["terms"], (common::CLUSTERS * common::CLUSTER_WORDS) as u64);
    assert!(audit["min_df_raw"].as_f64().is_some());
    ok(&["corpus", "encode", "--input", "tok.jsonl", "--vocab", "vocab.tsv", "--output", "corpus.bin"], p);

    std::fs::write(p.join("lda.toml"), "k = 3\niterations = 60\n").unwrap();
    ok(
        &[
            "lda",
            "train",
            "--corpus",
            "corpus.bin",
            "--vocab",
            "vocab.tsv",
            "--config",
            "lda.toml",
            "--seed",
            "5",
            "--topics",
            "topics.jsonl",
            "--checkpoint",
            "lda.ckpt",
        ],
        p,
    );
    assert!(p.join("lda.ckpt").is_file());

    ok(&["cooc", "count", "--corpus", "corpus.bin", "--vocab", "vocab.tsv", "--window", "10", "--output", "c10.bin", "--tsv", "c10.tsv"], p);
    ok(&["cooc", "count", "--corpus", "corpus.bin", "--vocab", "vocab.tsv", "--window", "110", "--output", "c110.bin", "--topics", "topics.jsonl"], p);
    ok(&["cooc", "count", "--corpus", "corpus.bin", "--vocab", "vocab.tsv", "--window", "doc", "--output", "cdoc.bin"], p);
    ok(&["cooc", "score", "--counts", "c10.bin", "--vocab", "vocab.tsv", "--topics", "topics.jsonl", "--metric", "npmi", "--output", "npmi.jsonl"], p);
    let lines = std::fs::read_to_string(p.join("npmi.jsonl")).unwrap();
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["source_tag"], "lda");
    assert!(first["value"].as_f64().unwrap() > 0.2);
    ok(&["cooc", "score", "--counts", "c110.bin", "--vocab", "vocab.tsv", "--topics", "topics.jsonl", "--metric", "cv"], p);
    assert_eq!(
        topeval(&["cooc", "score", "--counts", "c10.bin", "--vocab", "vocab.tsv", "--topics", "topics.jsonl", "--metric", "cv"], p).status.code(),
        Some(1)
    );
    ok(&["cooc", "score", "--counts", "cdoc.bin", "--vocab", "vocab.tsv", "--topics", "topics.jsonl", "--metric", "c_umass"], p);

    std::fs::write(p.join("space.toml"), "[params]\nalpha = [0.5, 1.0]\niterations = [40]\nk = [3]\n").unwrap();
    let sel = stdout_json(&ok(
        &[
            "select",
            "run",
            "--corpus",
            "corpus.bin",
            "--vocab",
            "vocab.tsv",
            "--ref-counts",
            "c10.bin",
            "--budget",
            "2",
            "--seed",
            "3",
            "--space",
            "space.toml",
            "--output-dir",
            "sel",
        ],
        p,
    ));
    assert_eq!(sel["budget"], 2);
    for f in ["candidates.jsonl", "filter_reports.jsonl", "selected_topics.jsonl"] {
        assert!(p.join("sel").join(f).is_file(), "{f}");
    }

    ok(
        &[
            "survey",
            "gen",
            "--topics",
            "topics.jsonl",
            "--pool",
            "topics.jsonl",
            "--pool",
            "pool.jsonl",
            "--seed",
            "1",
            "--distractors",
            "2",
            "--output",
            "items.jsonl",
        ],
        p,
    );
    let items = std::fs::read_to_string(p.join("items.jsonl")).unwrap();
    assert_eq!(items.lines().count(), 3 + 3 + 2);

    let (log, csv) = (p.join("log.jsonl"), p.join("resp.csv"));
    std::fs::write(&log, "").unwrap();
    ok(&["survey", "export", "--log", log.to_str().unwrap(), "--output", csv.to_str().unwrap()], p);
    let v = stdout_json(&ok(&["survey", "score", "--items", "items.jsonl", "--responses", "resp.csv", "--familiar-only", "--min-duration", "1"], p));
    assert_eq!(v["report"]["scores"].as_array().map_or(0, Vec::len), 0);
    assert_eq!(topeval(&["survey", "export", "--log", "nope.jsonl"], p).status.code(), Some(1));
}
