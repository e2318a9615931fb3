use std::path::Path;
use std::process::{Command, Output};

fn qdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdc")).args(args).output().expect("qdc runs")
}

fn small_config(dir: &Path) -> String {
    let cfg = dir.join("small.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n\
         [encoder]\nvocab = 4096\ndim = 16\n\
         [train]\nbatch_size = 16\nhard_negatives = 3\n\
         [data.synthetic]\nnum_tasks = 2\ndocs_per_task = 120\ntrain_pairs_per_task = 40\n\
         test_queries_per_task = 20\nvocab_size = 150\n",
    )
    .unwrap();
    cfg.to_str().unwrap().to_string()
}

#[test]
fn exit_codes() {
    assert_eq!(qdc(&["--help"]).status.code(), Some(0));
    assert_eq!(qdc(&["bench", "--help"]).status.code(), Some(0));
    assert_eq!(qdc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(qdc(&["train", "--method", "FT+XYZ"]).status.code(), Some(2));
    assert_eq!(qdc(&["retrieve", "--task", "1"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let out = qdc(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nbatch_size = 0\n").unwrap();
    assert_eq!(qdc(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn grad_check_passes() {
    let out = qdc(&["grad-check", "--seeds", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok: max relative error"));
}

#[test]
fn bench_artifacts_serve_retrieve_eval_and_drift_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_root = dir.path().join("out");
    let out = qdc(&["bench", "--config", &cfg, "--out", out_root.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for m in ["FT+KD+QDC", "FT+REINDEX"] {
        assert!(stdout.contains(m));
    }
    let run = out_root.join("default");
    for f in ["metrics.csv", "table.txt", "ft/ledger.json", "ft/snapshots/task2.enc", "ft-kd/indexes/task1.idx"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let ft = run.join("ft");
    let ft = ft.to_str().unwrap();
    let out = qdc(&["retrieve", "--run", ft, "--task", "1", "--strategy", "qdc", "--k", "5", "search_query: hello"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 5);
    assert_eq!(qdc(&["retrieve", "--run", ft, "--task", "9", "x"]).status.code(), Some(1));

    // eval recomputes the stored matrix exactly
    let out = qdc(&["eval", "--run", ft, "--strategy", "qdc"]);
    assert_eq!(out.status.code(), Some(0));
    let stored = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    for line in String::from_utf8_lossy(&out.stdout).lines().skip(1) {
        assert!(stored.lines().any(|l| l == line), "{line}");
    }

    let out = qdc(&["drift-report", "--run", ft, "--from", "1", "--to", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("population,bucket"));
    assert_eq!(qdc(&["drift-report", "--run", ft, "--from", "1", "--to", "7"]).status.code(), Some(1));
}

#[test]
fn gen_data_and_train() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_root = dir.path().join("out");
    let o = out_root.to_str().unwrap();
    assert_eq!(qdc(&["gen-data", "--config", &cfg, "--out", o]).status.code(), Some(0));
    let data = out_root.join("default/data/task2");
    for f in ["corpus.jsonl", "queries.jsonl", "qrels/test.tsv", "qrels/train.tsv"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let out = qdc(&["train", "--config", &cfg, "--out", o, "--method", "ft+kd+qdc", "--multi-k", "2", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = out_root.join("default");
    let saved = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(saved.contains("seed = 5") && saved.contains("multi_k = 2") && saved.contains("FT+KD+QDC"));
    assert!(std::fs::read_to_string(run.join("ledger.json")).unwrap().contains("\"kind\": \"multi\""));
}
