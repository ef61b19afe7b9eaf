use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tablemb::corpus::write_corpus;
use tablemb::synth::{generate_corpus, SynthConfig};
use tablemb::tasks::coltype_records;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tablemb"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, name: &str, n: usize) -> PathBuf {
    let tables: Vec<_> = generate_corpus(name, n, &SynthConfig::default())
        .unwrap()
        .into_iter()
        .map(|t| t.table)
        .collect();
    let p = dir.join(format!("{name}.jsonl"));
    write_corpus(&p, &tables).unwrap();
    p
}

const TINY: &[&str] = &["--hidden", "16", "--layers", "1", "--heads", "2", "--max-cells", "400"];

fn pretrain(dir: &Path, corpus: &Path, out: &str, extra: &[&str]) -> (Output, PathBuf) {
    let ckpt = dir.join(out);
    let mut args = vec!["pretrain", "--threads", "1", "--corpus", s(corpus), "--out", s(&ckpt)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    (run(&args), ckpt)
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(tablemb_cli::run(["tablemb"]), 1);
}

#[test]
fn help_exits_0() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["pretrain", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(
        run(&["eval", "--pred", "a", "--gold", "b", "--bogus"]).status.code(),
        Some(1)
    );
}

#[test]
fn missing_corpus_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&[
        "pretrain",
        "--corpus",
        s(&missing),
        "--out",
        s(&dir.path().join("c.bin")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn eval_ranking_toy_file() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.jsonl");
    let gold = dir.path().join("gold.jsonl");
    std::fs::write(
        &pred,
        r#"{"id": "q1", "ranking": ["a", "b", "c"]}
{"id": "q2", "ranking": ["a", "b", "c"]}
{"id": "q3", "ranking": ["x", "y", "z"]}
"#,
    )
    .unwrap();
    std::fs::write(
        &gold,
        r#"{"id": "q1", "gold": ["a"]}
{"id": "q2", "gold": ["b"]}
{"id": "q3", "gold": ["z"]}
"#,
    )
    .unwrap();
    let out = run(&["eval", "--pred", s(&pred), "--gold", s(&gold)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let expect = (1.0 + 0.5 + 1.0 / 3.0) / 3.0;
    assert!((v["map"].as_f64().unwrap() - expect).abs() < 1e-12);
    assert!((v["mrr"].as_f64().unwrap() - expect).abs() < 1e-12);
    assert_eq!(v["queries"], 3);
}

#[test]
fn eval_classification() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.jsonl");
    let gold = dir.path().join("gold.jsonl");
    std::fs::write(&pred, "{\"id\":1,\"label\":\"date\"}\n{\"id\":2,\"label\":\"name\"}\n").unwrap();
    std::fs::write(&gold, "{\"id\":1,\"label\":\"date\"}\n{\"id\":2,\"label\":\"date\"}\n").unwrap();
    let out = run(&["eval", "--pred", s(&pred), "--gold", s(&gold)]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["accuracy"], 0.5);
}

#[test]
fn pretrain_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "t", 24);
    let (o1, a) = pretrain(
        dir.path(),
        &c,
        "a.bin",
        &["--epochs", "1", "--lr", "1e-3", "--seed", "5"],
    );
    let (o2, b) = pretrain(
        dir.path(),
        &c,
        "b.bin",
        &["--epochs", "1", "--lr", "1e-3", "--seed", "5"],
    );
    assert_eq!(o1.status.code(), Some(0), "{}", String::from_utf8_lossy(&o1.stderr));
    assert_eq!(o2.status.code(), Some(0));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(o1.stdout.len(), o2.stdout.len());
    let (_, c2) = pretrain(
        dir.path(),
        &c,
        "c.bin",
        &["--epochs", "1", "--lr", "1e-3", "--seed", "6"],
    );
    assert_ne!(std::fs::read(c2).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn config_file_defaults_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "t", 8);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# desk run\nepochs = 3\nlr = 1e-3\n").unwrap();
    let (out, _) = pretrain(dir.path(), &c, "m.bin", &["--config", s(&cfg), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["epoch_losses"].as_array().unwrap().len(), 1);

    let (out, _) = pretrain(dir.path(), &c, "m.bin", &["--config", s(&cfg), "--epochs", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let (out, _) = pretrain(dir.path(), &c, "m.bin", &["--config", s(&cfg)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["epoch_losses"].as_array().unwrap().len(), 3);

    std::fs::write(&cfg, "no-such-flag = 2\n").unwrap();
    let (out, _) = pretrain(dir.path(), &c, "m.bin", &["--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn resolved_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "t", 4);
    let ckpt = dir.path().join("m.bin");
    let mut args = vec!["pretrain", "--corpus", s(&c), "--out", s(&ckpt), "--epochs", "0"];
    args.extend_from_slice(TINY);
    let out = bin().env("RUST_LOG", "info").args(&args).output().unwrap();
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pretrain config"), "{err}");
    assert!(err.contains("\"epochs\":0"), "{err}");
}

#[test]
fn embed_knn_cluster_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "t", 12);
    let (o, ckpt) = pretrain(dir.path(), &c, "m.bin", &["--epochs", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let index = dir.path().join("idx.bin");
    let out = run(&[
        "embed",
        "--corpus",
        s(&c),
        "--ckpt",
        s(&ckpt),
        "--kind",
        "table",
        "--out",
        s(&index),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["vectors"], 12);

    let out = run(&[
        "knn",
        "--index",
        s(&index),
        "--query-table",
        "t3",
        "--k",
        "4",
        "--exclude-self",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let hits = v["neighbors"].as_array().unwrap();
    assert_eq!(hits.len(), 4);
    assert!(hits.iter().all(|h| h["key"] != "t3/table"));
    let d: Vec<f64> = hits.iter().map(|h| h["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));

    let out = run(&["knn", "--index", s(&index), "--query-table", "missing"]);
    assert_eq!(out.status.code(), Some(2));

    let clusters = dir.path().join("clusters.json");
    let out = run(&[
        "cluster",
        "--index",
        s(&index),
        "--k",
        "3",
        "--seed",
        "1",
        "--out",
        s(&clusters),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&clusters).unwrap()).unwrap();
    let m = v.as_object().unwrap();
    assert_eq!(m.len(), 12);
    assert!(m.values().all(|c| c.as_u64().unwrap() < 3));
}

#[test]
fn detect_with_corruption_reports_per_type_scores() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "t", 10);
    let (_, ckpt) = pretrain(dir.path(), &c, "m.bin", &["--epochs", "0"]);
    let lines = dir.path().join("det.jsonl");
    let out = run(&[
        "detect",
        "--ckpt",
        s(&ckpt),
        "--corpus",
        s(&c),
        "--corrupt",
        "--strategy",
        "mix",
        "--rate",
        "0.3",
        "--out",
        s(&lines),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["detection"]["all"]["f1"].is_number());
    let text = std::fs::read_to_string(&lines).unwrap();
    assert_eq!(text.lines().count(), 10);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["labels"].is_array());
    assert!(first["probabilities"].is_array());

    let out = run(&["detect", "--corpus", s(&c)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn finetune_coltype_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "t", 6);
    let (_, ckpt) = pretrain(dir.path(), &c, "m.bin", &["--epochs", "0"]);
    let typed: Vec<_> = generate_corpus("ct", 12, &SynthConfig::default())
        .unwrap()
        .into_iter()
        .map(|t| (t.table, t.types.iter().map(|x| x.to_string()).collect::<Vec<_>>()))
        .collect();
    let recs = coltype_records(&typed);
    let write = |name: &str, r: &[tablemb::tasks::TaskRecord]| {
        let p = dir.path().join(name);
        let body: String = r.iter().map(|x| serde_json::to_string(x).unwrap() + "\n").collect();
        std::fs::write(&p, body).unwrap();
        p
    };
    let train = write("train.jsonl", &recs[..recs.len() / 2]);
    let val = write("val.jsonl", &recs[recs.len() / 2..]);
    let out_ckpt = dir.path().join("task.bin");
    let out = run(&[
        "finetune-coltype",
        "--train",
        s(&train),
        "--val",
        s(&val),
        "--test",
        s(&val),
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&out_ckpt),
        "--epochs",
        "1",
        "--lr",
        "1e-3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["history"].as_array().unwrap().len(), 2);
    assert!(v["test"]["weighted_f1"].is_number());
    assert!(tablemb::TaskModel::load(&out_ckpt).is_ok());
}
