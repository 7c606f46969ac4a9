use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hgcr_core::synth::{separable_corpus, SeparableConfig};

fn hgcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgcr"))
        .args(args)
        .env_remove("HGCR_LLM_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .display()
        .to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json summary on stdout")
}

#[test]
fn missing_corpus_exits_two_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgcr(&["--out-dir", &s(dir.path()), "build-graph", "--corpus", "/definitely/not/here.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    let rec: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["error"], "missing_file");
}

#[test]
fn bad_config_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "k=0\n").unwrap();
    let o = hgcr(&["--config", &s(&cfg), "--out-dir", &s(dir.path()), "report"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn toy_corpus_stats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("toy.jsonl");
    fs::write(
        &corpus,
        concat!(
            r#"{"doc_id":"1","year":2019,"concepts":["A","B","C"]}"#,
            "\n",
            r#"{"doc_id":"2","year":2020,"concepts":["C","D"]}"#,
            "\n",
            r#"{"doc_id":"3","year":2021,"concepts":["A","B"]}"#,
            "\n"
        ),
    )
    .unwrap();
    let v = stdout_json(&hgcr(&["--out-dir", &s(dir.path()), "build-graph", "--corpus", &s(&corpus)]));
    assert_eq!((v["nodes"].as_u64(), v["edges"].as_u64()), (Some(4), Some(4)));
    assert!(dir.path().join("graph.jsonl").is_file());
    assert!(dir.path().join("graph_stats.json").is_file());
}

#[test]
fn empty_corpus_is_a_valid_graph_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    fs::write(&corpus, "").unwrap();
    let v = stdout_json(&hgcr(&["--out-dir", &s(dir.path()), "build-graph", "--corpus", &s(&corpus)]));
    assert_eq!(v["nodes"], 0);
    assert_eq!(v["warnings"][0], "empty corpus");
}

#[test]
fn fixture_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let emb = format!("concept_embeddings={}", fixture("concepts.emb"));
    let base = ["--out-dir", out.as_str(), "--seed", "5", "--set", emb.as_str()];
    let run = |extra: &[&str]| hgcr(&[&base[..], extra].concat());

    stdout_json(&run(&["build-graph", "--corpus", &fixture("corpus.jsonl")]));
    let ds = stdout_json(&run(&["make-dataset", "--split-year", "2022"]));
    assert_eq!(ds["queries"], 1);
    assert!(ds["positives"].as_u64().unwrap() > 0);

    let tr = stdout_json(&run(&["--set", "epochs=5", "train"]));
    assert_eq!(tr["epochs"], 5);
    let o = run(&["eval-ranker"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("ROC AUC"));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ranker_metrics.json")).unwrap()).unwrap();
    assert!(metrics["macro_auc"].is_number());

    for mode in ["baseline", "feedback"] {
        let ex = stdout_json(&run(&["explain", "--mode", mode]));
        assert_eq!(ex["traces"], 1);
        assert!(run(&["eval-expl"]).status.success());
    }
    assert!(fs::read_to_string(dir.path().join("timing.jsonl")).unwrap().contains("latency_ms"));
    assert!(!fs::read_to_string(dir.path().join("traces.jsonl")).unwrap().contains("latency_ms"));

    let o = run(&["report"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("dnf"));

    let sv = stdout_json(&run(&["score-vs-sim"]));
    assert!(sv["points"].as_u64().unwrap() > 0);
}

#[test]
fn split_before_all_years_gives_zero_queries() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    stdout_json(&hgcr(&["--out-dir", &out, "build-graph", "--corpus", &fixture("corpus.jsonl")]));
    let v = stdout_json(&hgcr(&["--out-dir", &out, "make-dataset", "--split-year", "1990"]));
    assert_eq!((v["queries"].as_u64(), v["samples"].as_u64()), (Some(0), Some(0)));
    assert_eq!(fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap(), "");
}

#[test]
fn score_vs_sim_two_queries_three_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let world = SeparableConfig {
        n_queries: 2,
        ..Default::default()
    };
    let c = separable_corpus(&world, "x");
    let corpus = dir.path().join("corpus.jsonl");
    c.graph.write_corpus(fs::File::create(&corpus).unwrap()).unwrap();
    let emb = dir.path().join("concepts.emb");
    c.concepts.write(fs::File::create(&emb).unwrap()).unwrap();
    let emb_set = format!("concept_embeddings={}", s(&emb));
    let base = ["--out-dir", out.as_str(), "--set", emb_set.as_str(), "--set", "d_model=8"];
    let run = |extra: &[&str]| hgcr(&[&base[..], extra].concat());
    stdout_json(&run(&["build-graph", "--corpus", &s(&corpus)]));
    stdout_json(&run(&["--set", "dataset_mode=test", "make-dataset", "--split-year", "2022"]));
    stdout_json(&run(&["--set", "epochs=2", "train"]));
    let v = stdout_json(&run(&["score-vs-sim"]));
    assert_eq!(v["points"], 12);
    let lines = fs::read_to_string(dir.path().join("score_vs_sim.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 12);
}
