use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn lbnl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbnl"))
        .args(args)
        .env_clear()
        .output()
        .expect("spawn lbnl")
}

fn ok(args: &[&str]) -> Output {
    let out = lbnl(args);
    assert!(
        out.status.success(),
        "lbnl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic corpus and a model initialized on it.
fn fixture() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("m0.ckpt");
    ok(&[
        "synth",
        "--n-queries",
        "4",
        "--docs-per-query",
        "3",
        "--seed",
        "1",
        "--out",
        s(&data),
    ]);
    let requests = data.join("requests.jsonl");
    ok(&[
        "init",
        "--texts",
        s(&requests),
        "--out",
        s(&model),
        "--d-hidden",
        "16",
        "--d-ffn",
        "24",
        "--max-docs-per-pass",
        "8",
    ]);
    (dir, data, model)
}

#[test]
fn rerank_writes_one_ranked_line_per_document() {
    let (dir, _, model) = fixture();
    let input = dir.path().join("one.jsonl");
    std::fs::write(
        &input,
        r#"{"query_id":"q1","query_text":"red apples","docs":[{"doc_id":"a","doc_text":"red apples grow","first_stage_score":0.9},{"doc_id":"b","doc_text":"blue sky","first_stage_score":0.1},{"doc_id":"c","doc_text":"apples","first_stage_score":0.5}]}"#,
    )
    .unwrap();
    let run = dir.path().join("run.txt");
    ok(&[
        "rerank",
        "--model",
        s(&model),
        "--input",
        s(&input),
        "--output",
        s(&run),
        "--ordering",
        "desc",
    ]);
    let text = std::fs::read_to_string(&run).unwrap();
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(lines.len(), 3);
    let mut ids: Vec<&str> = lines.iter().map(|l| l[2]).collect();
    ids.sort();
    assert_eq!(ids, ["a", "b", "c"]);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l[0], "q1");
        assert_eq!(l[3], (i + 1).to_string());
    }
}

#[test]
fn missing_model_is_a_usage_error_naming_the_path() {
    let (dir, data, _) = fixture();
    let missing = dir.path().join("nope.ckpt");
    let run = dir.path().join("run.txt");
    let out = lbnl(&[
        "rerank",
        "--model",
        s(&missing),
        "--input",
        s(&data.join("requests.jsonl")),
        "--output",
        s(&run),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = lbnl(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_step_training_keeps_the_checkpoint() {
    let (dir, data, model) = fixture();
    let out_ckpt = dir.path().join("m1.ckpt");
    let out = ok(&[
        "train",
        "--preset",
        "overfit",
        "--steps",
        "0",
        "--data",
        s(&data.join("train.jsonl")),
        "--model",
        s(&model),
        "--out-checkpoint",
        s(&out_ckpt),
    ]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&out_ckpt).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["steps"], 0);
}

#[test]
fn training_writes_trace_and_report() {
    let (dir, data, model) = fixture();
    let out_ckpt = dir.path().join("m1.ckpt");
    let stage = dir.path().join("stage.toml");
    std::fs::write(
        &stage,
        "preset = \"overfit\"\nbatch_size = 2\nsteps = 3\neval_every = 0\nlora_rank = 2\nlora_alpha = 4.0\n",
    )
    .unwrap();
    let out = ok(&[
        "train",
        "--stage-config",
        s(&stage),
        "--data",
        s(&data.join("train.jsonl")),
        "--model",
        s(&model),
        "--out-checkpoint",
        s(&out_ckpt),
        "--eval-requests",
        s(&data.join("requests.jsonl")),
        "--eval-qrels",
        s(&data.join("qrels.txt")),
    ]);
    let trace = std::fs::read_to_string(dir.path().join("m1.ckpt.trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["steps"], 3);
    assert!(report["training_ndcg@10"].as_f64().is_some());
    assert_ne!(std::fs::read(&model).unwrap(), std::fs::read(&out_ckpt).unwrap());
}

#[test]
fn single_model_merge_is_byte_identical() {
    let (dir, _, model) = fixture();
    let spec = dir.path().join("merge.toml");
    std::fs::write(
        &spec,
        "mode = \"merge\"\nmerge_checkpoints = [\"m0.ckpt\"]\nmerge_weights = [1.0]\n",
    )
    .unwrap();
    let merged = dir.path().join("merged.ckpt");
    ok(&["merge", "--spec", s(&spec), "--out", s(&merged)]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&merged).unwrap());
}

#[test]
fn ideal_run_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.txt");
    let qrels = dir.path().join("qrels.txt");
    std::fs::write(&run, "q1 Q0 a 1 2.0 t\nq1 Q0 b 2 1.0 t\nq2 Q0 c 1 1.0 t\n").unwrap();
    std::fs::write(&qrels, "q1 0 a 2\nq1 0 b 1\nq2 0 c 1\n").unwrap();
    let out = ok(&["eval", "--run", s(&run), "--qrels", s(&qrels)]);
    let text = String::from_utf8_lossy(&out.stdout);
    let mean = text.lines().find_map(|l| l.strip_prefix("mean=")).expect("mean line");
    assert_eq!(mean.parse::<f64>().unwrap(), 1.0, "{text}");
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--seed", "7", "--out", s(&a)]);
    ok(&["synth", "--seed", "7", "--out", s(&b)]);
    for f in ["requests.jsonl", "qrels.txt", "train.jsonl"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn mining_writes_training_examples() {
    let (dir, data, _) = fixture();
    let out = dir.path().join("mined.jsonl");
    ok(&[
        "mine",
        "--requests",
        s(&data.join("requests.jsonl")),
        "--qrels",
        s(&data.join("qrels.txt")),
        "--out",
        s(&out),
        "--negatives",
        "2",
    ]);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["negatives"].as_array().unwrap().len() == 2));
}

#[test]
fn gradcheck_passes_and_flags_come_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_lbnl"))
        .args(["gradcheck"])
        .env_clear()
        .env("LBNL_COMPONENT", "losses")
        .env("LBNL_SEED", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("component=losses seed=4"), "{text}");
    assert!(text.lines().last().unwrap().starts_with("worst="));
}
