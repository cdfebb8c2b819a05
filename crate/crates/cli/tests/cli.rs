use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mmtopic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmtopic"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn mmtopic")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mmtopic(dir, args);
    assert!(
        out.status.success(),
        "mmtopic {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    fs::write(
        dir.join("spec.json"),
        r#"{"num_topics_true": 3, "vocab_size": 40, "docs": 60, "doc_length": 15.0,
            "embed_dim_text": 4, "embed_dim_image": 4}"#,
    )
    .unwrap();
    ok(
        dir,
        &["synth", "--spec", "spec.json", "--seed", "3", "--out", "data.jsonl", "--truth", "truth.json"],
    );
}

#[test]
fn synth_writes_dataset_vocab_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let lines = fs::read_to_string(dir.path().join("data.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 60);
    assert_eq!(fs::read_to_string(dir.path().join("vocab.txt")).unwrap().lines().count(), 40);
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["topics"].as_array().unwrap().len(), 3);
    assert_eq!(truth["spec"]["seed"], 3);
}

#[test]
fn train_eval_overlap_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    for (kind, out) in [("multimodal_contrast", "a.ckpt"), ("combined", "b.ckpt")] {
        ok(
            d,
            &[
                "train", "--data", "data.jsonl", "--kind", kind, "--topics", "3", "--epochs", "2",
                "--hidden-width", "16", "--out", out,
            ],
        );
    }
    let stdout = ok(
        d,
        &["eval", "--model", "a.ckpt", "--data", "data.jsonl", "--top-n", "5", "--descriptors", "desc.jsonl"],
    );
    let metrics: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(metrics["model_id"], "multimodal_contrast-k3-seed0");
    assert!(metrics["iec"].is_number());
    let desc = fs::read_to_string(d.join("desc.jsonl")).unwrap();
    assert_eq!(desc.lines().count(), 3);

    let stdout = ok(d, &["eval", "--model", "b.ckpt", "--data", "data.jsonl"]);
    let metrics: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(metrics["iec"].is_null());

    ok(d, &["overlap", "--a", "a.ckpt", "--b", "b.ckpt", "--top-n", "5", "--out", "overlap.json"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("overlap.json")).unwrap()).unwrap();
    assert_eq!(report["assigned"].as_array().unwrap().len(), 3);
}

#[test]
fn prep_builds_vocabulary_from_raw_text() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("raw")).unwrap();
    fs::create_dir(d.join("clean")).unwrap();
    let raw = [
        r#"{"id": "a", "text": "The cat sat on the mat", "text_embedding": [1, 0], "image_embedding": [0, 1]}"#,
        r#"{"id": "b", "text": "A dog chased the cat!", "text_embedding": [0, 1], "image_embedding": [1, 0]}"#,
    ];
    fs::write(d.join("raw/in.jsonl"), raw.join("\n")).unwrap();
    fs::write(d.join("stop.txt"), "the\na\non\n").unwrap();
    ok(
        d,
        &["prep", "--input", "raw/in.jsonl", "--out", "clean/out.jsonl", "--stopwords", "stop.txt"],
    );
    let vocab = fs::read_to_string(d.join("clean/vocab.txt")).unwrap();
    let mut terms: Vec<&str> = vocab.lines().collect();
    terms.sort_unstable();
    assert_eq!(terms, ["cat", "chased", "dog", "mat", "sat"]);
}

#[test]
fn run_then_report_and_rerun_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    fs::write(
        d.join("plan.json"),
        r#"{"datasets": ["data.jsonl"], "kinds": ["zeroshot", "multimodal_zeroshot"],
            "topic_counts": [3], "seeds": [0, 1], "lambda_sweep": [1, 60],
            "defaults": {"epochs": 2, "hidden_width": 16}, "output_dir": "out"}"#,
    )
    .unwrap();
    let table = ok(d, &["run", "--plan", "plan.json", "--workers", "2"]);
    assert_eq!(table.lines().count(), 2 + 3);
    let first = fs::read(d.join("out/aggregate.json")).unwrap();

    let again = mmtopic(d, &["run", "--plan", "plan.json"]);
    assert!(String::from_utf8_lossy(&again.stderr).contains("6 reused"));
    assert_eq!(fs::read(d.join("out/aggregate.json")).unwrap(), first);

    let csv = ok(d, &["report", "--dir", "out", "--format", "csv"]);
    assert!(csv.starts_with("dataset,model,lambda,"));
    assert_eq!(csv.lines().count(), 4);
    assert!(d.join("out/lambda_ablation.md").is_file());
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = mmtopic(d, &["train", "--data", "missing.jsonl", "--kind", "zeroshot", "--topics", "3", "--out", "m.ckpt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    let out = mmtopic(d, &["train", "--data", "x", "--kind", "lda", "--topics", "3", "--out", "m.ckpt"]);
    assert!(!out.status.success());

    fs::write(d.join("m.ckpt"), b"not a checkpoint").unwrap();
    let out = mmtopic(d, &["overlap", "--a", "m.ckpt", "--b", "m.ckpt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}
