use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlx")).args(args).output().expect("spawn nlx")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = nlx(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage"), "{}", text(&out.stderr));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = nlx(&["evaluate", "--pred", "p.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_and_version_succeed() {
    let out = nlx(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for cmd in ["synth", "pretrain", "finetune", "concepts", "generate", "evaluate", "explain-predict", "attack", "attn-map"] {
        assert!(help.contains(cmd), "help lacks {cmd}");
    }
    assert_eq!(nlx(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = nlx(&["evaluate", "--pred", missing.to_str().unwrap(), "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("nope.jsonl"));
}

fn write(path: &Path, lines: &[&str]) {
    fs::write(path, lines.join("\n")).unwrap();
}

#[test]
fn evaluate_scores_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("test.jsonl");
    let pred = dir.path().join("pred.jsonl");
    write(
        &data,
        &[
            r#"{"id":"a","task":"vqa","image":"a.ppm","question":"what color is the square?","answers":["red"],"explanations":["the square is red"]}"#,
            r#"{"id":"b","task":"vqa","image":"b.ppm","question":"what shape is blue?","answers":["circle"],"explanations":["the blue object is a circle"]}"#,
        ],
    );
    write(
        &pred,
        &[
            r#"{"id":"a","answer":"red","explanation":"the square is red"}"#,
            r#"{"id":"b","answer":"square","explanation":"the blue object is a square"}"#,
        ],
    );
    let (p, d) = (pred.to_str().unwrap(), data.to_str().unwrap());
    let out = nlx(&["evaluate", "--pred", p, "--data", d]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let all: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let out = nlx(&["evaluate", "--pred", p, "--data", d, "--mode", "filtered"]);
    let kept: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(all["n_total"], 2);
    assert_eq!(kept["n_kept"], 1);
    assert_eq!(all["task_accuracy"], 0.5);
    // the one kept explanation is an exact match
    let bleu = kept["bleu_4"].as_f64().unwrap();
    assert!((bleu - 1.0).abs() < 1e-12, "{kept}");
}

#[test]
fn evaluate_with_out_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("test.jsonl");
    let pred = dir.path().join("pred.jsonl");
    write(&data, &[r#"{"id":"a","task":"vqa","image":"a.ppm","question":"q?","answers":["yes"],"explanations":["it is so"]}"#]);
    write(&pred, &[r#"{"id":"a","answer":"yes","explanation":"it is so"}"#]);
    let out_dir = dir.path().join("run");
    let out = nlx(&[
        "evaluate",
        "--pred",
        pred.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let manifest: nlx::manifest::RunManifest =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "evaluate");
    assert_eq!(manifest.inputs.len(), 2);
    assert_eq!(manifest.outputs.len(), 1);
    assert!(out_dir.join("report.json").is_file());
}
