//! Process-level tests of the `retask` binary over the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn retask(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retask"))
        .args(args)
        .env_remove("LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn run_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<String> {
    let fixtures = fixtures();
    let mut args: Vec<String> = vec![
        "run".into(),
        "--task".into(),
        fixtures.join("tasks/code_description.json").to_string_lossy().into_owned(),
        "--corpus".into(),
        fixtures.join("toy_corpus").to_string_lossy().into_owned(),
        "--out".into(),
        out.to_string(),
        "--mock-transcript".into(),
        fixtures.join("transcripts/code_description.json").to_string_lossy().into_owned(),
    ];
    if !extra.contains(&"--target-count") {
        args.push("--target-count".into());
        args.push("100".into());
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn run_pipeline(out_dir: &Path, extra: &[&str]) -> Output {
    let out = out_dir.to_string_lossy().into_owned();
    let args = run_args(&out, extra);
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    retask(&arg_refs)
}

#[test]
fn help_exits_zero() {
    let output = retask(&["--help"]);
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("run"));
}

#[test]
fn unknown_flag_exits_two() {
    let output = retask(&["run", "--definitely-not-a-flag"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_subcommand_exits_two() {
    let output = retask(&[]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn zero_target_count_exits_one_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_pipeline(dir.path(), &["--target-count", "0"]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("target_example_count"), "stderr was: {stderr}");
}

#[test]
fn run_writes_data_and_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_pipeline(dir.path(), &[]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(dir.path().join("data.jsonl").is_file());

    // Exit 0 implies a report whose counters reconcile.
    let report: retask_core::RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    report.check_identities().unwrap();
    assert_eq!(report.totals.examples_emitted, 100);

    let lines = std::fs::read_to_string(dir.path().join("data.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 100);
}

#[test]
fn identical_invocations_are_byte_reproducible() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    assert!(run_pipeline(first.path(), &[]).status.success());
    assert!(run_pipeline(second.path(), &[]).status.success());
    let a = std::fs::read(first.path().join("data.jsonl")).unwrap();
    let b = std::fs::read(second.path().join("data.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn run_never_writes_into_the_corpus() {
    fn snapshot(dir: &Path) -> Vec<(PathBuf, u64)> {
        let mut files = Vec::new();
        for entry in walk(dir) {
            let len = std::fs::metadata(&entry).unwrap().len();
            files.push((entry, len));
        }
        files.sort();
        files
    }
    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
        out
    }
    let corpus = fixtures().join("toy_corpus");
    let before = snapshot(&corpus);
    let dir = tempfile::tempdir().unwrap();
    assert!(run_pipeline(dir.path(), &[]).status.success());
    assert_eq!(before, snapshot(&corpus), "corpus directory must stay untouched");
}

#[test]
fn unanimous_none_votes_without_fallback_exit_one() {
    // Clone the bundled transcript but make every rerank vote a refusal.
    let text =
        std::fs::read_to_string(fixtures().join("transcripts/code_description.json")).unwrap();
    let mut transcript: serde_json::Value = serde_json::from_str(&text).unwrap();
    for entry in transcript["entries"].as_array_mut().unwrap() {
        if entry["label"] == "rerank" {
            entry["responses"] =
                serde_json::json!(vec!["none of these datasets fit the task"; 5]);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let transcript_path = dir.path().join("none_votes.json");
    std::fs::write(&transcript_path, transcript.to_string()).unwrap();

    let out = dir.path().join("out");
    let fixtures = fixtures();
    let output = retask(&[
        "run",
        "--task",
        fixtures.join("tasks/code_description.json").to_str().unwrap(),
        "--corpus",
        fixtures.join("toy_corpus").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mock-transcript",
        transcript_path.to_str().unwrap(),
        "--target-count",
        "100",
        "--no-fallback",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("no suitable dataset"), "stderr was: {stderr}");
}

#[test]
fn analyze_chains_on_run_output() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_pipeline(dir.path(), &[]).status.success());
    let data = dir.path().join("data.jsonl");
    let output = retask(&[
        "analyze",
        "--data",
        data.to_str().unwrap(),
        "--task-kind",
        "code",
        "--export-inputs",
        dir.path().join("inputs.txt").to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("threshold 0.80"), "code tasks default to 0.8: {stdout}");

    let quality: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("quality.json")).unwrap())
            .unwrap();
    assert!(quality["uniqueness"]["unique_fraction"].is_number());
    assert!(quality["diversity"]["tokens_per_example"].is_number());
    assert!(quality["difficulty"].is_null());

    let inputs = std::fs::read_to_string(dir.path().join("inputs.txt")).unwrap();
    assert_eq!(inputs.lines().count(), 100);
}

#[test]
fn analyze_with_mock_judge_builds_histogram() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_pipeline(dir.path(), &[]).status.success());
    let judge_transcript = serde_json::json!({
        "entries": [{
            "label": "difficulty",
            "contains": "You must just give a score",
            "response": "3"
        }]
    });
    let transcript_path = dir.path().join("judge.json");
    std::fs::write(&transcript_path, judge_transcript.to_string()).unwrap();
    let output = retask(&[
        "analyze",
        "--data",
        dir.path().join("data.jsonl").to_str().unwrap(),
        "--judge",
        "--mock-transcript",
        transcript_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let quality: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("quality.json")).unwrap())
            .unwrap();
    assert_eq!(quality["difficulty"]["scores"]["3"], 100);
    assert_eq!(quality["difficulty"]["mean"], 3.0);
}

#[test]
fn dedup_rewrites_file_in_place() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_pipeline(dir.path(), &[]).status.success());
    let data = dir.path().join("data.jsonl");
    let before = std::fs::read_to_string(&data).unwrap().lines().count();
    let output = retask(&["dedup", "--data", data.to_str().unwrap(), "--threshold", "0.7"]);
    assert!(output.status.success());
    let after = std::fs::read_to_string(&data).unwrap().lines().count();
    assert!(after < before, "toy data has near-duplicates to remove");

    // Re-analyzing the deduped file at the same threshold: all unique.
    let examples = retask_core::read_jsonl(&data).unwrap();
    let inputs: Vec<String> = examples.iter().map(|e| e.input.clone()).collect();
    assert_eq!(retask_core::uniqueness_report(&inputs, 0.7).unique_fraction, 1.0);
}

#[test]
fn transform_runs_one_dataset_without_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = fixtures();
    let output = retask(&[
        "transform",
        "--task",
        fixtures.join("tasks/code_description.json").to_str().unwrap(),
        "--corpus",
        fixtures.join("toy_corpus").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--dataset",
        "code_reviews",
        "--mock-transcript",
        fixtures.join("transcripts/code_description.json").to_str().unwrap(),
        "--target-count",
        "25",
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let examples = retask_core::read_jsonl(&dir.path().join("data.jsonl")).unwrap();
    assert_eq!(examples.len(), 25);
    assert!(examples.iter().all(|e| e.provenance.dataset == "code_reviews"));
    assert!(dir.path().join("attempts/code_reviews__default/plan.txt").is_file());
}

#[test]
fn index_build_then_retrieve_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let index_path = dir.path().join("index.json");
    let fixtures = fixtures();
    let output = retask(&[
        "index",
        "build",
        "--corpus",
        fixtures.join("toy_corpus").to_str().unwrap(),
        "--out",
        index_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let output = retask(&[
        "retrieve",
        "--task",
        fixtures.join("tasks/code_description.json").to_str().unwrap(),
        "--index",
        index_path.to_str().unwrap(),
        "--k",
        "6",
    ]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.lines().count(), 6);
    assert!(stdout.contains("python_snippets"));
}

#[test]
fn report_verb_prints_counters() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_pipeline(dir.path(), &[]).status.success());
    let output = retask(&[
        "report",
        "--report",
        dir.path().join("report.json").to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("python_snippets/default"));
    assert!(stdout.contains("emitted 100"));
}

#[test]
fn config_file_and_flags_layer_correctly() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    // File sets 40; the flag must win with 30.
    std::fs::write(&config_path, r#"{"target_example_count": 40}"#).unwrap();
    let out = dir.path().join("out");
    let fixtures = fixtures();
    let output = retask(&[
        "--config",
        config_path.to_str().unwrap(),
        "run",
        "--task",
        fixtures.join("tasks/code_description.json").to_str().unwrap(),
        "--corpus",
        fixtures.join("toy_corpus").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mock-transcript",
        fixtures.join("transcripts/code_description.json").to_str().unwrap(),
        "--target-count",
        "30",
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let examples = retask_core::read_jsonl(&out.join("data.jsonl")).unwrap();
    assert_eq!(examples.len(), 30);

    // Without the flag the file value applies.
    let out2 = dir.path().join("out2");
    let args: Vec<String> = vec![
        "--config".into(),
        config_path.to_string_lossy().into_owned(),
        "run".into(),
        "--task".into(),
        fixtures.join("tasks/code_description.json").to_string_lossy().into_owned(),
        "--corpus".into(),
        fixtures.join("toy_corpus").to_string_lossy().into_owned(),
        "--out".into(),
        out2.to_string_lossy().into_owned(),
        "--mock-transcript".into(),
        fixtures.join("transcripts/code_description.json").to_string_lossy().into_owned(),
    ];
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let output = retask(&arg_refs);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let examples = retask_core::read_jsonl(&out2.join("data.jsonl")).unwrap();
    assert_eq!(examples.len(), 40);
}

#[test]
fn unknown_config_file_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"target_count": 40}"#).unwrap();
    let out = dir.path().join("out").to_string_lossy().into_owned();
    let mut args: Vec<String> = vec![
        "--config".into(),
        config_path.to_string_lossy().into_owned(),
    ];
    args.extend(run_args(&out, &[]));
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let output = retask(&arg_refs);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown field"));
}

#[test]
fn environment_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"target_example_count": 40}"#).unwrap();
    let out = dir.path().join("out");
    let fixtures = fixtures();
    let output = Command::new(env!("CARGO_BIN_EXE_retask"))
        .env("RETASK_TARGET_COUNT", "20")
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "run",
            "--task",
            fixtures.join("tasks/code_description.json").to_str().unwrap(),
            "--corpus",
            fixtures.join("toy_corpus").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--mock-transcript",
            fixtures.join("transcripts/code_description.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let examples = retask_core::read_jsonl(&out.join("data.jsonl")).unwrap();
    assert_eq!(examples.len(), 20);
}

#[test]
fn import_bigbench_maps_examples() {
    let dir = tempfile::tempdir().unwrap();
    let bigbench = serde_json::json!({
        "description": "Give an English language description of Python code.",
        "examples": [
            {"input": "for i in range(3): print(i)", "target": "prints zero through two"},
            {"input": "x = []", "target_scores": {"makes an empty list": 1.0, "deletes x": 0.0}},
            {"input": "y = 1", "target": "sets y"},
        ],
    });
    let input_path = dir.path().join("bb.json");
    std::fs::write(&input_path, bigbench.to_string()).unwrap();
    let out_path = dir.path().join("task.json");
    let output = retask(&[
        "task",
        "import-bigbench",
        "--input",
        input_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--task-id",
        "code-desc-bb",
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let task: retask_core::TaskSpec =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(task.task_id, "code-desc-bb");
    assert_eq!(task.examples.len(), 2, "max-examples default keeps two");
    assert_eq!(task.examples[1].output, "makes an empty list");
}

#[test]
fn missing_api_key_without_mock_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = fixtures();
    let output = retask(&[
        "run",
        "--task",
        fixtures.join("tasks/code_description.json").to_str().unwrap(),
        "--corpus",
        fixtures.join("toy_corpus").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("LLM_API_KEY"));
}
