//! End-to-end exercises of the binary: exit codes 0 (clean run),
//! 1 (usage), and 2 (infrastructure).

use std::path::Path;
use std::process::{Command, Output};

fn semag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semag"))
        .args(args)
        .env_remove("SEMAG_ENDPOINT")
        .env_remove("SEMAG_AUTH_ENV")
        .output()
        .expect("binary must spawn")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn write_dataset(dir: &Path) -> std::path::PathBuf {
    let mut lines = String::new();
    for i in 0..3 {
        let record = serde_json::json!({
            "id": format!("cli-{i}"),
            "statement": format!("Emit the token R{i} on standard output."),
            "visible": [{"input": "", "output": format!("R{i}")}],
            "hidden": [{"input": "ignored", "output": format!("R{i}")}],
            "tags": ["lang:sh"],
        });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    let path = dir.join("tasks.jsonl");
    std::fs::write(&path, lines).unwrap();
    path
}

#[test]
fn help_exits_clean() {
    let output = semag(&["--help"]);
    assert_eq!(output.status.code(), Some(0));
    let text = stdout(&output);
    assert!(text.contains("solve"));
    assert!(text.contains("select-backbone"));
    assert!(text.contains("report"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let output = semag(&["frobnicate"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let output = semag(&["solve", "--dataset", "/nonexistent/tasks.jsonl"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("error:"));
}

#[test]
fn unknown_schema_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path());
    let output = semag(&[
        "solve",
        "--dataset",
        dataset.to_str().unwrap(),
        "--schema",
        "nope",
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn live_backend_without_endpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path());
    let output = semag(&[
        "solve",
        "--dataset",
        dataset.to_str().unwrap(),
        "--backend",
        "some-model",
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("SEMAG_ENDPOINT"));
}

#[test]
fn mock_solve_writes_artifacts_and_report_renders_them() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path());
    let run_dir = dir.path().join("run");

    let output = semag(&[
        "solve",
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("run "));
    assert!(text.contains("pass@1"));
    assert!(text.contains("1.0000"));
    for artifact in [
        "manifest.json",
        "metrics.json",
        "timing.json",
        "events.jsonl",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }

    let output = semag(&[
        "report",
        "--run",
        run_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let csv = stdout(&output);
    assert!(csv.starts_with("task_id,passed,errored,final_level,tokens,wall_ms"));
    assert_eq!(csv.lines().count(), 4);

    let output = semag(&[
        "report",
        "--run",
        run_dir.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let value: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    assert_eq!(value["metrics"]["pass_at_1"], 1.0);

    let output = semag(&[
        "report",
        "--run",
        run_dir.to_str().unwrap(),
        "--format",
        "yaml",
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn report_on_missing_run_is_a_usage_error() {
    let output = semag(&["report", "--run", "/nonexistent/run"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn live_search_fixture_is_an_infra_error() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.txt");
    std::fs::write(&profile, "competitive programming code generation\n").unwrap();
    let registry = dir.path().join("registry.json");
    std::fs::write(
        &registry,
        r#"[{"model_id": "astra-coder", "endpoint": "https://api.test/v1"}]"#,
    )
    .unwrap();

    let output = semag(&[
        "select-backbone",
        "--profile",
        profile.to_str().unwrap(),
        "--registry",
        registry.to_str().unwrap(),
        "--fixture",
        "live",
    ]);
    assert_eq!(output.status.code(), Some(2));
}
