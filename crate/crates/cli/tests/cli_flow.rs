//! CLI-surface behavior: exit codes, fail-fast on bad config or unreachable
//! endpoints, run-dir guards, and the prefix study end to end.

use std::path::{Path, PathBuf};
use std::process::Command;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn cothink(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cothink")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn demo_config(dir: &Path) -> PathBuf {
    let root = repo_root();
    write_config(
        dir,
        &format!(
            r#"best_of_n = 3
concurrency_limit = 4
cache_dir = {cache:?}

[instruct_endpoint]
base_url = "mock://instruct"
model_name = "mock-instruct"

[thinking_endpoint]
base_url = "mock://thinking"
model_name = "mock-think"

[datasets]
"custom:smoke" = {problems:?}

[mock]
script = {script:?}
"#,
            cache = dir.join("runs").display().to_string(),
            problems = root.join("demo/problems.jsonl").display().to_string(),
            script = root.join("demo/mock_script.json").display().to_string(),
        ),
    )
}

#[test]
fn invalid_config_exits_2_and_names_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"best_of_n = 0

[instruct_endpoint]
base_url = "http://localhost:1/v1"
model_name = "m"

[thinking_endpoint]
base_url = "http://localhost:2/v1"
model_name = "m2"

[prompt_templates]
expand_stage2 = "{problem} no outline here"
"#,
    );
    let output = cothink(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        "custom:smoke",
        "--strategy",
        "cothink",
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("best_of_n"), "{stderr}");
    assert!(stderr.contains("prompt_templates.expand_stage2"), "{stderr}");
    assert!(stderr.contains("{outline}"), "{stderr}");
}

#[test]
fn unreachable_endpoint_fails_fast_with_untouched_store() {
    let tmp = tempfile::tempdir().unwrap();
    let root = repo_root();
    let config = write_config(
        tmp.path(),
        &format!(
            r#"[instruct_endpoint]
base_url = "http://127.0.0.1:9/v1"
model_name = "m"

[thinking_endpoint]
base_url = "http://127.0.0.1:9/v1"
model_name = "m2"

[http]
timeout_secs = 2
retries = 0
backoff_ms = 1

[datasets]
"custom:smoke" = {problems:?}
"#,
            problems = root.join("demo/problems.jsonl").display().to_string(),
        ),
    );
    let out_dir = tmp.path().join("out");
    let output = cothink(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        "custom:smoke",
        "--strategy",
        "solo-thinking",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    // Nothing was appended.
    let outcomes = out_dir.join("outcomes.jsonl");
    assert!(
        !outcomes.exists() || std::fs::read_to_string(&outcomes).unwrap().trim().is_empty(),
        "store must stay empty on connectivity failure"
    );
}

#[test]
fn run_dir_reuse_with_different_strategy_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());
    let out_dir = tmp.path().join("shared");
    let first = cothink(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        "custom:smoke",
        "--strategy",
        "solo-thinking",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(first.status.code(), Some(0));
    let second = cothink(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        "custom:smoke",
        "--strategy",
        "cothink",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(second.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&second.stderr).contains("refusing"));
}

#[test]
fn unknown_report_format_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    std::fs::write(&report, "{}").unwrap();
    let output =
        cothink(&["report", "--in", report.to_str().unwrap(), "--format", "pdf"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown report format"));
}

#[test]
fn partial_failures_exit_1_and_record_the_rest() {
    // A script without p4's solo entry: the run completes 5 problems and
    // reports one failure.
    let tmp = tempfile::tempdir().unwrap();
    let root = repo_root();
    let script_text = std::fs::read_to_string(root.join("demo/mock_script.json")).unwrap();
    let mut script: serde_json::Value = serde_json::from_str(&script_text).unwrap();
    let entries = script["entries"].as_array_mut().unwrap();
    entries.retain(|e| {
        !(e["model"] == "mock-think" && e["match"]["tag"] == "solo_thinking:p4")
    });
    let script_path = tmp.path().join("script.json");
    std::fs::write(&script_path, serde_json::to_string(&script).unwrap()).unwrap();

    let config = write_config(
        tmp.path(),
        &format!(
            r#"[instruct_endpoint]
base_url = "mock://instruct"
model_name = "mock-instruct"

[thinking_endpoint]
base_url = "mock://thinking"
model_name = "mock-think"

[datasets]
"custom:smoke" = {problems:?}

[mock]
script = {script:?}
"#,
            problems = root.join("demo/problems.jsonl").display().to_string(),
            script = script_path.display().to_string(),
        ),
    );
    let out_dir = tmp.path().join("out");
    let output = cothink(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        "custom:smoke",
        "--strategy",
        "solo-thinking",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("completed=5"), "{stdout}");
    assert!(stdout.contains("failures=1"), "{stdout}");
    assert!(String::from_utf8_lossy(&output.stderr).contains("p4"));

    // Scoring the incomplete run against a complete baseline is a coverage
    // mismatch.
    let full_config = demo_config(tmp.path());
    let baseline_dir = tmp.path().join("baseline");
    let baseline = cothink(&[
        "run",
        "--config",
        full_config.to_str().unwrap(),
        "--dataset",
        "custom:smoke",
        "--strategy",
        "solo-thinking",
        "--role",
        "instruct",
        "--out",
        baseline_dir.to_str().unwrap(),
    ]);
    assert_eq!(baseline.status.code(), Some(0));
    let score = cothink(&[
        "score",
        "--runs",
        out_dir.to_str().unwrap(),
        "--baseline",
        baseline_dir.to_str().unwrap(),
        "--out",
        tmp.path().join("report.json").to_str().unwrap(),
    ]);
    assert_eq!(score.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&score.stderr).contains("coverage mismatch"));
}

#[test]
fn prefix_study_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());
    let solo_dir = tmp.path().join("solo");
    let run = cothink(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        "custom:smoke",
        "--strategy",
        "solo-thinking",
        "--out",
        solo_dir.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0));

    let csv_path = tmp.path().join("study.csv");
    let output = cothink(&[
        "prefix-study",
        "--config",
        config.to_str().unwrap(),
        "--source",
        solo_dir.to_str().unwrap(),
        "--problems",
        "p1,p3,p5",
        "--max-k",
        "4",
        "--dataset",
        "custom:smoke",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    // p5 never solves -> partial exit.
    assert_eq!(output.status.code(), Some(1), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("solved 2/3"), "{stdout}");

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    // p1: 3-episode trace, solved at k=2 -> fractions 2/3 of episodes.
    assert!(csv.contains("p1,3,2,true,2,0.6667"), "{csv}");
    // p3: 2-episode trace, solved at k=1 -> half the episodes.
    assert!(csv.contains("p3,2,1,true,1,0.5000"), "{csv}");
    // p5: single episode, never solved at max k.
    assert!(csv.contains("p5,1,1,false,,,"), "{csv}");

    // Unweighted mean over solved problems: (2/3 + 1/2) / 2.
    let expected_mean = (2.0 / 3.0 + 0.5) / 2.0;
    assert!(
        stdout.contains(&format!("mean fraction episodes {expected_mean:.4}")),
        "{stdout}"
    );
}

#[test]
fn prefix_study_without_trace_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());
    // Source dir with no_thinking outcomes only: no solo traces.
    let nothink_dir = tmp.path().join("nothink");
    let run = cothink(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        "custom:smoke",
        "--strategy",
        "no-thinking",
        "--out",
        nothink_dir.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0));
    let output = cothink(&[
        "prefix-study",
        "--config",
        config.to_str().unwrap(),
        "--source",
        nothink_dir.to_str().unwrap(),
        "--problems",
        "p1",
        "--max-k",
        "2",
        "--dataset",
        "custom:smoke",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("no stored thinking trace"));
}
