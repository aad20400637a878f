//! End-to-end tests of the installed binary: artifact layout, output
//! text, determinism, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skewsim"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// A six-event external trace whose middle hop is stamped backwards:
/// spans are +5, -10, +15 against walls 100,105,105,95,95,110.
const INVERTED_TRACE: &str = concat!(
    r#"{"format_version":1,"run_id":"run-manual","config_digest":"manual","clock_note":"external"}"#,
    "\n",
    r#"{"event_id":1,"request_id":1,"stage_id":"producer","kind":"send","wall_ts_ns":"100","true_ts_ns":null,"seq":0}"#,
    "\n",
    r#"{"event_id":2,"request_id":1,"stage_id":"preprocess","kind":"recv","wall_ts_ns":"105","true_ts_ns":null,"seq":0}"#,
    "\n",
    r#"{"event_id":3,"request_id":1,"stage_id":"preprocess","kind":"send","wall_ts_ns":"105","true_ts_ns":null,"seq":1}"#,
    "\n",
    r#"{"event_id":4,"request_id":1,"stage_id":"inference","kind":"recv","wall_ts_ns":"95","true_ts_ns":null,"seq":0}"#,
    "\n",
    r#"{"event_id":5,"request_id":1,"stage_id":"inference","kind":"send","wall_ts_ns":"95","true_ts_ns":null,"seq":1}"#,
    "\n",
    r#"{"event_id":6,"request_id":1,"stage_id":"postprocess","kind":"recv","wall_ts_ns":"110","true_ts_ns":null,"seq":0}"#,
    "\n",
);

#[test]
fn baseline_writes_parsable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = dir.path().to_str().unwrap();
    let out = run(&["baseline", "--out", out_arg, "--duration", "5"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("0 violations"));

    let base = dir.path().join("baseline");
    for name in [
        "resolved_config.json",
        "trace.jsonl",
        "report.json",
        "throughput.tsv",
        "health.tsv",
        "epsilon.tsv",
        "violations.tsv",
        "summary.tsv",
        "delta_t_min.tsv",
    ] {
        assert!(base.join(name).exists(), "{name} missing");
    }

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(base.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["violations"]["negative_count"], 0);
    assert!(report["run_id"].as_str().unwrap().starts_with("run-"));
    assert!(report["delta_t_min"].is_object());

    let trace = fs::read_to_string(base.join("trace.jsonl")).unwrap();
    let header: serde_json::Value =
        serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(header["format_version"], 1);
    assert_eq!(header["clock_note"], "simulated");
    // Nanosecond stamps travel as strings.
    let first_event: serde_json::Value =
        serde_json::from_str(trace.lines().nth(1).unwrap()).unwrap();
    assert!(first_event["wall_ts_ns"].is_string());
}

#[test]
fn sweep_summary_shows_violation_onset() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = dir.path().to_str().unwrap();
    let out = run(&[
        "sweep",
        "--skews",
        "0,5",
        "--out",
        out_arg,
        "--duration",
        "10",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let tsv = fs::read_to_string(dir.path().join("sweep/sweep_summary.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    let (zero, five) = (&rows[0], &rows[1]);
    assert_eq!(zero[0], "0.000");
    assert_eq!(zero[1], "0", "zero skew must be violation-free");
    assert_eq!(five[0], "5.000");
    let violations: u64 = five[1].parse().unwrap();
    let predicted: u64 = five[2].parse().unwrap();
    assert!(violations > 0, "5 ms skew must invert spans");
    assert_eq!(violations, predicted, "count must match the oracle");

    assert!(dir.path().join("sweep/skew_0ms/trace.jsonl").exists());
    assert!(dir.path().join("sweep/skew_5ms/report.json").exists());
}

#[test]
fn identical_invocations_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&[
            "baseline",
            "--out",
            out_dir.to_str().unwrap(),
            "--duration",
            "5",
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    for name in ["trace.jsonl", "report.json", "resolved_config.json"] {
        let bytes_a = fs::read(a.join("baseline").join(name)).unwrap();
        let bytes_b = fs::read(b.join("baseline").join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between reruns");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut ids = Vec::new();
    for seed in ["1", "2"] {
        let out_dir = dir.path().join(seed);
        let out = run(&[
            "baseline",
            "--out",
            out_dir.to_str().unwrap(),
            "--duration",
            "5",
            "--seed",
            seed,
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        let report: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(out_dir.join("baseline/report.json")).unwrap(),
        )
        .unwrap();
        ids.push(report["run_id"].as_str().unwrap().to_string());
    }
    assert_ne!(ids[0], ids[1], "seed must feed the run id");
}

#[test]
fn analyze_reports_the_inverted_edge() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("trace.jsonl");
    fs::write(&trace_path, INVERTED_TRACE).unwrap();

    let out = run(&[
        "analyze",
        trace_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "a violated trace still analyzes cleanly");
    let text = stdout(&out);
    assert!(text.contains("verdict: violated"), "stdout: {text}");
    assert!(text.contains("preprocess->inference: 1"), "stdout: {text}");
    assert!(text.contains("producer->preprocess: 0"), "stdout: {text}");

    let audit: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("analyze/audit.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(audit["verdict"], "violated");
    assert_eq!(audit["violations"]["negative_count"], 1);
}

#[test]
fn analyze_accepts_field_mapped_traces() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("foreign.jsonl");
    fs::write(&trace_path, INVERTED_TRACE.replace("wall_ts_ns", "ts")).unwrap();
    let map_path = dir.path().join("map.json");
    fs::write(&map_path, r#"{"wall_ts_ns": "ts"}"#).unwrap();

    let unmapped = run(&[
        "analyze",
        trace_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&unmapped), 2, "missing field must be an input error");

    let mapped = run(&[
        "analyze",
        trace_path.to_str().unwrap(),
        "--field-map",
        map_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&mapped), 0, "stderr: {}", stderr(&mapped));
    assert!(stdout(&mapped).contains("verdict: violated"));
}

#[test]
fn malformed_trace_fails_with_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("broken.jsonl");
    let mut text = String::new();
    text.push_str(INVERTED_TRACE.lines().next().unwrap());
    text.push('\n');
    text.push_str("this is not json\n");
    fs::write(&trace_path, text).unwrap();

    let out = run(&[
        "analyze",
        trace_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "stderr: {}", stderr(&out));
}

#[test]
fn invalid_config_fails_as_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.json");
    fs::write(&cfg_path, r#"{"sede": 1}"#).unwrap();
    let out = run(&[
        "baseline",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sede"), "stderr: {}", stderr(&out));
}

#[test]
fn baseline_refuses_a_skewed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("skewed.json");
    fs::write(
        &cfg_path,
        r#"{"skew": {"target_stage": "inference", "mode": "step", "magnitude_ns": 5000000, "start_time_ns": 0}}"#,
    )
    .unwrap();
    let out = run(&[
        "baseline",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--duration",
        "5",
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("baseline"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn negative_sweep_magnitude_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep",
        "--skews=-3",
        "--out",
        dir.path().to_str().unwrap(),
        "--duration",
        "5",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("non-negative"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["baseline", "--frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn report_rerenders_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = dir.path().to_str().unwrap();
    let first = run(&["baseline", "--out", out_arg, "--duration", "5"]);
    assert_eq!(code(&first), 0, "stderr: {}", stderr(&first));

    let report_path = dir.path().join("baseline/report.json");
    let rerender = run(&["report", report_path.to_str().unwrap(), "--out", out_arg]);
    assert_eq!(code(&rerender), 0, "stderr: {}", stderr(&rerender));

    for name in [
        "throughput.tsv",
        "health.tsv",
        "epsilon.tsv",
        "violations.tsv",
        "summary.tsv",
        "delta_t_min.tsv",
    ] {
        let original = fs::read(dir.path().join("baseline").join(name)).unwrap();
        let rendered = fs::read(dir.path().join("report").join(name)).unwrap();
        assert_eq!(original, rendered, "{name} changed in re-render");
    }
}

#[test]
fn quiet_silences_success_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "baseline",
        "--quiet",
        "--out",
        dir.path().to_str().unwrap(),
        "--duration",
        "5",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).is_empty(), "stdout: {}", stdout(&out));
}

fn tsv_column(path: &Path, col: usize) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(col).unwrap().to_string())
        .collect()
}

#[test]
fn queueing_arms_land_in_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "queueing",
        "--out",
        dir.path().to_str().unwrap(),
        "--duration",
        "10",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    for arm in ["backlog", "low", "low_skewed"] {
        assert!(dir.path().join("queueing").join(arm).join("report.json").exists());
    }
    let violations = tsv_column(&dir.path().join("queueing/queueing_summary.tsv"), 6);
    assert_eq!(violations.len(), 3);
    assert_eq!(violations[0], "0", "backlog arm must stay violation-free");
    assert_eq!(violations[1], "0", "low arm must stay violation-free");
    assert_ne!(violations[2], "0", "skewed arm must violate");
}
