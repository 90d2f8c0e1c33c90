//! Command-line behavior: argument handling, exit codes, emitted files.

use std::io::Write as _;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_apishift"))
}

fn write(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(body.as_bytes()).unwrap();
    path
}

const SIM_CONFIG: &str = r#"{
    "scenario": {
        "L": 2, "K": 1,
        "p": [[0.6], [0.4]],
        "mu": [[[0.9, 0.1]], [[0.2, 0.8]]],
        "c_old": [[0.5, 0.1], [0.1, 0.3]]
    },
    "strategies": ["masa", "uniform", "stratified", "oracle_optimal"],
    "budgets": [32],
    "trials": 5,
    "master_seed": 1,
    "stopping": {"epsilon": 0.05, "alpha": 0.05}
}"#;

#[test]
fn simulate_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "sim.json", SIM_CONFIG);
    let out = dir.path().join("out");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for file in ["curves.csv", "savings.csv", "summary.json", "shift_estimate.json"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metadata"]["generator"], "chacha12");
    assert_eq!(summary["curves"].as_array().unwrap().len(), 4);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // No scenario at all.
    let config = write(
        dir.path(),
        "bad.json",
        r#"{"strategies": ["masa"], "budgets": [32], "trials": 1}"#,
    );
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "manifest.jsonl",
        "{\"id\": \"a\", \"true_label\": 1}\n{\"id\": \"a\", \"true_label\": 2}\n",
    );
    write(dir.path(), "preds.jsonl", "{\"id\": \"a\", \"label\": 1}\n");
    let config = write(
        dir.path(),
        "assess.json",
        r#"{
            "L": 2, "K": 1,
            "manifest": "manifest.jsonl",
            "predictions": "preds.jsonl",
            "c_old": [[0.5, 0.1], [0.1, 0.3]],
            "strategies": ["uniform"],
            "budgets": [2],
            "trials": 1
        }"#,
    );
    let status = bin()
        .args(["assess", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn aborted_runs_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "manifest.jsonl",
        "{\"id\": \"a\", \"true_label\": 1, \"old_prediction\": 1}\n\
         {\"id\": \"b\", \"true_label\": 1, \"old_prediction\": 1}\n\
         {\"id\": \"c\", \"true_label\": 2, \"old_prediction\": 2}\n\
         {\"id\": \"d\", \"true_label\": 2, \"old_prediction\": 2}\n",
    );
    write(
        dir.path(),
        "preds.jsonl",
        "{\"id\": \"a\", \"label\": 1}\n{\"id\": \"b\", \"label\": 1}\n\
         {\"id\": \"c\", \"label\": 2}\n{\"id\": \"d\", \"label\": 2}\n",
    );
    // Budget exceeds the dataset: the without-replacement pool runs dry.
    let config = write(
        dir.path(),
        "assess.json",
        r#"{
            "L": 2, "K": 1,
            "manifest": "manifest.jsonl",
            "predictions": "preds.jsonl",
            "strategies": ["uniform"],
            "budgets": [9],
            "trials": 1
        }"#,
    );
    let status = bin()
        .args(["assess", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn assess_k_sweep_writes_per_level_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::new();
    let mut preds = String::new();
    for i in 0..40 {
        let label = if i < 20 { 1 } else { 2 };
        let confidence = (i % 10) as f64 / 10.0;
        manifest.push_str(&format!(
            "{{\"id\": \"x{i}\", \"true_label\": {label}, \"confidence\": {confidence}, \"old_prediction\": {label}}}\n"
        ));
        preds.push_str(&format!("{{\"id\": \"x{i}\", \"label\": {label}}}\n"));
    }
    write(dir.path(), "manifest.jsonl", &manifest);
    write(dir.path(), "preds.jsonl", &preds);
    let config = write(
        dir.path(),
        "assess.json",
        r#"{
            "L": 2, "K": 1, "k_values": [1, 2],
            "manifest": "manifest.jsonl",
            "predictions": "preds.jsonl",
            "strategies": ["uniform"],
            "budgets": [20],
            "trials": 2
        }"#,
    );
    let out = dir.path().join("out");
    let status = bin()
        .args(["assess", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for level in [1, 2] {
        assert!(out.join(format!("K{level}")).join("curves.csv").exists());
    }
}

#[test]
fn budget_subcommand_reports_flat_and_adaptive() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "budget.json",
        r#"{
            "epsilon": 0.05, "alpha": 0.05,
            "scenario": {
                "L": 2, "K": 1,
                "p": [[0.6], [0.4]],
                "mu": [[[0.9, 0.1]], [[0.2, 0.8]]],
                "c_old": [[0.5, 0.1], [0.1, 0.3]]
            }
        }"#,
    );
    let out = dir.path().join("bout");
    let output = bin()
        .args(["budget", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .arg("--trace")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("flat bound): 738 queries"), "{stdout}");
    assert!(out.join("budget.json").exists());
    let savings = std::fs::read_to_string(out.join("savings.csv")).unwrap();
    assert!(savings.starts_with("strategy,required_n,savings_vs_flat\n"));
    assert!(savings.contains("\nmasa,"));
    // The stopping run's decisions: header plus one line per query.
    let trace = std::fs::read_to_string(out.join("budget_trace.jsonl")).unwrap();
    let adaptive: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("budget.json")).unwrap()).unwrap();
    let required = adaptive["adaptive"]["required_n"].as_u64().unwrap();
    assert_eq!(trace.lines().count() as u64, 1 + required);
}
