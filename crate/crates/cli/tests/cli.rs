//! End-to-end CLI tests driving the `bsat` binary.

use std::path::Path;
use std::process::{Command, Output};

fn bsat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsat"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("bsat binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_gen_train_attack_sweep_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    let out = bsat(
        &[
            "gen",
            "--out",
            "train.jsonl",
            "--test-out",
            "test.jsonl",
            "--examples",
            "120",
            "--test-examples",
            "24",
            "--seed",
            "3",
        ],
        p,
    );
    assert_ok(&out, "gen");
    assert!(p.join("train.jsonl").is_file());

    let out = bsat(
        &[
            "train",
            "--data",
            "train.jsonl",
            "--out",
            "model.bsat",
            "--epochs",
            "6",
            "--dim",
            "16",
            "--layers",
            "1",
            "--heads",
            "2",
            "--seed",
            "5",
            "--eval",
            "test.jsonl",
        ],
        p,
    );
    assert_ok(&out, "train");
    assert!(p.join("model.bsat").is_file());
    assert!(p.join("model.bsat.vocab").is_file());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("held-out accuracy"),
        "train output: {stdout}"
    );

    let out = bsat(
        &[
            "attack",
            "--model",
            "model.bsat",
            "--data",
            "test.jsonl",
            "--out-report",
            "report.json",
            "--max-iters",
            "60",
            "--seed",
            "1",
        ],
        p,
    );
    assert_ok(&out, "attack");
    assert!(p.join("report.json").is_file());

    // `report` re-prints identical aggregates on repeated invocations.
    let first = bsat(&["report", "--in", "report.json", "--format", "text"], p);
    assert_ok(&first, "report");
    let second = bsat(&["report", "--in", "report.json", "--format", "text"], p);
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8_lossy(&first.stdout);
    assert!(
        text.contains("after-attack accuracy"),
        "report output: {text}"
    );

    let json_out = bsat(&["report", "--in", "report.json", "--format", "json"], p);
    assert_ok(&json_out, "report --format json");
    let reprinted: serde_json::Value = serde_json::from_slice(&json_out.stdout).unwrap();
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
    assert_eq!(reprinted, saved);

    let csv_out = bsat(&["report", "--in", "report.json", "--format", "csv"], p);
    assert_ok(&csv_out, "report --format csv");
    assert!(String::from_utf8_lossy(&csv_out.stdout).starts_with("index,label,status"));

    let out = bsat(
        &[
            "sweep",
            "--model",
            "model.bsat",
            "--data",
            "test.jsonl",
            "--alphas",
            "2,10",
            "--lr",
            "0.15",
            "--max-iters",
            "40",
            "--out-csv",
            "sweep.csv",
        ],
        p,
    );
    assert_ok(&out, "sweep");
    let csv = std::fs::read_to_string(p.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "alpha,adv_accuracy,mean_similarity,mean_token_error_rate"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn zero_budget_attack_reports_exhausted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_ok(
        &bsat(
            &[
                "gen",
                "--out",
                "train.jsonl",
                "--test-out",
                "test.jsonl",
                "--examples",
                "60",
                "--test-examples",
                "10",
                "--seed",
                "9",
            ],
            p,
        ),
        "gen",
    );
    assert_ok(
        &bsat(
            &[
                "train",
                "--data",
                "train.jsonl",
                "--out",
                "m.bsat",
                "--epochs",
                "4",
                "--dim",
                "16",
                "--layers",
                "1",
                "--heads",
                "2",
                "--seed",
                "2",
            ],
            p,
        ),
        "train",
    );
    assert_ok(
        &bsat(
            &[
                "attack",
                "--model",
                "m.bsat",
                "--data",
                "test.jsonl",
                "--out-report",
                "r.json",
                "--max-iters",
                "0",
            ],
            p,
        ),
        "attack --max-iters 0",
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    for row in report["rows"].as_array().unwrap() {
        let status = row["result"]["status"].as_str().unwrap();
        assert!(
            status == "exhausted-budget" || status == "skipped-already-misclassified",
            "unexpected status {status} with a zero budget"
        );
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    let out = bsat(&["attack", "--no-such-flag"], p);
    assert_eq!(out.status.code(), Some(2), "unknown flag should exit 2");

    let out = bsat(
        &[
            "attack",
            "--model",
            "missing.bsat",
            "--data",
            "missing.jsonl",
            "--out-report",
            "r.json",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(2), "missing file should exit 2");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not found"), "stderr: {err}");

    let out = bsat(&["report", "--in", "nope.json"], p);
    assert_eq!(out.status.code(), Some(2));
}
