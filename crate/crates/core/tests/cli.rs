use std::path::Path;
use std::process::{Command, Output};

fn branchmc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_branchmc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = branchmc(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn simulate_writes_traces_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "simulate",
            "--distances",
            "12,24",
            "--iterations",
            "2",
            "--seed",
            "5",
            "--out",
            "run",
        ],
        dir.path(),
    );
    let run = dir.path().join("run");
    let trace = std::fs::read_to_string(run.join("iter_0001.csv")).unwrap();
    assert!(trace.starts_with("time_s,count\n"));
    assert_eq!(trace.lines().count(), 5001);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["distances_m"], serde_json::json!([0.12, 0.24]));
    assert_eq!(manifest["n_tx"], 1000);
    assert_eq!(manifest["dt_sample"], 0.005);
    assert_eq!(manifest["seed"], 5);
    assert_eq!(
        manifest["iterations"][1]["sequences"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
    assert!(manifest["topology"]["branches"].is_array());
}

#[test]
fn mle_reads_a_simulated_trace() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "simulate",
            "--distances",
            "12,24",
            "--seed",
            "1",
            "--out",
            "run",
        ],
        dir.path(),
    );
    let out = ok(
        &[
            "mle",
            "--trace",
            "run/iter_0000.csv",
            "--manifest",
            "run/manifest.json",
            "--grid",
            "0.02:0.26:0.01",
        ],
        dir.path(),
    );
    let est: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let d: Vec<f64> = est["distances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(
        (d[0] - 0.12).abs() < 0.005 && (d[1] - 0.24).abs() < 0.005,
        "{d:?}"
    );
}

#[test]
fn analytic_prints_expected_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &[
            "analytic",
            "--distances",
            "12",
            "--sequences",
            "1",
            "--horizon",
            "2",
        ],
        dir.path(),
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("time_s,expected_count\n"));
    assert_eq!(text.lines().count(), 401);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = branchmc(
        &[
            "mle",
            "--trace",
            "missing.csv",
            "--manifest",
            "missing.json",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("error:") && err.contains("missing.json"),
        "{err}"
    );

    let out = branchmc(
        &["simulate", "--distances", "0.1", "--out", "x"],
        dir.path(),
    );
    assert!(!out.status.success());

    let out = branchmc(
        &["analytic", "--distances", "12", "--sequences", "102"],
        dir.path(),
    );
    assert!(!out.status.success());

    let out = branchmc(
        &["eval", "--data", "nowhere", "--mle", "--report", "r.csv"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn dataset_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("plan.json"),
        r#"{"sources": 2, "distance_configs_cm": [[6, 18], [12, 24]], "iterations": 5, "seed": 3}"#,
    )
    .unwrap();
    std::fs::write(
        p.join("train.json"),
        r#"{"model": {"window_len": 200, "lstm_layers": 1, "hidden": 2, "dense_layers": 1, "dense_width": 4, "outputs": 2},
            "batch_size": 32, "max_epochs": 2, "patience": 5, "seed": 0}"#,
    )
    .unwrap();
    ok(&["dataset", "--plan", "plan.json", "--out", "data"], p);
    ok(
        &[
            "train",
            "--data",
            "data",
            "--config",
            "train.json",
            "--out",
            "model.json",
            "--quiet",
            "--log",
            "log.csv",
        ],
        p,
    );
    assert_eq!(
        std::fs::read_to_string(p.join("log.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    ok(
        &[
            "eval",
            "--data",
            "data",
            "--model",
            "model.json",
            "--report",
            "nn.csv",
            "--scatter",
            "scatter.csv",
        ],
        p,
    );
    ok(
        &[
            "eval",
            "--data",
            "data",
            "--mle",
            "--report",
            "mle.csv",
            "--summary",
            "mle_summary.csv",
        ],
        p,
    );
    let out = ok(
        &[
            "report",
            "--summary",
            "nn.summary.csv",
            "--summary",
            "mle_summary.csv",
        ],
        p,
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().next().unwrap(), "metric,sbrnn,mle");
    assert_eq!(table.lines().count(), 4);

    // a model trained for the wrong number of sources is refused
    std::fs::write(
        p.join("bad.json"),
        std::fs::read_to_string(p.join("train.json"))
            .unwrap()
            .replace("\"outputs\": 2", "\"outputs\": 3"),
    )
    .unwrap();
    assert!(!branchmc(
        &[
            "train",
            "--data",
            "data",
            "--config",
            "bad.json",
            "--out",
            "bad_model.json"
        ],
        p
    )
    .status
    .success());
}
