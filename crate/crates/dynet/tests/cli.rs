//! End-to-end smoke tests of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

fn dynet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = dynet(&["frobnicate"]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.to_lowercase().contains("usage"), "{text}");
}

#[test]
fn missing_data_file_reports_json_error() {
    let out = dynet(&["bayes", "/nonexistent/data.csv"]);
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_slice(&out.stderr).expect("machine-readable stderr");
    assert!(err["error"].is_string());
    assert!(err["message"].is_string());
}

#[test]
fn malformed_csv_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x1,x2\n1.0,2.0\n3.0,oops\n").unwrap();
    let out = dynet(&["granger", path_str(&bad), "--order", "1"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    let message = err["message"].as_str().unwrap();
    assert!(message.contains("row") || message.contains("column"), "{message}");
}

#[test]
fn simulate_then_estimate_recovers_a_strong_edge() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.json");
    let model = dir.path().join("model.json");
    let data = dir.path().join("data.csv");
    // Dense 2-node config: the single candidate pair is connected with high
    // probability; seed 11 yields an edge (checked via the model JSON).
    std::fs::write(
        &config,
        r#"{"node_count": 2, "edge_probability": 0.95, "seed": 11}"#,
    )
    .unwrap();
    let out = dynet(&[
        "simulate",
        "--config",
        path_str(&config),
        "--samples",
        "600",
        "--model-out",
        path_str(&model),
        "--data-out",
        path_str(&data),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let model_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let true_edges: Vec<(u64, u64)> = model_json["network"]["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["target"].as_u64().unwrap(), e["source"].as_u64().unwrap()))
        .collect();
    assert!(!true_edges.is_empty(), "seed must generate an edge");

    let estimate = dir.path().join("estimate.json");
    let out = dynet(&[
        "bayes",
        path_str(&data),
        "--order",
        "10",
        "--output",
        path_str(&estimate),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&estimate).unwrap()).unwrap();
    let found: Vec<(u64, u64)> = est["estimate"]["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e[0].as_u64().unwrap(), e[1].as_u64().unwrap()))
        .collect();
    for edge in &true_edges {
        assert!(found.contains(edge), "true edge {edge:?} missing from {found:?}");
    }

    let out = dynet(&["granger", path_str(&data), "--order", "5", "--alpha", "0.05"]);
    assert!(out.status.success());
    let granger: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(granger["node_count"], 2);
    assert!(granger["estimate"].is_object() || granger["estimate"].is_array());
}

#[test]
fn benchmark_emits_record_count_contract() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bench.json");
    let csv = dir.path().join("table.csv");
    std::fs::write(
        &config,
        r#"{
            "data_lengths": [120],
            "node_counts": [3],
            "model_count": 2,
            "alpha_grid": [0.05, 0.5],
            "sim": {"node_count": 3, "seed": 0},
            "orders": [4],
            "granger_max_order": 3,
            "master_seed": 7
        }"#,
    )
    .unwrap();
    let out = dynet(&[
        "benchmark",
        "--config",
        path_str(&config),
        "--csv",
        path_str(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // 1 Bayesian + |alpha grid| Granger records per cell.
    assert_eq!(records.as_array().unwrap().len(), 3);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("method,L,N,alpha,mean_tpr,mean_fpr,n_models,n_failed"));
}

#[test]
fn group_test_runs_a_small_study() {
    let dir = tempfile::tempdir().unwrap();
    // Two subjects, one session each: just the evidence table, no protocol.
    for subject in ["s1", "s2"] {
        let config = dir.path().join(format!("{subject}.json"));
        std::fs::write(
            &config,
            format!(
                r#"{{"node_count": 2, "edge_probability": 1.0, "seed": {}}}"#,
                if subject == "s1" { 3 } else { 4 }
            ),
        )
        .unwrap();
        let data = dir.path().join(format!("{subject}.csv"));
        let out = dynet(&[
            "simulate",
            "--config",
            path_str(&config),
            "--samples",
            "300",
            "--data-out",
            path_str(&data),
        ]);
        assert!(out.status.success());
    }
    let manifest = dir.path().join("study.json");
    std::fs::write(
        &manifest,
        r#"{
            "subjects": [
                {"id": "s1", "sessions": ["s1.csv"]},
                {"id": "s2", "sessions": ["s2.csv"]}
            ],
            "candidate_edges": [[1, 0], [0, 1]],
            "order": 6
        }"#,
    )
    .unwrap();
    let csv = dir.path().join("results.csv");
    let out = dynet(&[
        "group-test",
        path_str(&manifest),
        "--mode",
        "exact",
        "--csv",
        path_str(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["edges"].as_array().unwrap().len(), 2);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("edge,session1_h_opt,session1_bf,session1_posterior"));
}
