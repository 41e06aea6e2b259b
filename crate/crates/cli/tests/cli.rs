mod common;

use std::fs;

use common::{code, stderr, Workspace};
use mgdpr_core::checkpoint;
use mgdpr_core::model::{Mgdpr, ModelConfig};

fn pipeline(ws: &Workspace) {
    ws.ok(&["ingest"]);
    ws.ok(&["graph"]);
    ws.ok(&["train"]);
}

#[test]
fn help_documents_exit_codes() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_mgdpr")).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["2  data", "3  graph", "4  training diverged", "5  configuration", "6  checkpoint"] {
        assert!(text.contains(needle), "{needle} missing from help:\n{text}");
    }
}

#[test]
fn ingest_reports_and_caches_three_tickers() {
    let ws = Workspace::new(3, 40, 1);
    let stdout = ws.ok(&["ingest"]);
    assert!(stdout.contains("N=3 T=40 dropped_tickers=0"), "{stdout}");
    let manifest: serde_json::Value = serde_json::from_slice(&ws.read("cache/panel/manifest.json")).unwrap();
    assert_eq!(manifest["tickers"].as_array().unwrap().len(), 3);
}

#[test]
fn ingest_is_byte_stable() {
    let ws = Workspace::new(3, 30, 2);
    ws.ok(&["ingest"]);
    let first = ws.read("cache/panel/manifest.json");
    ws.ok(&["ingest"]);
    assert_eq!(first, ws.read("cache/panel/manifest.json"));
}

#[test]
fn empty_data_dir_exits_2() {
    let ws = Workspace::new(3, 30, 3);
    fs::remove_dir_all(ws.path("raw")).unwrap();
    fs::create_dir_all(ws.path("raw")).unwrap();
    let out = ws.run(&["ingest"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn malformed_header_names_file_and_line() {
    let ws = Workspace::new(3, 30, 4);
    fs::write(ws.path("raw/S01.csv"), "when,open,high\n2021-01-04,1,2\n").unwrap();
    let out = ws.run(&["ingest"]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("S01.csv:1"), "{msg}");
}

#[test]
fn one_graph_day_when_history_is_one_longer_than_the_window() {
    let ws = Workspace::new(3, 22, 5);
    ws.write_config(&[("model.tau", "21")]);
    ws.ok(&["ingest"]);
    let stdout = ws.ok(&["graph"]);
    assert!(stdout.contains("1 day(s) x 5 relations"), "{stdout}");
    let index: serde_json::Value = serde_json::from_slice(&ws.read("cache/graphs/index.json")).unwrap();
    assert_eq!(index["days"].as_array().unwrap().len(), 1);
    assert_eq!(index["days"][0]["t_index"], 20);
}

#[test]
fn graph_day_outside_range_exits_3() {
    let ws = Workspace::new(3, 30, 6);
    ws.ok(&["ingest"]);
    for day in ["2", "29", "400"] {
        let out = ws.run(&["graph", "--day", day]);
        assert_eq!(code(&out), 3, "day {day}: {}", stderr(&out));
    }
    let stdout = ws.ok(&["graph", "--day", "10"]);
    assert!(stdout.contains("1 day(s)"));
}

#[test]
fn graph_before_ingest_exits_5_with_hint() {
    let ws = Workspace::new(3, 30, 7);
    let out = ws.run(&["graph"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("mgdpr ingest"));
}

#[test]
fn train_without_graphs_exits_5_with_hint() {
    let ws = Workspace::new(3, 40, 8);
    ws.ok(&["ingest"]);
    let out = ws.run(&["train"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("mgdpr graph"), "{}", stderr(&out));
}

#[test]
fn partial_graph_cache_is_reported() {
    let ws = Workspace::new(3, 40, 9);
    ws.ok(&["ingest"]);
    ws.ok(&["graph", "--day", "10"]);
    let out = ws.run(&["train"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("without --day"));
}

#[test]
fn stale_graphs_are_rejected() {
    let ws = Workspace::new(3, 40, 10);
    ws.ok(&["ingest"]);
    ws.ok(&["graph"]);
    ws.write_market(3, 40, 11);
    ws.ok(&["ingest"]);
    let out = ws.run(&["train"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("different panel"));
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let ws = Workspace::new(4, 40, 12);
    ws.ok(&["ingest"]);
    ws.ok(&["graph"]);
    ws.ok(&["train", "--epochs", "0", "--seed", "5"]);
    let saved = checkpoint::load(&ws.path("out/seed_5/model.ckpt")).unwrap();
    let cfg = ModelConfig {
        num_stocks: 4,
        tau: 5,
        layers: 1,
        expansion_steps: 2,
        embed_dim: 8,
        ..ModelConfig::default()
    };
    assert_eq!(saved, Mgdpr::new(cfg, 5).unwrap());
}

#[test]
fn training_is_reproducible_and_writes_artifacts() {
    let ws = Workspace::new(3, 40, 13);
    pipeline(&ws);
    let first = ws.read("out/seed_0/model.ckpt");
    let trace = String::from_utf8(ws.read("out/seed_0/loss_trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,loss,val_acc\n"));
    assert_eq!(trace.lines().count(), 4);
    ws.ok(&["train"]);
    assert_eq!(first, ws.read("out/seed_0/model.ckpt"));

    // the resolved configuration alone reproduces the run
    let resolved: serde_json::Value = serde_json::from_slice(&ws.read("out/resolved_config.json")).unwrap();
    assert_eq!(resolved["model.num_stocks"], 3);
    assert_eq!(resolved["train.epochs"], 3);
    fs::write(ws.path("run.json"), serde_json::to_vec(&resolved).unwrap()).unwrap();
    fs::remove_dir_all(ws.path("out")).unwrap();
    ws.ok(&["train"]);
    assert_eq!(first, ws.read("out/seed_0/model.ckpt"));
}

#[test]
fn divergence_exits_4() {
    let ws = Workspace::new(3, 40, 14);
    ws.ok(&["ingest"]);
    ws.ok(&["graph"]);
    let out = ws.run_env(&["train"], &[("MGDPR_TRAIN_LEARNING_RATE", "1e300")]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn config_errors_exit_5() {
    let ws = Workspace::new(3, 40, 15);
    ws.write_config(&[("train.epoch", "3")]);
    assert_eq!(code(&ws.run(&["ingest"])), 5);
    ws.write_config(&[("model.embed_dim", "6"), ("model.num_groups", "4")]);
    assert_eq!(code(&ws.run(&["ingest"])), 5);
    ws.write_config(&[]);
    assert_eq!(code(&ws.run(&["frobnicate"])), 5);
}

#[test]
fn env_override_changes_epochs() {
    let ws = Workspace::new(3, 40, 16);
    ws.ok(&["ingest"]);
    ws.ok(&["graph"]);
    let out = ws.run_env(&["train"], &[("MGDPR_TRAIN_EPOCHS", "2")]);
    assert!(out.status.success());
    let trace = String::from_utf8(ws.read("out/seed_0/loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
}

#[test]
fn eval_reports_metrics_reproducibly() {
    let ws = Workspace::new(3, 40, 17);
    pipeline(&ws);
    ws.ok(&["eval"]);
    let first = ws.read("out/metrics.json");
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    for key in ["market", "period", "acc", "mcc", "f1", "confusion", "seed", "config_hash"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["market"], "synthetic");
    ws.ok(&["eval"]);
    assert_eq!(first, ws.read("out/metrics.json"));
}

#[test]
fn eval_over_several_seeds_summarizes() {
    let ws = Workspace::new(3, 40, 18);
    ws.ok(&["ingest"]);
    ws.ok(&["graph"]);
    ws.ok(&["train", "--seeds", "2"]);
    let stdout = ws.ok(&["eval", "--seeds", "2"]);
    assert!(stdout.contains("2 seeds"), "{stdout}");
    let report: serde_json::Value = serde_json::from_slice(&ws.read("out/metrics.json")).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert!(report["summary"]["acc"]["std"].is_number());
}

#[test]
fn checkpoint_problems_exit_6() {
    let ws = Workspace::new(3, 40, 19);
    pipeline(&ws);
    // missing seed
    assert_eq!(code(&ws.run(&["eval", "--seed", "9"])), 6);
    // config drifted from the checkpoint
    ws.write_config(&[("model.embed_dim", "4")]);
    assert_eq!(code(&ws.run(&["eval"])), 6);
    ws.write_config(&[]);
    // corrupted header
    let path = ws.path("out/seed_0/model.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    bytes[20] ^= 0x5a;
    bytes[21] = b'}';
    fs::write(&path, bytes).unwrap();
    let out = ws.run(&["eval"]);
    assert_eq!(code(&out), 6, "{}", stderr(&out));
}
