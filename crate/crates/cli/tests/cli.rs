use std::path::Path;
use std::process::{Command, Output};

use grok_core::harness::{TraceRow, TrainingTrace};
use grok_lab::tables::{emit_trace_csv, read_trace_csv};
use grok_lab::{run_experiment, run_report, ExperimentConfig, ExperimentKind, RunOptions};

fn grok_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grok-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const GEN: &str = r#"{ "master_seed": 11, "seeds": 2,
  "dataset": { "kind": "parity", "k": 3, "n_train": 8, "n_val": 8, "extra_dims": 2 } }"#;

const SMALL_SWEEP: &str = r#"{ "master_seed": 3, "sweep": { "datasets": ["add"], "lengths": [0, 2, 4], "seeds": 2,
  "mlp": { "hidden": 16, "epochs": 40 } } }"#;

#[test]
fn unknown_field_is_a_config_error_naming_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{ "master_seed": 1, "dataset": { "kind": "zero_one", "n_trian": 4 } }"#,
    );
    let out = grok_lab(&["gen", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dataset") && err.contains("n_trian"), "{err}");
}

#[test]
fn missing_required_field_and_missing_file_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "no_seed.json", r#"{ "seeds": 1 }"#);
    let out = grok_lab(&["gen", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("master_seed"));

    let missing = dir.path().join("absent.json");
    let out = grok_lab(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_model_and_dataset_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "pair.json",
        r#"{ "master_seed": 1, "model": "gpr", "dataset": { "kind": "zero_one" } }"#,
    );
    let out = grok_lab(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn experiment_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = grok_lab(&["report", "--in", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_writes_data_and_manifest_with_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.json", GEN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = grok_lab(&["gen", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let data = std::fs::read_to_string(a.join("run_1/data.csv")).unwrap();
    assert_eq!(data.lines().next(), Some("split,x0,x1,x2,x3,x4,y"));
    assert_eq!(data.lines().count(), 17);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("run_manifest.json")).unwrap()).unwrap();
    let mut expected = ExperimentConfig::parse(GEN).unwrap();
    expected.experiment = Some(ExperimentKind::Gen);
    assert_eq!(manifest["config_sha256"], expected.hash());
    assert_eq!(manifest["experiment"], "gen");
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 2);
    // The output directory is not part of the hash.
    assert_eq!(
        std::fs::read(a.join("run_manifest.json")).unwrap(),
        std::fs::read(b.join("run_manifest.json")).unwrap()
    );
}

#[test]
fn seed_override_changes_data_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.json", GEN);
    let base = RunOptions {
        config: cfg.into(),
        jobs: 1,
        ..Default::default()
    };
    let a = run_experiment(
        ExperimentKind::Gen,
        &RunOptions {
            out: Some(dir.path().join("a")),
            ..base.clone()
        },
    )
    .unwrap();
    let b = run_experiment(
        ExperimentKind::Gen,
        &RunOptions {
            out: Some(dir.path().join("b")),
            seed: Some(12),
            ..base
        },
    )
    .unwrap();
    let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    assert_ne!(read(&a, "run_0/data.csv"), read(&b, "run_0/data.csv"));
    let hash = |d: &Path| {
        serde_json::from_str::<serde_json::Value>(&read(d, "run_manifest.json")).unwrap()["config_sha256"].clone()
    };
    assert_ne!(hash(&a), hash(&b));
}

fn row(epoch: usize, v: f64) -> TraceRow {
    TraceRow {
        epoch,
        train_loss: v + 0.1,
        train_acc: 1.0 / 3.0,
        val_acc: v,
        data_fit: v,
        complexity: 0.1,
    }
}

#[test]
fn trace_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let empty = TrainingTrace::new("mlp", None);
    let p = dir.path().join("empty.csv");
    emit_trace_csv(&empty, &p).unwrap();
    assert_eq!(
        std::fs::read_to_string(&p).unwrap(),
        "epoch,train_loss,train_acc,val_acc,data_fit,complexity\n"
    );
    assert!(read_trace_csv(&p).unwrap().is_empty());

    let mut trace = TrainingTrace::new("mlp", None);
    for (i, v) in [0.1, 1e-300, std::f64::consts::PI].into_iter().enumerate() {
        trace.push(row(i, v));
    }
    let p = dir.path().join("three.csv");
    emit_trace_csv(&trace, &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 4);
    assert_eq!(read_trace_csv(&p).unwrap(), trace.rows);
}

#[test]
fn sweep_stats_and_report_produce_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.json", SMALL_SWEEP);
    let out = dir.path().join("sweep");
    let o = grok_lab(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 3 * 2);

    let o = grok_lab(&["stats", "--in", out.join("sweep.csv").to_str().unwrap()]);
    assert!(o.status.success());
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert!(stats["combined"]["n"].is_u64());
    assert!(stats["per_dataset"]["add"].is_object());

    let figs = dir.path().join("figs");
    let written = run_report(&out, &figs).unwrap();
    assert!(written.contains(&"fig4.svg".to_string()));
    let svg = std::fs::read_to_string(figs.join("fig4.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(figs.join("stats.json").is_file());
}

#[test]
fn report_draws_training_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "train.json",
        r#"{ "master_seed": 4, "dataset": { "kind": "zero_one_slope", "n_train": 2, "n_val": 16 },
             "model": "linear", "linear": { "epochs": 50 } }"#,
    );
    let out = dir.path().join("train");
    let o = grok_lab(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(out.join("run_0/trace.csv"))
            .unwrap()
            .lines()
            .count(),
        51
    );
    let o = grok_lab(&["report", "--in", out.to_str().unwrap()]);
    assert!(o.status.success());
    for name in ["run_0_accuracy.svg", "run_0_loss.svg"] {
        let svg = std::fs::read_to_string(out.join(name)).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    }
}
