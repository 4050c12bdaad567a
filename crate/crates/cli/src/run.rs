//! Config-driven experiments. Every file written here is a pure function of
//! the resolved config, so reruns are byte-identical whatever `jobs` is.

use std::path::{Path, PathBuf};

use grok_core::bnn_model::{bnn_init_sweep, fit_bnn};
use grok_core::gp_classification::{classification_presets, fit_gpc, laplace_surface};
use grok_core::gp_regression::{fit_gpr, landscape_scan, regression_presets};
use grok_core::harness::{concealment_sweep, measure_gap, TrainingTrace};
use grok_core::linear_model::{fit_lr, slope_tasks};
use grok_core::mlp_model::fit_mlp;
use grok_core::stats::pearson;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{run_key, ExperimentConfig, ExperimentKind, ModelKind};
use crate::error::CliError;
use crate::tables::{
    emit_aggregates_csv, emit_bnn_csv, emit_dataset_csv, emit_landscape_csv, emit_sweep_csv, emit_trace_csv,
    emit_trajectories_csv, gap_fields, num, write_table,
};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    /// Replaces the config's `master_seed`.
    pub seed: Option<u64>,
    /// Replaces the config's `out`.
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    config_sha256: String,
    master_seed: u64,
    config: &'a ExperimentConfig,
    runs: Vec<Value>,
    outputs: Vec<String>,
}

/// Loads, overrides and validates a config; returns it with the output directory.
pub fn resolve(kind: ExperimentKind, opts: &RunOptions) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.master_seed = seed;
    }
    cfg.validate(kind)?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out.take())
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    cfg.out = None;
    cfg.experiment = Some(kind);
    Ok((cfg, out))
}

/// Runs one config-driven experiment and returns its output directory.
pub fn run_experiment(kind: ExperimentKind, opts: &RunOptions) -> Result<PathBuf, CliError> {
    let (cfg, out) = resolve(kind, opts)?;
    std::fs::create_dir_all(&out)?;
    let jobs = opts.jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Experiment(format!("thread pool: {e}")))?;
    let (runs, outputs) = pool.install(|| match kind {
        ExperimentKind::Gen => gen(&cfg, &out),
        ExperimentKind::Train => train(&cfg, &out),
        ExperimentKind::Sweep => sweep(&cfg, &out, jobs),
        ExperimentKind::Landscape => landscape(&cfg, &out),
        ExperimentKind::BnnSweep => bnn_sweep(&cfg, &out, jobs),
    })?;
    let manifest = Manifest {
        tool: "grok-lab",
        version: env!("CARGO_PKG_VERSION"),
        experiment: kind.name(),
        config_sha256: cfg.hash(),
        master_seed: cfg.master_seed,
        config: &cfg,
        runs,
        outputs,
    };
    write_json(&out.join("run_manifest.json"), &manifest)?;
    Ok(out)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Experiment(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

type Outcome = Result<(Vec<Value>, Vec<String>), CliError>;

fn run_entry(cfg: &ExperimentConfig, i: usize) -> Value {
    json!({ "run": i, "key": run_key(cfg.master_seed, i).to_string() })
}

fn gen(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let mut outputs = Vec::new();
    for i in 0..cfg.seeds {
        let ds = dataset.build(&run_key(cfg.master_seed, i))?;
        let name = format!("run_{i}/data.csv");
        emit_dataset_csv(&ds, &out.join(&name))?;
        outputs.push(name);
    }
    Ok(((0..cfg.seeds).map(|i| run_entry(cfg, i)).collect(), outputs))
}

/// Trains run `i` of a `train` config.
pub fn train_run(cfg: &ExperimentConfig, i: usize) -> Result<TrainingTrace, CliError> {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let key = run_key(cfg.master_seed, i);
    let ds = dataset.build(&key)?;
    let model_key = key.with("model");
    let mut trace = match cfg.model.expect("validated") {
        ModelKind::Linear => {
            let (train, val) = slope_tasks(&ds)?;
            fit_lr(&train, &val, &cfg.linear)?.0
        }
        ModelKind::Mlp => fit_mlp(&ds, &cfg.mlp, &model_key)?,
        ModelKind::Bnn => {
            let sigma = *cfg
                .bnn
                .sigma_list
                .first()
                .ok_or_else(|| CliError::Config("`bnn.sigma_list` must not be empty".into()))?;
            fit_bnn(&ds, &cfg.bnn, sigma, &model_key)?.0
        }
        ModelKind::Gpc => fit_gpc(&ds, &cfg.gpc)?.trace,
        ModelKind::Gpr => fit_gpr(&ds, &cfg.gpr.init(ds.dim()), &cfg.gpr.fit_config())?.trace,
    };
    trace.key = Some(key);
    trace.config_hash = cfg.hash();
    Ok(trace)
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let traces = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| train_run(cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut outputs = Vec::new();
    let mut gap_rows = Vec::new();
    for (i, trace) in traces.iter().enumerate() {
        let name = format!("run_{i}/trace.csv");
        emit_trace_csv(trace, &out.join(&name))?;
        outputs.push(name);
        let mut row = vec![i.to_string()];
        row.extend(gap_fields(&measure_gap(trace, cfg.gamma)));
        let last = trace.last().expect("at least one epoch");
        row.push(num(last.train_acc));
        row.push(num(last.val_acc));
        gap_rows.push(row);
    }
    write_table(
        &out.join("gaps.csv"),
        &[
            "run",
            "e_train",
            "e_val",
            "delta_signed",
            "delta_abs",
            "censored",
            "final_train_acc",
            "final_val_acc",
        ],
        gap_rows,
    )?;
    outputs.push("gaps.csv".into());
    Ok(((0..cfg.seeds).map(|i| run_entry(cfg, i)).collect(), outputs))
}

fn sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Outcome {
    let result = concealment_sweep(&cfg.sweep, cfg.master_seed, jobs)?;
    emit_sweep_csv(&result, &out.join("sweep.csv"))?;
    emit_aggregates_csv(&result, &out.join("aggregates.csv"))?;
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    Ok((
        vec![json!({ "cells": result.cells.len(), "failed": failed })],
        vec!["sweep.csv".into(), "aggregates.csv".into()],
    ))
}

fn landscape(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let block = &cfg.landscape;
    let ds = dataset.build(&run_key(cfg.master_seed, 0))?;
    let model = cfg.model.expect("validated");
    let inits = block.inits.clone().unwrap_or_else(|| match model {
        ModelKind::Gpc => classification_presets(),
        _ => regression_presets(),
    });
    let scan = match model {
        ModelKind::Gpc => laplace_surface(&ds, &block.grid, &inits, &cfg.gpc, &block.newton)?,
        _ => landscape_scan(&ds, &block.grid, &inits, &cfg.gpr.fit_config())?,
    };
    emit_landscape_csv(&scan, &out.join("landscape.csv"))?;
    emit_trajectories_csv(&scan, &out.join("trajectories.csv"))?;
    write_table(
        &out.join("delay.csv"),
        &["label", "stable_epoch", "improve_epoch", "delayed"],
        scan.trajectories.iter().map(|t| {
            let d = t.delayed_improvement(&block.delay);
            [
                t.label.clone(),
                d.map_or_else(String::new, |d| d.stable_epoch.to_string()),
                d.and_then(|d| d.improve_epoch)
                    .map_or_else(String::new, |e| e.to_string()),
                d.is_some_and(|d| d.delayed).to_string(),
            ]
        }),
    )?;
    Ok((
        vec![run_entry(cfg, 0)],
        vec!["landscape.csv".into(), "trajectories.csv".into(), "delay.csv".into()],
    ))
}

fn bnn_sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Outcome {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let key = run_key(cfg.master_seed, 0);
    let ds = dataset.build(&key)?;
    let result = bnn_init_sweep(&ds, &cfg.bnn.sigma_list, cfg.seeds, &cfg.bnn, &key.with("model"), jobs)?;
    let mut outputs = vec!["bnn_sweep.csv".to_string()];
    emit_bnn_csv(&result, &out.join("bnn_sweep.csv"))?;
    for (idx, run) in result.runs.iter().enumerate() {
        let name = format!("bnn_runs/run_{idx}/trace.csv");
        emit_trace_csv(&run.trace, &out.join(&name))?;
        outputs.push(name);
    }
    let (lehc, gap) = result.lehc_vs_gap();
    let corr = match pearson(&lehc, &gap) {
        Ok(c) => json!({ "r": c.r, "p": c.p, "n": c.n }),
        Err(e) => json!({ "error": e.to_string(), "n": lehc.len() }),
    };
    write_json(&out.join("bnn_stats.json"), &json!({ "lehc_vs_gap": corr }))?;
    outputs.push("bnn_stats.json".into());
    Ok((vec![run_entry(cfg, 0)], outputs))
}
