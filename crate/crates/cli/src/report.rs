//! `stats` and `report`: analyses and figures built from finished runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use grok_core::datasets::ModOp;
use grok_core::stats::{log_space_fit, pearson};
use serde::Serialize;

use crate::error::CliError;
use crate::run::write_json;
use crate::svg::{Chart, Series};
use crate::tables::{read_bnn_csv, read_sweep_csv, read_table, read_trace_csv, SweepRecord};

/// Pearson correlation of `(l, ln δ)` and the log-space fit over the same points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsEntry {
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepStats {
    pub combined: StatsEntry,
    pub per_dataset: BTreeMap<String, StatsEntry>,
    /// Cells that never crossed the threshold.
    pub censored: usize,
    /// Crossed cells whose signed gap is not positive and so has no logarithm.
    pub non_positive: usize,
}

fn entry(points: &[(f64, f64)]) -> StatsEntry {
    let (l, delta): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let ln: Vec<f64> = delta.iter().map(|d| d.ln()).collect();
    let corr = pearson(&l, &ln);
    let fit = log_space_fit(points);
    let note = match (&corr, &fit) {
        (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
        _ => None,
    };
    StatsEntry {
        n: points.len(),
        r: corr.as_ref().ok().map(|c| c.r),
        p: corr.as_ref().ok().map(|c| c.p),
        a: fit.as_ref().ok().map(|f| f.a),
        b: fit.as_ref().ok().map(|f| f.b),
        note,
    }
}

pub fn sweep_stats(records: &[SweepRecord]) -> SweepStats {
    let usable = |r: &SweepRecord| {
        r.delta_signed
            .filter(|&d| d > 0)
            .map(|d| (r.extra_dims as f64, d as f64))
    };
    let combined: Vec<(f64, f64)> = records.iter().filter_map(usable).collect();
    let mut groups: BTreeMap<ModOp, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let g = groups.entry(r.dataset).or_default();
        if let Some(p) = usable(r) {
            g.push(p);
        }
    }
    SweepStats {
        combined: entry(&combined),
        per_dataset: groups
            .iter()
            .map(|(op, pts)| (op.name().to_string(), entry(pts)))
            .collect(),
        censored: records.iter().filter(|r| r.delta_signed.is_none()).count(),
        non_positive: records
            .iter()
            .filter(|r| r.delta_signed.is_some_and(|d| d <= 0))
            .count(),
    }
}

/// Reads `sweep.csv` and writes `stats.json` into `out`.
pub fn run_stats(input: &Path, out: &Path) -> Result<SweepStats, CliError> {
    let records = read_sweep_csv(input)?;
    let stats = sweep_stats(&records);
    std::fs::create_dir_all(out)?;
    write_json(&out.join("stats.json"), &stats)?;
    Ok(stats)
}

fn write_svg(out: &Path, name: &str, chart: &Chart, written: &mut Vec<String>) -> Result<(), CliError> {
    std::fs::write(out.join(name), chart.render())?;
    written.push(name.to_string());
    Ok(())
}

fn col(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>, CliError> {
    let j = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Experiment(format!("missing column `{name}`")))?;
    rows.iter()
        .map(|r| {
            r[j].parse()
                .map_err(|_| CliError::Experiment(format!("bad `{name}` value `{}`", r[j])))
        })
        .collect()
}

/// Traces under `dir`, as `(run name, trace path)` in name order.
fn trace_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut found = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("bnn_runs")] {
        let Ok(entries) = std::fs::read_dir(&sub) else { continue };
        for e in entries {
            let path = e?.path();
            let trace = path.join("trace.csv");
            if trace.is_file() {
                let name = path.file_name().expect("dir entry").to_string_lossy().into_owned();
                found.push((name, trace));
            }
        }
    }
    found.sort();
    Ok(found)
}

fn report_traces(dir: &Path, out: &Path, written: &mut Vec<String>) -> Result<(), CliError> {
    for (name, path) in trace_files(dir)? {
        let rows = read_trace_csv(&path)?;
        let pick = |f: fn(&grok_core::harness::TraceRow) -> f64| -> Vec<(f64, f64)> {
            rows.iter().map(|r| (r.epoch as f64, f(r))).collect()
        };
        let acc = Chart::new(&format!("Accuracy ({name})"), "epoch", "accuracy")
            .log_x()
            .with(Series::line("train_acc", pick(|r| r.train_acc)))
            .with(Series::line("val_acc", pick(|r| r.val_acc)));
        write_svg(out, &format!("{name}_accuracy.svg"), &acc, written)?;
        let loss = Chart::new(&format!("Loss terms ({name})"), "epoch", "value")
            .log_x()
            .with(Series::line("data_fit", pick(|r| r.data_fit)))
            .with(Series::line("complexity", pick(|r| r.complexity)));
        write_svg(out, &format!("{name}_loss.svg"), &loss, written)?;
    }
    Ok(())
}

fn report_sweep(dir: &Path, out: &Path, written: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join("sweep.csv");
    if !path.is_file() {
        return Ok(());
    }
    let records = read_sweep_csv(&path)?;
    let stats = run_stats(&path, out)?;
    written.push("stats.json".into());
    let mut chart = Chart::new("Grokking gap against concealment", "extra dimensions l", "gap (epochs)");
    let mut groups: BTreeMap<ModOp, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &records {
        if let Some(d) = r.delta_signed {
            groups
                .entry(r.dataset)
                .or_default()
                .push((r.extra_dims as f64, d as f64));
        }
    }
    for (op, pts) in groups {
        chart = chart.with(Series::dots(op.name(), pts));
    }
    if let (Some(a), Some(b)) = (stats.combined.a, stats.combined.b) {
        let lmax = records.iter().map(|r| r.extra_dims).max().unwrap_or(0) as f64;
        let curve = (0..=50).map(|i| {
            let l = lmax * i as f64 / 50.0;
            (l, (a * l + b).exp())
        });
        chart = chart.with(Series::line("exp(a l + b)", curve.collect()));
    }
    write_svg(out, "fig4.svg", &chart, written)
}

fn report_landscape(dir: &Path, out: &Path, written: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join("landscape.csv");
    if !path.is_file() {
        return Ok(());
    }
    let (header, rows) = read_table(&path)?;
    let (ls, amp, total) = (
        col(&header, &rows, "ls")?,
        col(&header, &rows, "amp")?,
        col(&header, &rows, "total")?,
    );
    let mut amps: Vec<f64> = amp.clone();
    amps.sort_by(f64::total_cmp);
    amps.dedup();
    let stride = amps.len().div_ceil(6).max(1);
    let mut surface = Chart::new("Objective over lengthscale", "lengthscale", "total");
    surface.log_x = true;
    for &a in amps.iter().step_by(stride) {
        let pts = ls
            .iter()
            .zip(&amp)
            .zip(&total)
            .filter(|((_, &b), _)| b == a)
            .map(|((&l, _), &t)| (l, t))
            .collect();
        surface = surface.with(Series::line(format!("amp {a:.3}"), pts));
    }
    write_svg(out, "fig5.svg", &surface, written)?;

    let tpath = dir.join("trajectories.csv");
    if tpath.is_file() {
        let (header, rows) = read_table(&tpath)?;
        let (tl, ta) = (col(&header, &rows, "ls")?, col(&header, &rows, "amp")?);
        let mut paths: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            paths.entry(r[0].clone()).or_default().push((tl[i], ta[i]));
        }
        let mut chart = Chart::new("Hyperparameter trajectories", "lengthscale", "amplitude").log_x();
        for (label, pts) in paths {
            chart = chart.with(Series::line(label, pts));
        }
        write_svg(out, "fig5_trajectories.svg", &chart, written)?;
    }
    Ok(())
}

fn report_bnn(dir: &Path, out: &Path, written: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join("bnn_sweep.csv");
    if !path.is_file() {
        return Ok(());
    }
    let pts = read_bnn_csv(&path)?
        .into_iter()
        .map(|(lehc, _, norm)| (lehc, norm))
        .collect();
    let chart = Chart::new("Time in LEHC against grokking gap", "epochs in LEHC", "normalised gap")
        .with(Series::dots("runs", pts));
    write_svg(out, "fig6.svg", &chart, written)
}

/// Renders every figure the contents of `dir` support into `out`.
pub fn run_report(dir: &Path, out: &Path) -> Result<Vec<String>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", dir.display())));
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    report_traces(dir, out, &mut written)?;
    report_sweep(dir, out, &mut written)?;
    report_landscape(dir, out, &mut written)?;
    report_bnn(dir, out, &mut written)?;
    if written.is_empty() {
        return Err(CliError::Experiment(format!("nothing to report in {}", dir.display())));
    }
    Ok(written)
}
