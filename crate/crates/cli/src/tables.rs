//! CSV emission and parsing. Floats use Rust's shortest round-trip form, so a
//! written value parses back to the identical `f64`.

use std::path::Path;

use grok_core::bnn_model::BnnSweepResult;
use grok_core::datasets::{ModOp, SplitDataset, Targets};
use grok_core::gp_regression::LandscapeScan;
use grok_core::harness::{GrokkingMeasurement, SweepResult, TraceRow, TrainingTrace};

use crate::error::CliError;

pub const TRACE_HEADER: [&str; 6] = ["epoch", "train_loss", "train_acc", "val_acc", "data_fit", "complexity"];

pub const SWEEP_HEADER: [&str; 9] = [
    "dataset",
    "extra_dims",
    "seed",
    "e_train",
    "e_val",
    "delta_signed",
    "delta_abs",
    "censored",
    "error",
];

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T, CliError> {
    field
        .parse()
        .map_err(|_| CliError::Experiment(format!("cannot parse {what} from `{field}`")))
}

fn parse_opt<T: std::str::FromStr>(field: &str, what: &str) -> Result<Option<T>, CliError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(field, what).map(Some)
    }
}

/// Writes `header` and `rows` to `path`, creating parent directories.
pub fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV with a header; returns the header and the raw records.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn expect_header(path: &Path, got: &[String], want: &[&str]) -> Result<(), CliError> {
    if got.iter().map(String::as_str).eq(want.iter().copied()) {
        Ok(())
    } else {
        Err(CliError::Experiment(format!(
            "{} has header {got:?}, expected {want:?}",
            path.display()
        )))
    }
}

pub fn emit_trace_csv(trace: &TrainingTrace, path: &Path) -> Result<(), CliError> {
    write_table(
        path,
        &TRACE_HEADER,
        trace.rows.iter().map(|r| {
            [
                r.epoch.to_string(),
                num(r.train_loss),
                num(r.train_acc),
                num(r.val_acc),
                num(r.data_fit),
                num(r.complexity),
            ]
        }),
    )
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, CliError> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &TRACE_HEADER)?;
    rows.iter()
        .map(|r| {
            Ok(TraceRow {
                epoch: parse(&r[0], "epoch")?,
                train_loss: parse(&r[1], "train_loss")?,
                train_acc: parse(&r[2], "train_acc")?,
                val_acc: parse(&r[3], "val_acc")?,
                data_fit: parse(&r[4], "data_fit")?,
                complexity: parse(&r[5], "complexity")?,
            })
        })
        .collect()
}

pub fn gap_fields(m: &GrokkingMeasurement) -> [String; 5] {
    [
        opt(m.e_train),
        opt(m.e_val),
        opt(m.delta_signed),
        opt(m.delta_abs),
        m.censored.to_string(),
    ]
}

/// Dataset split as `split,x0..x{d-1},y`; class targets are written as integers.
pub fn emit_dataset_csv(ds: &SplitDataset, path: &Path) -> Result<(), CliError> {
    let d = ds.dim();
    let mut header: Vec<String> = vec!["split".into()];
    header.extend((0..d).map(|j| format!("x{j}")));
    header.push("y".into());
    let target = |t: &Targets, i: usize| match t {
        Targets::Real(v) => num(v[i]),
        Targets::Sign(v) => v[i].to_string(),
        Targets::Class(v) => v[i].to_string(),
    };
    let mut rows = Vec::new();
    for (split, x, y) in [("train", &ds.train_x, &ds.train_y), ("val", &ds.val_x, &ds.val_y)] {
        for i in 0..x.rows() {
            let mut row = vec![split.to_string()];
            row.extend(x.row(i).iter().map(|&v| num(v)));
            row.push(target(y, i));
            rows.push(row);
        }
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(path, &refs, rows)
}

pub fn emit_sweep_csv(result: &SweepResult, path: &Path) -> Result<(), CliError> {
    write_table(
        path,
        &SWEEP_HEADER,
        result.cells.iter().map(|c| {
            let mut row = vec![
                c.dataset.name().to_string(),
                c.extra_dims.to_string(),
                c.seed.to_string(),
            ];
            match &c.measurement {
                Some(m) => row.extend(gap_fields(m)),
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
            row.push(c.error.clone().unwrap_or_default());
            row
        }),
    )
}

pub fn emit_aggregates_csv(result: &SweepResult, path: &Path) -> Result<(), CliError> {
    write_table(
        path,
        &[
            "dataset",
            "extra_dims",
            "avg_gap",
            "std_gap",
            "n_used",
            "n_censored",
            "n_failed",
        ],
        result.aggregates.iter().map(|a| {
            [
                a.dataset.name().to_string(),
                a.extra_dims.to_string(),
                opt(a.avg_gap.map(num)),
                opt(a.std_gap.map(num)),
                a.n_used.to_string(),
                a.n_censored.to_string(),
                a.n_failed.to_string(),
            ]
        }),
    )
}

/// One uncensored or censored sweep cell as read back from `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub dataset: ModOp,
    pub extra_dims: usize,
    pub seed: usize,
    pub delta_signed: Option<i64>,
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>, CliError> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &SWEEP_HEADER)?;
    rows.iter()
        .map(|r| {
            Ok(SweepRecord {
                dataset: ModOp::parse(&r[0])
                    .ok_or_else(|| CliError::Experiment(format!("unknown dataset `{}`", r[0])))?,
                extra_dims: parse(&r[1], "extra_dims")?,
                seed: parse(&r[2], "seed")?,
                delta_signed: parse_opt(&r[5], "delta_signed")?,
            })
        })
        .collect()
}

pub fn emit_landscape_csv(scan: &LandscapeScan, path: &Path) -> Result<(), CliError> {
    write_table(
        path,
        &["ls", "amp", "data_fit", "complexity", "total"],
        scan.cells.iter().map(|c| {
            [
                num(c.lengthscale),
                num(c.amplitude),
                num(c.data_fit),
                num(c.complexity),
                num(c.total),
            ]
        }),
    )
}

pub fn emit_trajectories_csv(scan: &LandscapeScan, path: &Path) -> Result<(), CliError> {
    write_table(
        path,
        &[
            "label",
            "step",
            "ls",
            "amp",
            "data_fit",
            "complexity",
            "total",
            "val_error",
            "train_error",
        ],
        scan.trajectories.iter().flat_map(|t| {
            t.points.iter().map(|p| {
                [
                    t.label.clone(),
                    p.step.to_string(),
                    num(p.lengthscale),
                    num(p.amplitude),
                    num(p.data_fit),
                    num(p.complexity),
                    num(p.total),
                    num(p.val_error),
                    num(p.train_error),
                ]
            })
        }),
    )
}

pub const BNN_HEADER: [&str; 10] = [
    "sigma",
    "seed",
    "e_train",
    "e_val",
    "delta_signed",
    "delta_abs",
    "censored",
    "lehc_epochs",
    "normalized_gap",
    "final_val_acc",
];

pub fn emit_bnn_csv(result: &BnnSweepResult, path: &Path) -> Result<(), CliError> {
    write_table(
        path,
        &BNN_HEADER,
        result.runs.iter().map(|r| {
            let mut row = vec![num(r.sigma), r.seed.to_string()];
            row.extend(gap_fields(&r.measurement));
            row.push(r.lehc_epochs.to_string());
            row.push(opt(r.normalized_gap.map(num)));
            row.push(opt(r.trace.last().map(|l| num(l.val_acc))));
            row
        }),
    )
}

/// `(lehc_epochs, delta_signed, normalized_gap)` per uncensored run.
pub fn read_bnn_csv(path: &Path) -> Result<Vec<(f64, f64, f64)>, CliError> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &BNN_HEADER)?;
    let mut out = Vec::new();
    for r in &rows {
        if let (Some(gap), Some(norm)) = (
            parse_opt::<f64>(&r[4], "delta_signed")?,
            parse_opt::<f64>(&r[8], "normalized_gap")?,
        ) {
            out.push((parse(&r[7], "lehc_epochs")?, gap, norm));
        }
    }
    Ok(out)
}
