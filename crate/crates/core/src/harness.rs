//! Training traces, grokking-gap measurement and the concealment sweep.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{conceal_dataset, gen_modular, ConcealmentSpec, ModOp};
use crate::error::{Error, Result};
use crate::mlp_model::{fit_mlp, MlpConfig};
use crate::prng::StreamKey;

/// Accuracy threshold for "high accuracy".
pub const DEFAULT_GAMMA: f64 = 0.95;

/// Default epoch budget per run.
pub const DEFAULT_EPOCHS: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub data_fit: f64,
    pub complexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub model: String,
    pub config_hash: String,
    pub key: Option<StreamKey>,
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn new(model: impl Into<String>, key: Option<StreamKey>) -> Self {
        Self {
            model: model.into(),
            config_hash: String::new(),
            key,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        debug_assert_eq!(row.epoch, self.rows.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn train_acc(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_acc).collect()
    }

    pub fn val_acc(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.val_acc).collect()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// Smallest `i` with `series[i] >= gamma`.
pub fn first_index_above(series: &[f64], gamma: f64) -> Option<usize> {
    series.iter().position(|&v| v >= gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrokkingMeasurement {
    pub e_train: Option<usize>,
    pub e_val: Option<usize>,
    /// `e_val - e_train`.
    pub delta_signed: Option<i64>,
    /// `|e_val - e_train|`.
    pub delta_abs: Option<u64>,
    pub gamma: f64,
    /// Either threshold was never reached.
    pub censored: bool,
}

pub fn measure_gap(trace: &TrainingTrace, gamma: f64) -> GrokkingMeasurement {
    let epoch_of = |i: usize| trace.rows[i].epoch;
    let e_train = first_index_above(&trace.train_acc(), gamma).map(epoch_of);
    let e_val = first_index_above(&trace.val_acc(), gamma).map(epoch_of);
    let delta_signed = match (e_train, e_val) {
        (Some(t), Some(v)) => Some(v as i64 - t as i64),
        _ => None,
    };
    GrokkingMeasurement {
        e_train,
        e_val,
        delta_signed,
        delta_abs: delta_signed.map(i64::unsigned_abs),
        gamma,
        censored: delta_signed.is_none(),
    }
}

/// Min-max scaling onto `[0, 1]`; constant input maps to all zeros.
pub fn normalize_gaps(gaps: &[f64]) -> Vec<f64> {
    let lo = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    gaps.iter()
        .map(|&g| if span > 0.0 { (g - lo) / span } else { 0.0 })
        .collect()
}

pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub datasets: Vec<ModOp>,
    pub lengths: Vec<usize>,
    pub seeds: usize,
    pub p: u64,
    pub train_fraction: f64,
    pub gamma: f64,
    pub mlp: MlpConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            datasets: ModOp::ALL.to_vec(),
            lengths: vec![0, 10, 20, 30, 40],
            seeds: 3,
            p: 7,
            train_fraction: 0.5,
            gamma: DEFAULT_GAMMA,
            mlp: MlpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub dataset: ModOp,
    pub extra_dims: usize,
    pub seed: usize,
    pub measurement: Option<GrokkingMeasurement>,
    pub error: Option<String>,
}

impl SweepCell {
    pub fn delta_signed(&self) -> Option<i64> {
        self.measurement.and_then(|m| m.delta_signed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub dataset: ModOp,
    pub extra_dims: usize,
    pub avg_gap: Option<f64>,
    pub std_gap: Option<f64>,
    pub n_used: usize,
    pub n_censored: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepResult {
    pub fn from_cells(cells: Vec<SweepCell>) -> Self {
        let mut groups: BTreeMap<(usize, ModOp), Vec<&SweepCell>> = BTreeMap::new();
        for c in &cells {
            groups.entry((c.extra_dims, c.dataset)).or_default().push(c);
        }
        let aggregates = groups
            .into_iter()
            .map(|((extra_dims, dataset), cs)| {
                let gaps: Vec<f64> = cs.iter().filter_map(|c| c.delta_signed()).map(|g| g as f64).collect();
                let ms = mean_std(&gaps);
                SweepAggregate {
                    dataset,
                    extra_dims,
                    avg_gap: ms.map(|m| m.0),
                    std_gap: ms.map(|m| m.1),
                    n_used: gaps.len(),
                    n_censored: cs.iter().filter(|c| c.measurement.is_some_and(|m| m.censored)).count(),
                    n_failed: cs.iter().filter(|c| c.measurement.is_none()).count(),
                }
            })
            .collect();
        Self { cells, aggregates }
    }

    /// Averages laid out like Algorithm 1's `array_of_avg`: one row per
    /// length, one column per dataset, in the order given.
    pub fn avg_table(&self, lengths: &[usize], datasets: &[ModOp]) -> Vec<Vec<Option<f64>>> {
        self.table(lengths, datasets, |a| a.avg_gap)
    }

    pub fn std_table(&self, lengths: &[usize], datasets: &[ModOp]) -> Vec<Vec<Option<f64>>> {
        self.table(lengths, datasets, |a| a.std_gap)
    }

    fn table(
        &self,
        lengths: &[usize],
        datasets: &[ModOp],
        f: impl Fn(&SweepAggregate) -> Option<f64>,
    ) -> Vec<Vec<Option<f64>>> {
        lengths
            .iter()
            .map(|&l| {
                datasets
                    .iter()
                    .map(|&d| {
                        self.aggregates
                            .iter()
                            .find(|a| a.extra_dims == l && a.dataset == d)
                            .and_then(&f)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Keys used by one sweep cell. The modular split depends only on the dataset
/// and seed, so every length for a given seed sees the same partition.
pub fn cell_keys(master: &StreamKey, op: ModOp, extra_dims: usize, seed: usize) -> [StreamKey; 3] {
    let base = master.with("sweep");
    [
        base.with("split").with(op.name()).with(seed),
        base.with("conceal").with(op.name()).with(extra_dims).with(seed),
        base.with("init").with(op.name()).with(extra_dims).with(seed),
    ]
}

pub fn run_cell(
    cfg: &SweepConfig,
    master: &StreamKey,
    op: ModOp,
    extra_dims: usize,
    seed: usize,
) -> Result<GrokkingMeasurement> {
    let [split, hide, init] = cell_keys(master, op, extra_dims, seed);
    let base = gen_modular(op, cfg.p, cfg.train_fraction, &split)?;
    let ds = conceal_dataset(&base, &ConcealmentSpec { extra_dims, key: hide });
    let trace = fit_mlp(&ds, &cfg.mlp, &init)?;
    Ok(measure_gap(&trace, cfg.gamma))
}

/// Runs every (length, dataset, seed) cell on a pool of `jobs` threads.
///
/// Cell failures are recorded on the cell rather than aborting the sweep.
/// Output order is length-major, then dataset, then seed, independent of
/// scheduling.
pub fn concealment_sweep(cfg: &SweepConfig, master_seed: u64, jobs: usize) -> Result<SweepResult> {
    let master = StreamKey::new(master_seed);
    let mut plan = Vec::new();
    for &l in &cfg.lengths {
        for &d in &cfg.datasets {
            for s in 0..cfg.seeds {
                plan.push((d, l, s));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let cells = pool.install(|| {
        plan.par_iter()
            .map(|&(dataset, extra_dims, seed)| {
                let outcome = run_cell(cfg, &master, dataset, extra_dims, seed);
                SweepCell {
                    dataset,
                    extra_dims,
                    seed,
                    error: outcome.as_ref().err().map(ToString::to_string),
                    measurement: outcome.ok(),
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(SweepResult::from_cells(cells))
}
