//! Mean-field Gaussian variational network over the [`crate::mlp_model`]
//! architecture with a standard-normal weight prior.
//!
//! Objective: `E_q[CE] + w·KL(q ‖ N(0, I))`, with the cross-entropy averaged
//! over examples and `w` the KL weight (by default `1/n_train`, which makes
//! the objective the per-example negative evidence lower bound).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::error::{dim_check, Error, Result};
use crate::harness::{measure_gap, normalize_gaps, GrokkingMeasurement, TraceRow, TrainingTrace, DEFAULT_GAMMA};
use crate::linalg::{axpy, Matrix};
use crate::mlp_model::{ce_backprop, cross_entropy, logits_accuracy, mlp_forward, MlpParams, MlpShape};
use crate::prng::{Stream, StreamKey};

#[derive(Debug, Clone, PartialEq)]
pub struct BnnParams {
    pub mean: MlpParams,
    pub log_std: MlpParams,
}

impl BnnParams {
    /// The prior itself: zero means, unit standard deviations.
    pub fn prior(shape: MlpShape) -> Self {
        Self {
            mean: MlpParams::zeros(shape),
            log_std: MlpParams::zeros(shape),
        }
    }

    pub fn shape(&self) -> MlpShape {
        self.mean.shape
    }

    pub fn len(&self) -> usize {
        self.mean.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `θ = μ + σ ⊙ ε`.
    pub fn sample(&self, eps: &[f64]) -> MlpParams {
        let data = self
            .mean
            .data
            .iter()
            .zip(&self.log_std.data)
            .zip(eps)
            .map(|((m, r), e)| m + r.exp() * e)
            .collect();
        MlpParams {
            shape: self.shape(),
            data,
        }
    }
}

/// `Σ ½(σ² + μ² − 1 − ln σ²)` over every weight.
pub fn kl_to_standard_normal(phi: &BnnParams) -> f64 {
    phi.mean
        .data
        .iter()
        .zip(&phi.log_std.data)
        .map(|(m, r)| 0.5 * ((2.0 * r).exp() + m * m - 1.0 - 2.0 * r))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnnObjective {
    pub expected_ce: f64,
    /// Unweighted KL divergence to the prior.
    pub kl: f64,
    pub kl_weight: f64,
    /// `kl_weight · kl`.
    pub complexity: f64,
    /// `expected_ce + complexity`.
    pub total: f64,
}

impl BnnObjective {
    fn new(expected_ce: f64, kl: f64, kl_weight: f64) -> Self {
        let complexity = kl_weight * kl;
        Self {
            expected_ce,
            kl,
            kl_weight,
            complexity,
            total: expected_ce + complexity,
        }
    }
}

fn check(phi: &BnnParams, x: &Matrix, labels: &[usize]) -> Result<()> {
    let shape = phi.shape();
    dim_check(phi.log_std.shape == shape, || "mean and log-std shapes differ".into())?;
    dim_check(x.cols() == shape.input, || {
        format!("input has {} columns, network expects {}", x.cols(), shape.input)
    })?;
    dim_check(x.rows() == labels.len() && !labels.is_empty(), || {
        format!("{} rows, {} labels", x.rows(), labels.len())
    })?;
    if labels.iter().any(|&y| y >= shape.classes) {
        return Err(Error::InvalidArgument("label outside class range".into()));
    }
    Ok(())
}

/// Draws `samples` noise vectors of the parameter length.
pub fn draw_noise(phi: &BnnParams, samples: usize, stream: &mut Stream) -> Vec<Vec<f64>> {
    (0..samples).map(|_| stream.normals(phi.len())).collect()
}

/// Objective with caller-supplied reparameterization noise.
pub fn bnn_objective_with_noise(
    phi: &BnnParams,
    x: &Matrix,
    labels: &[usize],
    noise: &[Vec<f64>],
    kl_weight: f64,
) -> Result<BnnObjective> {
    check(phi, x, labels)?;
    if noise.is_empty() {
        return Err(Error::InvalidArgument("need at least one Monte-Carlo sample".into()));
    }
    let mut ce = 0.0;
    for eps in noise {
        dim_check(eps.len() == phi.len(), || "noise length".into())?;
        let logits = mlp_forward(&phi.sample(eps), x)?;
        ce += cross_entropy(&logits, labels);
    }
    Ok(BnnObjective::new(
        ce / noise.len() as f64,
        kl_to_standard_normal(phi),
        kl_weight,
    ))
}

pub fn bnn_objective(
    phi: &BnnParams,
    x: &Matrix,
    labels: &[usize],
    mc_samples: usize,
    kl_weight: f64,
    stream: &mut Stream,
) -> Result<BnnObjective> {
    let noise = draw_noise(phi, mc_samples, stream);
    bnn_objective_with_noise(phi, x, labels, &noise, kl_weight)
}

/// Pathwise gradient for fixed noise; the KL part is exact.
pub fn bnn_grad_with_noise(
    phi: &BnnParams,
    x: &Matrix,
    labels: &[usize],
    noise: &[Vec<f64>],
    kl_weight: f64,
) -> Result<(BnnObjective, BnnParams)> {
    check(phi, x, labels)?;
    if noise.is_empty() {
        return Err(Error::InvalidArgument("need at least one Monte-Carlo sample".into()));
    }
    let shape = phi.shape();
    let mut grads = BnnParams::prior(shape);
    let inv_s = 1.0 / noise.len() as f64;
    let mut ce = 0.0;
    for eps in noise {
        dim_check(eps.len() == phi.len(), || "noise length".into())?;
        let (c, g, _) = ce_backprop(&phi.sample(eps), x, labels);
        ce += c;
        axpy(inv_s, &g.data, &mut grads.mean.data);
        for (((gr, gi), e), r) in grads
            .log_std
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(eps)
            .zip(&phi.log_std.data)
        {
            *gr += inv_s * gi * e * r.exp();
        }
    }
    axpy(kl_weight, &phi.mean.data, &mut grads.mean.data);
    for (gr, r) in grads.log_std.data.iter_mut().zip(&phi.log_std.data) {
        *gr += kl_weight * ((2.0 * r).exp() - 1.0);
    }
    let obj = BnnObjective::new(ce * inv_s, kl_to_standard_normal(phi), kl_weight);
    Ok((obj, grads))
}

pub fn bnn_grad(
    phi: &BnnParams,
    x: &Matrix,
    labels: &[usize],
    mc_samples: usize,
    kl_weight: f64,
    stream: &mut Stream,
) -> Result<(BnnObjective, BnnParams)> {
    let noise = draw_noise(phi, mc_samples, stream);
    bnn_grad_with_noise(phi, x, labels, &noise, kl_weight)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictive {
    /// Classify with the variational mean weights.
    #[default]
    Mean,
    /// Average softmax probabilities over `eval_samples` weight draws.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnnConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Samples per training gradient.
    pub mc_samples: usize,
    /// Samples for the recorded expected cross-entropy.
    pub eval_samples: usize,
    pub sigma_list: Vec<f64>,
    pub log_std_init: f64,
    /// `None` means `1 / n_train`.
    pub kl_weight: Option<f64>,
    pub predictive: Predictive,
    pub gamma: f64,
    /// Relative excess over the final complexity that counts as high complexity.
    pub lehc_margin: f64,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            hidden: 1000,
            lr: 0.1,
            epochs: 1500,
            mc_samples: 1,
            eval_samples: 16,
            sigma_list: vec![0.05, 0.1, 0.2, 0.4],
            log_std_init: -3.0,
            kl_weight: None,
            predictive: Predictive::Mean,
            gamma: DEFAULT_GAMMA,
            lehc_margin: 0.2,
        }
    }
}

fn predictive_accuracy(
    phi: &BnnParams,
    x: &Matrix,
    labels: &[usize],
    cfg: &BnnConfig,
    stream: &mut Stream,
) -> Result<f64> {
    match cfg.predictive {
        Predictive::Mean => Ok(logits_accuracy(&mlp_forward(&phi.mean, x)?, labels)),
        Predictive::MonteCarlo => {
            let c = phi.shape().classes;
            let mut probs = Matrix::zeros(x.rows(), c);
            for eps in draw_noise(phi, cfg.eval_samples.max(1), stream) {
                let logits = mlp_forward(&phi.sample(&eps), x)?;
                for i in 0..x.rows() {
                    let row = logits.row(i);
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    for k in 0..c {
                        probs[(i, k)] += (row[k] - m).exp() / z;
                    }
                }
            }
            Ok(logits_accuracy(&probs, labels))
        }
    }
}

/// Trains one network whose variational means start from `N(0, sigma²)`.
///
/// Row `e` records the state after `e` SGD steps: `data_fit` is the expected
/// cross-entropy over `eval_samples` draws, `complexity` the weighted KL, and
/// `train_loss` their sum.
pub fn fit_bnn(ds: &SplitDataset, cfg: &BnnConfig, sigma: f64, key: &StreamKey) -> Result<(TrainingTrace, BnnParams)> {
    if cfg.epochs == 0 || cfg.mc_samples == 0 || cfg.eval_samples == 0 {
        return Err(Error::InvalidArgument(
            "epochs and sample counts must be positive".into(),
        ));
    }
    let classes = ds
        .meta
        .classes
        .ok_or_else(|| Error::InvalidArgument("dataset has no class count".into()))?;
    let train_y = ds.train_y.classes()?;
    let val_y = ds.val_y.classes()?;
    let shape = MlpShape {
        input: ds.dim(),
        hidden: cfg.hidden,
        classes,
    };
    let kl_weight = cfg.kl_weight.unwrap_or(1.0 / ds.n_train() as f64);

    let mut init = key.with("init").stream();
    let mut phi = BnnParams::prior(shape);
    phi.mean
        .data
        .iter_mut()
        .for_each(|m| *m = sigma * init.standard_normal());
    phi.log_std.data.iter_mut().for_each(|r| *r = cfg.log_std_init);

    let mut train_noise = key.with("train-noise").stream();
    let mut eval_noise = key.with("eval-noise").stream();
    let mut pred_noise = key.with("predict-noise").stream();
    let mut trace = TrainingTrace::new("bnn", Some(key.clone()));
    for epoch in 0..cfg.epochs {
        let eval = bnn_objective(
            &phi,
            &ds.train_x,
            &train_y,
            cfg.eval_samples,
            kl_weight,
            &mut eval_noise,
        )?;
        if !eval.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: eval.total,
            });
        }
        trace.push(TraceRow {
            epoch,
            train_loss: eval.expected_ce + eval.complexity,
            train_acc: predictive_accuracy(&phi, &ds.train_x, &train_y, cfg, &mut pred_noise)?,
            val_acc: predictive_accuracy(&phi, &ds.val_x, &val_y, cfg, &mut pred_noise)?,
            data_fit: eval.expected_ce,
            complexity: eval.complexity,
        });
        let (_, g) = bnn_grad(&phi, &ds.train_x, &train_y, cfg.mc_samples, kl_weight, &mut train_noise)?;
        axpy(-cfg.lr, &g.mean.data, &mut phi.mean.data);
        axpy(-cfg.lr, &g.log_std.data, &mut phi.log_std.data);
    }
    Ok((trace, phi))
}

/// Epochs spent at high training accuracy while complexity is still at least
/// `(1 + margin)` times its final value.
pub fn lehc_epochs(trace: &TrainingTrace, gamma: f64, margin: f64) -> usize {
    let Some(last) = trace.last() else { return 0 };
    let threshold = (1.0 + margin) * last.complexity;
    trace
        .rows
        .iter()
        .filter(|r| r.train_acc >= gamma && r.complexity >= threshold)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnRun {
    pub sigma: f64,
    pub seed: usize,
    pub trace: TrainingTrace,
    pub measurement: GrokkingMeasurement,
    pub lehc_epochs: usize,
    /// Min-max scaled signed gap across uncensored runs of the sweep.
    pub normalized_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnSweepResult {
    pub runs: Vec<BnnRun>,
}

impl BnnSweepResult {
    /// `(lehc_epochs, delta_signed)` for every uncensored run.
    pub fn lehc_vs_gap(&self) -> (Vec<f64>, Vec<f64>) {
        self.runs
            .iter()
            .filter_map(|r| r.measurement.delta_signed.map(|g| (r.lehc_epochs as f64, g as f64)))
            .unzip()
    }
}

/// Trains `seeds` networks per initial mean scale on the same dataset.
pub fn bnn_init_sweep(
    ds: &SplitDataset,
    sigma_list: &[f64],
    seeds: usize,
    cfg: &BnnConfig,
    key: &StreamKey,
    jobs: usize,
) -> Result<BnnSweepResult> {
    let plan: Vec<(usize, f64, usize)> = sigma_list
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| (0..seeds).map(move |r| (i, s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let fitted = pool.install(|| {
        plan.par_iter()
            .map(|&(i, sigma, seed)| {
                let cell = key.with("bnn").with(i).with(seed);
                fit_bnn(ds, cfg, sigma, &cell).map(|(t, _)| (sigma, seed, t))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut runs: Vec<BnnRun> = fitted
        .into_iter()
        .map(|(sigma, seed, trace)| BnnRun {
            sigma,
            seed,
            measurement: measure_gap(&trace, cfg.gamma),
            lehc_epochs: lehc_epochs(&trace, cfg.gamma, cfg.lehc_margin),
            trace,
            normalized_gap: None,
        })
        .collect();
    let idx: Vec<usize> = (0..runs.len())
        .filter(|&i| runs[i].measurement.delta_signed.is_some())
        .collect();
    let gaps: Vec<f64> = idx
        .iter()
        .map(|&i| runs[i].measurement.delta_signed.unwrap() as f64)
        .collect();
    for (&i, g) in idx.iter().zip(normalize_gaps(&gaps)) {
        runs[i].normalized_gap = Some(g);
    }
    Ok(BnnSweepResult { runs })
}
