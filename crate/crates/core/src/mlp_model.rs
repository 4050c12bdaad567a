//! One-hidden-layer ReLU classifier with softmax cross-entropy, weight decay
//! and hand-written backpropagation.

use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::error::{dim_check, Error, Result};
use crate::harness::{TraceRow, TrainingTrace};
use crate::linalg::{axpy, dot, Matrix};
use crate::prng::{Stream, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpShape {
    pub fn len(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        [w1, b1, w2, b2]
    }
}

/// Parameters stored flat as `[W1 (h×d), b1 (h), W2 (C×h), b2 (C)]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub shape: MlpShape,
    pub data: Vec<f64>,
}

pub struct MlpView<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

pub struct MlpViewMut<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
}

impl MlpParams {
    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_data(shape: MlpShape, data: Vec<f64>) -> Result<Self> {
        dim_check(data.len() == shape.len(), || {
            format!("{} values for {} parameters", data.len(), shape.len())
        })?;
        Ok(Self { shape, data })
    }

    /// Weights from `N(0, scale²/fan_in)`, biases zero.
    pub fn init(shape: MlpShape, scale: f64, stream: &mut Stream) -> Self {
        let mut p = Self::zeros(shape);
        let s1 = scale / (shape.input.max(1) as f64).sqrt();
        let s2 = scale / (shape.hidden.max(1) as f64).sqrt();
        let v = p.view_mut();
        v.w1.iter_mut().for_each(|w| *w = s1 * stream.standard_normal());
        v.w2.iter_mut().for_each(|w| *w = s2 * stream.standard_normal());
        p
    }

    pub fn view(&self) -> MlpView<'_> {
        let [_, b1, w2, b2] = self.shape.offsets();
        let (w1s, rest) = self.data.split_at(b1);
        let (b1s, rest) = rest.split_at(w2 - b1);
        let (w2s, b2s) = rest.split_at(b2 - w2);
        MlpView {
            w1: w1s,
            b1: b1s,
            w2: w2s,
            b2: b2s,
        }
    }

    pub fn view_mut(&mut self) -> MlpViewMut<'_> {
        let [_, b1, w2, b2] = self.shape.offsets();
        let (w1s, rest) = self.data.split_at_mut(b1);
        let (b1s, rest) = rest.split_at_mut(w2 - b1);
        let (w2s, b2s) = rest.split_at_mut(b2 - w2);
        MlpViewMut {
            w1: w1s,
            b1: b1s,
            w2: w2s,
            b2: b2s,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_input(params: &MlpParams, x: &Matrix) -> Result<()> {
    dim_check(x.cols() == params.shape.input, || {
        format!("input has {} columns, network expects {}", x.cols(), params.shape.input)
    })
}

/// Hidden pre-activations for one example.
fn hidden_pre(v: &MlpView<'_>, shape: &MlpShape, x: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&v.w1[j * shape.input..(j + 1) * shape.input], x) + v.b1[j];
    }
}

fn logits_from_hidden(v: &MlpView<'_>, shape: &MlpShape, act: &[f64], out: &mut [f64]) {
    for (c, o) in out.iter_mut().enumerate() {
        *o = dot(&v.w2[c * shape.hidden..(c + 1) * shape.hidden], act) + v.b2[c];
    }
}

/// `W2 relu(W1 x + b1) + b2` for every row of `x`.
pub fn mlp_forward(params: &MlpParams, x: &Matrix) -> Result<Matrix> {
    check_input(params, x)?;
    let shape = params.shape;
    let v = params.view();
    let mut out = Matrix::zeros(x.rows(), shape.classes);
    let mut act = vec![0.0; shape.hidden];
    for i in 0..x.rows() {
        hidden_pre(&v, &shape, x.row(i), &mut act);
        act.iter_mut().for_each(|a| *a = a.max(0.0));
        logits_from_hidden(&v, &shape, &act, out.row_mut(i));
    }
    Ok(out)
}

fn log_softmax_row(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

/// Mean softmax cross-entropy of `logits` against class indices.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut lp = vec![0.0; logits.cols()];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        log_softmax_row(logits.row(i), &mut lp);
        total -= lp[y];
    }
    total / labels.len() as f64
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn logits_accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn check_labels(params: &MlpParams, x: &Matrix, labels: &[usize]) -> Result<()> {
    check_input(params, x)?;
    dim_check(x.rows() == labels.len() && !labels.is_empty(), || {
        format!("{} rows, {} labels", x.rows(), labels.len())
    })?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= params.shape.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {})",
            params.shape.classes
        )));
    }
    Ok(())
}

/// Cross-entropy and its gradient, without any regularizer. Also returns the
/// logits so callers can score accuracy from the same pass.
pub(crate) fn ce_backprop(params: &MlpParams, x: &Matrix, labels: &[usize]) -> (f64, MlpParams, Matrix) {
    let shape = params.shape;
    let v = params.view();
    let n = x.rows();
    let inv_n = 1.0 / n as f64;
    let mut grads = MlpParams::zeros(shape);
    let mut logits = Matrix::zeros(n, shape.classes);
    let mut pre = vec![0.0; shape.hidden];
    let mut act = vec![0.0; shape.hidden];
    let mut lp = vec![0.0; shape.classes];
    let mut dz = vec![0.0; shape.hidden];
    let mut ce = 0.0;
    {
        let g = grads.view_mut();
        for i in 0..n {
            let xi = x.row(i);
            hidden_pre(&v, &shape, xi, &mut pre);
            for (a, p) in act.iter_mut().zip(&pre) {
                *a = p.max(0.0);
            }
            logits_from_hidden(&v, &shape, &act, logits.row_mut(i));
            log_softmax_row(logits.row(i), &mut lp);
            ce -= lp[labels[i]];

            dz.iter_mut().for_each(|d| *d = 0.0);
            for (c, l) in lp.iter().enumerate() {
                let dl = (l.exp() - f64::from(u8::from(c == labels[i]))) * inv_n;
                g.b2[c] += dl;
                axpy(dl, &act, &mut g.w2[c * shape.hidden..(c + 1) * shape.hidden]);
                axpy(dl, &v.w2[c * shape.hidden..(c + 1) * shape.hidden], &mut dz);
            }
            for j in 0..shape.hidden {
                if pre[j] > 0.0 && dz[j] != 0.0 {
                    g.b1[j] += dz[j];
                    axpy(dz[j], xi, &mut g.w1[j * shape.input..(j + 1) * shape.input]);
                }
            }
        }
    }
    (ce * inv_n, grads, logits)
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    /// Cross-entropy plus `(weight_decay/2)·‖θ‖²`.
    pub loss: f64,
    pub cross_entropy: f64,
    pub grads: MlpParams,
    pub logits: Matrix,
}

pub fn mlp_loss_grad(params: &MlpParams, x: &Matrix, labels: &[usize], weight_decay: f64) -> Result<LossGrad> {
    check_labels(params, x, labels)?;
    let (ce, mut grads, logits) = ce_backprop(params, x, labels);
    axpy(weight_decay, &params.data, &mut grads.data);
    Ok(LossGrad {
        loss: ce + 0.5 * weight_decay * params.norm_sq(),
        cross_entropy: ce,
        grads,
        logits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Minibatch size; `None` (or anything ≥ the training set) means full batch.
    pub batch_size: Option<usize>,
    pub init_scale: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 1000,
            lr: 1e-1,
            weight_decay: 1e-2,
            epochs: 1500,
            batch_size: None,
            init_scale: 1.0,
        }
    }
}

/// Trains with plain gradient descent on cross-entropy plus weight decay.
///
/// Row `e` records the network after `e` epochs. `complexity` is the squared
/// L2 norm of all parameters.
pub fn fit_mlp(ds: &SplitDataset, cfg: &MlpConfig, key: &StreamKey) -> Result<TrainingTrace> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
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
    let mut params = MlpParams::init(shape, cfg.init_scale, &mut key.with("init").stream());
    let mut batch_stream = key.with("batches").stream();
    let n = ds.n_train();
    let batch = cfg.batch_size.unwrap_or(n).clamp(1, n);
    let mut trace = TrainingTrace::new("mlp", Some(key.clone()));

    for epoch in 0..cfg.epochs {
        let full = mlp_loss_grad(&params, &ds.train_x, &train_y, cfg.weight_decay)?;
        if !full.loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: full.loss });
        }
        let val_logits = mlp_forward(&params, &ds.val_x)?;
        trace.push(TraceRow {
            epoch,
            train_loss: full.loss,
            train_acc: logits_accuracy(&full.logits, &train_y),
            val_acc: logits_accuracy(&val_logits, &val_y),
            data_fit: full.cross_entropy,
            complexity: params.norm_sq(),
        });

        if batch == n {
            axpy(-cfg.lr, &full.grads.data, &mut params.data);
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            batch_stream.shuffle(&mut order);
            for chunk in order.chunks(batch) {
                let xb = ds.train_x.select_rows(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
                let lg = mlp_loss_grad(&params, &xb, &yb, cfg.weight_decay)?;
                axpy(-cfg.lr, &lg.grads.data, &mut params.data);
            }
        }
        if !params.is_finite() {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
    }
    Ok(trace)
}
