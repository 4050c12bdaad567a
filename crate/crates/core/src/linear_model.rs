//! Linear regression under a Gaussian weight prior, classified by the sign of
//! its output.
//!
//! The loss is `MSE(y, Xw)/ε₀ + Σᵢ (wᵢ - μ₀ᵢ)²/σ₀ᵢ`. `σ₀` is read as a prior
//! *variance* and divides the squared deviation directly.

use serde::{Deserialize, Serialize};

use crate::datasets::{expand_slope, SplitDataset, SLOPE};
use crate::error::{dim_check, Error, Result};
use crate::harness::{TraceRow, TrainingTrace};
use crate::linalg::{dot, Matrix};

/// Initial weights that all but switch off the informative first feature.
pub const SLOPE_INIT_W: [f64; 4] = [5e-4, 0.9, 0.9, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mu0: Vec<f64>,
    /// Prior variances, one per weight.
    pub sigma0: Vec<f64>,
    /// Observation noise variance.
    pub eps0: f64,
}

impl GaussianPrior {
    pub fn isotropic(d: usize, mu: f64, sigma: f64, eps0: f64) -> Self {
        Self {
            mu0: vec![mu; d],
            sigma0: vec![sigma; d],
            eps0,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        dim_check(self.mu0.len() == d && self.sigma0.len() == d, || {
            format!(
                "prior has {}/{} entries for {d} weights",
                self.mu0.len(),
                self.sigma0.len()
            )
        })?;
        if self.sigma0.iter().any(|&s| s <= 0.0 || s.is_nan()) || self.eps0 <= 0.0 || self.eps0.is_nan() {
            return Err(Error::InvalidArgument(
                "prior variances and eps0 must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLoss {
    pub data_fit: f64,
    pub complexity: f64,
    pub total: f64,
}

/// Design matrix, regression targets and the class labels they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTask {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Expands a zero-one-on-a-slope dataset into `[x, x², x³, sin(100x)]`
/// features regressed onto `0.3 x`.
pub fn slope_tasks(ds: &SplitDataset) -> Result<(LinearTask, LinearTask)> {
    let task = |x: &Matrix, labels: Vec<usize>| LinearTask {
        x: expand_slope(x),
        y: x.col(0).iter().map(|v| SLOPE * v).collect(),
        labels,
    };
    Ok((
        task(&ds.train_x, ds.train_y.classes()?),
        task(&ds.val_x, ds.val_y.classes()?),
    ))
}

fn check(w: &[f64], prior: &GaussianPrior, x: &Matrix, y: &[f64]) -> Result<()> {
    dim_check(x.cols() == w.len(), || {
        format!("{} features, {} weights", x.cols(), w.len())
    })?;
    dim_check(x.rows() == y.len(), || {
        format!("{} rows, {} targets", x.rows(), y.len())
    })?;
    dim_check(!y.is_empty(), || "empty design".into())?;
    prior.validate(w.len())
}

fn residuals(w: &[f64], x: &Matrix, y: &[f64]) -> Vec<f64> {
    x.row_iter().zip(y).map(|(r, t)| dot(r, w) - t).collect()
}

pub fn lr_loss(w: &[f64], prior: &GaussianPrior, x: &Matrix, y: &[f64]) -> Result<LinearLoss> {
    check(w, prior, x, y)?;
    let r = residuals(w, x, y);
    let mse = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
    let data_fit = mse / prior.eps0;
    let complexity = w
        .iter()
        .zip(&prior.mu0)
        .zip(&prior.sigma0)
        .map(|((wi, mi), si)| (wi - mi).powi(2) / si)
        .sum::<f64>();
    Ok(LinearLoss {
        data_fit,
        complexity,
        total: data_fit + complexity,
    })
}

pub fn lr_grad(w: &[f64], prior: &GaussianPrior, x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    check(w, prior, x, y)?;
    let r = residuals(w, x, y);
    let scale = 2.0 / (r.len() as f64 * prior.eps0);
    let mut g = x.tr_matvec(&r)?;
    for (i, gi) in g.iter_mut().enumerate() {
        *gi = scale * *gi + 2.0 * (w[i] - prior.mu0[i]) / prior.sigma0[i];
    }
    Ok(g)
}

/// Label 1 where `x·w > 0`, else 0 (an exact zero is negative).
pub fn classify(w: &[f64], x: &Matrix) -> Vec<usize> {
    x.row_iter().map(|r| usize::from(dot(r, w) > 0.0)).collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub eps0: f64,
    pub sigma0: Vec<f64>,
    pub mu0: Vec<f64>,
    pub init_w: Vec<f64>,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            eps0: 0.1,
            sigma0: vec![0.5; 4],
            mu0: vec![0.0; 4],
            init_w: SLOPE_INIT_W.to_vec(),
            lr: 1e-2,
            epochs: 3000,
        }
    }
}

impl LinearConfig {
    pub fn prior(&self) -> GaussianPrior {
        GaussianPrior {
            mu0: self.mu0.clone(),
            sigma0: self.sigma0.clone(),
            eps0: self.eps0,
        }
    }
}

/// Full-batch gradient descent. Row `e` holds the state after `e` updates.
pub fn fit_lr(train: &LinearTask, val: &LinearTask, cfg: &LinearConfig) -> Result<(TrainingTrace, Vec<f64>)> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    let prior = cfg.prior();
    let mut w = cfg.init_w.clone();
    let mut trace = TrainingTrace::new("linear", None);
    for epoch in 0..cfg.epochs {
        let loss = lr_loss(&w, &prior, &train.x, &train.y)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: loss.total,
            });
        }
        trace.push(TraceRow {
            epoch,
            train_loss: loss.total,
            train_acc: accuracy(&classify(&w, &train.x), &train.labels),
            val_acc: accuracy(&classify(&w, &val.x), &val.labels),
            data_fit: loss.data_fit,
            complexity: loss.complexity,
        });
        let g = lr_grad(&w, &prior, &train.x, &train.y)?;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= cfg.lr * gi;
        }
    }
    Ok((trace, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::StreamKey;

    fn random_problem(seed: u64, n: usize, d: usize) -> (Vec<f64>, GaussianPrior, Matrix, Vec<f64>) {
        let mut s = StreamKey::new(seed).with("lr").stream();
        let x = Matrix::from_vec(n, d, s.normals(n * d)).unwrap();
        let y = s.normals(n);
        let w = s.normals(d);
        let prior = GaussianPrior {
            mu0: s.normals(d),
            sigma0: (0..d).map(|_| 0.2 + s.uniform()).collect(),
            eps0: 0.05 + s.uniform(),
        };
        (w, prior, x, y)
    }

    #[test]
    fn zero_loss_at_prior_mean_with_exact_fit() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let mu = vec![0.5, -0.25];
        let y = x.matvec(&mu).unwrap();
        let prior = GaussianPrior {
            mu0: mu.clone(),
            sigma0: vec![0.5, 0.5],
            eps0: 0.1,
        };
        let l = lr_loss(&mu, &prior, &x, &y).unwrap();
        assert_eq!(l.total, 0.0);
        assert!(lr_grad(&mu, &prior, &x, &y).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn complexity_of_unit_weight() {
        let x = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let prior = GaussianPrior::isotropic(1, 0.0, 0.5, 1.0);
        let l = lr_loss(&[1.0], &prior, &x, &[0.0]).unwrap();
        assert_eq!(l.complexity, 2.0);
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let (w, prior, x, y) = random_problem(4, 7, 3);
        let mut mse = 0.0;
        for i in 0..7 {
            let mut f = 0.0;
            for j in 0..3 {
                f += x[(i, j)] * w[j];
            }
            mse += (y[i] - f) * (y[i] - f);
        }
        mse /= 7.0;
        let mut c = 0.0;
        for ((wj, m), s) in w.iter().zip(&prior.mu0).zip(&prior.sigma0) {
            c += (wj - m) * (wj - m) / s;
        }
        let l = lr_loss(&w, &prior, &x, &y).unwrap();
        assert!((l.total - (mse / prior.eps0 + c)).abs() < 1e-12 * l.total.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let (w, prior, x, y) = random_problem(seed, 6, 4);
            let g = lr_grad(&w, &prior, &x, &y).unwrap();
            let h = 1e-5;
            for j in 0..4 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (lr_loss(&wp, &prior, &x, &y).unwrap().total - lr_loss(&wm, &prior, &x, &y).unwrap().total)
                    / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1e-8);
                assert!(rel <= 1e-6, "seed {seed} coord {j}: {rel}");
            }
        }
    }

    /// Solves the ridge normal equations `(XᵀX/(Nε₀) + diag(1/σ₀)) w = Xᵀy/(Nε₀) + μ₀/σ₀`.
    fn ridge_optimum(prior: &GaussianPrior, x: &Matrix, y: &[f64]) -> Vec<f64> {
        let n = x.rows() as f64;
        let mut a = x.transpose().matmul(x).unwrap().scale(1.0 / (n * prior.eps0));
        for i in 0..a.rows() {
            a[(i, i)] += 1.0 / prior.sigma0[i];
        }
        let mut b = x.tr_matvec(y).unwrap();
        for ((bi, m), s) in b.iter_mut().zip(&prior.mu0).zip(&prior.sigma0) {
            *bi = *bi / (n * prior.eps0) + m / s;
        }
        let l = crate::linalg::cholesky(&a, 0.0).unwrap();
        crate::linalg::solve_chol(&l, &b).unwrap()
    }

    #[test]
    fn gradient_vanishes_at_ridge_optimum() {
        let (_, prior, x, y) = random_problem(9, 10, 3);
        let w = ridge_optimum(&prior, &x, &y);
        let g = lr_grad(&w, &prior, &x, &y).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-8), "{g:?}");
    }

    fn task(x: Matrix, y: Vec<f64>) -> LinearTask {
        let labels = y.iter().map(|&v| usize::from(v > 0.0)).collect();
        LinearTask { x, y, labels }
    }

    #[test]
    fn descent_converges_to_closed_form() {
        let x = Matrix::column(&[1.0, -2.0, 0.5]);
        let y = vec![0.3, -0.6, 0.15];
        let cfg = LinearConfig {
            eps0: 0.1,
            sigma0: vec![0.5],
            mu0: vec![0.0],
            init_w: vec![2.0],
            lr: 0.02,
            epochs: 2000,
        };
        let t = task(x.clone(), y.clone());
        let (_, w) = fit_lr(&t, &t, &cfg).unwrap();
        let opt = ridge_optimum(&cfg.prior(), &x, &y);
        assert!((w[0] - opt[0]).abs() < 1e-4, "{} vs {}", w[0], opt[0]);
    }

    #[test]
    fn zero_lr_trace_is_constant() {
        let (_, _, x, y) = random_problem(2, 5, 4);
        let t = task(x, y);
        let cfg = LinearConfig {
            lr: 0.0,
            epochs: 20,
            ..LinearConfig::default()
        };
        let (trace, w) = fit_lr(&t, &t, &cfg).unwrap();
        assert_eq!(w, cfg.init_w);
        assert!(trace
            .rows
            .windows(2)
            .all(|p| { p[0].train_loss == p[1].train_loss && p[0].val_acc == p[1].val_acc }));
    }

    #[test]
    fn rows_decompose_and_loss_decreases() {
        let (_, prior, x, y) = random_problem(5, 8, 3);
        let t = task(x, y);
        let cfg = LinearConfig {
            eps0: prior.eps0,
            sigma0: prior.sigma0.clone(),
            mu0: prior.mu0.clone(),
            init_w: vec![1.0, -1.0, 2.0],
            lr: 1e-4,
            epochs: 500,
        };
        let (trace, _) = fit_lr(&t, &t, &cfg).unwrap();
        for r in &trace.rows {
            assert_eq!(r.train_loss, r.data_fit + r.complexity);
        }
        assert!(trace.rows.windows(2).all(|p| p[1].train_loss <= p[0].train_loss));
    }

    #[test]
    fn classify_examples() {
        let w = [1.0, 0.0, 0.0, 0.0];
        let x = expand_slope(&Matrix::column(&[2.0, -2.0, 0.0]));
        assert_eq!(classify(&w, &x), vec![1, 0, 0]);
    }

    #[test]
    fn divergence_is_reported() {
        let x = Matrix::column(&[10.0, -10.0]);
        let t = task(x, vec![1.0, -1.0]);
        let cfg = LinearConfig {
            sigma0: vec![0.5],
            mu0: vec![0.0],
            init_w: vec![1.0],
            lr: 10.0,
            epochs: 2000,
            ..LinearConfig::default()
        };
        assert!(matches!(fit_lr(&t, &t, &cfg), Err(Error::Divergence { .. })));
    }
}
