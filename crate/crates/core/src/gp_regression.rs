//! Exact GP regression with an ARD squared-exponential kernel.
//!
//! Hyperparameters live in log space. `K_θ = K_f + σ_n² I`, and every
//! factorization adds [`DEFAULT_JITTER`] on top.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::error::{dim_check, Error, Result};
use crate::harness::{TraceRow, TrainingTrace};
use crate::linalg::{cholesky, dot, logdet, solve_chol, solve_lower, LowerTriangular, Matrix, DEFAULT_JITTER};
use crate::optim::{Adam, AdamConfig};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelHyperparams {
    /// `ln α`, where `α = k(x, x)`.
    pub log_amplitude: f64,
    pub log_lengthscales: Vec<f64>,
    /// `ln σ_n`. Ignored by the classifier.
    pub log_noise: f64,
}

impl KernelHyperparams {
    pub fn new(amplitude: f64, lengthscales: &[f64], noise: f64) -> Self {
        Self {
            log_amplitude: amplitude.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_noise: noise.ln(),
        }
    }

    /// One shared lengthscale across `dim` inputs.
    pub fn isotropic(amplitude: f64, lengthscale: f64, dim: usize, noise: f64) -> Self {
        Self::new(amplitude, &vec![lengthscale; dim], noise)
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn amplitude(&self) -> f64 {
        self.log_amplitude.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    /// Geometric mean of the lengthscales.
    pub fn mean_lengthscale(&self) -> f64 {
        (self.log_lengthscales.iter().sum::<f64>() / self.dim().max(1) as f64).exp()
    }

    pub fn is_finite(&self) -> bool {
        self.log_amplitude.is_finite()
            && self.log_noise.is_finite()
            && self.log_lengthscales.iter().all(|v| v.is_finite())
    }

    /// `[ln α, ln ℓ_1 .. ln ℓ_d, ln σ_n]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.log_amplitude);
        v.extend_from_slice(&self.log_lengthscales);
        v.push(self.log_noise);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < 3 {
            return Err(Error::DimensionMismatch(format!(
                "hyperparameter vector of length {}",
                v.len()
            )));
        }
        Ok(Self {
            log_amplitude: v[0],
            log_lengthscales: v[1..v.len() - 1].to_vec(),
            log_noise: v[v.len() - 1],
        })
    }
}

fn check_dims(x: &Matrix, hyp: &KernelHyperparams) -> Result<()> {
    dim_check(x.cols() == hyp.dim(), || {
        format!(
            "inputs have {} columns, kernel has {} lengthscales",
            x.cols(),
            hyp.dim()
        )
    })
}

/// `K[i][j] = α exp(-½ Σ_d (x1_d - x2_d)² / ℓ_d²)`.
pub fn rbf_kernel(x1: &Matrix, x2: &Matrix, hyp: &KernelHyperparams) -> Result<Matrix> {
    check_dims(x1, hyp)?;
    check_dims(x2, hyp)?;
    let amp = hyp.amplitude();
    let inv_ls: Vec<f64> = hyp.log_lengthscales.iter().map(|l| (-l).exp()).collect();
    let mut k = Matrix::zeros(x1.rows(), x2.rows());
    for i in 0..x1.rows() {
        let a = x1.row(i);
        for j in 0..x2.rows() {
            let b = x2.row(j);
            let mut r2 = 0.0;
            for d in 0..inv_ls.len() {
                let t = (a[d] - b[d]) * inv_ls[d];
                r2 += t * t;
            }
            k[(i, j)] = amp * (-0.5 * r2).exp();
        }
    }
    Ok(k)
}

/// Symmetric kernel matrix over one input set, exact on the diagonal.
pub fn rbf_gram(x: &Matrix, hyp: &KernelHyperparams) -> Result<Matrix> {
    let mut k = rbf_kernel(x, x, hyp)?;
    let n = x.rows();
    for i in 0..n {
        k[(i, i)] = hyp.amplitude();
        for j in 0..i {
            k[(j, i)] = k[(i, j)];
        }
    }
    Ok(k)
}

/// Cholesky factor of `K_f + σ_n² I`.
fn noisy_factor(x: &Matrix, hyp: &KernelHyperparams) -> Result<(Matrix, LowerTriangular)> {
    let mut k = rbf_gram(x, hyp)?;
    k.add_diag(hyp.noise().powi(2));
    let l = cholesky(&k, DEFAULT_JITTER)?;
    Ok((k, l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmlBreakdown {
    /// `½ yᵀ K_θ⁻¹ y`.
    pub data_fit: f64,
    /// `½ ln |K_θ|`.
    pub complexity: f64,
    /// `(n/2) ln 2π`.
    pub normalization: f64,
    /// `ln p(y | X, θ)`.
    pub total: f64,
}

impl LmlBreakdown {
    fn from_terms(data_fit: f64, complexity: f64, normalization: f64) -> Self {
        Self {
            data_fit,
            complexity,
            normalization,
            total: -(data_fit + complexity + normalization),
        }
    }

    /// Zero up to the sign bit, by construction of `total`.
    pub fn residual(&self) -> f64 {
        self.total + (self.data_fit + self.complexity + self.normalization)
    }
}

pub fn lml(x: &Matrix, y: &[f64], hyp: &KernelHyperparams) -> Result<LmlBreakdown> {
    lml_with_jitter(x, y, hyp, DEFAULT_JITTER)
}

/// [`lml`] with an explicit starting jitter; zero factors `K_θ` as is.
pub fn lml_with_jitter(x: &Matrix, y: &[f64], hyp: &KernelHyperparams, jitter: f64) -> Result<LmlBreakdown> {
    dim_check(x.rows() == y.len(), || {
        format!("{} inputs, {} targets", x.rows(), y.len())
    })?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("lml needs at least one observation".into()));
    }
    let mut k = rbf_gram(x, hyp)?;
    k.add_diag(hyp.noise().powi(2));
    let l = cholesky(&k, jitter)?;
    let z = solve_lower(&l, y)?;
    Ok(LmlBreakdown::from_terms(
        0.5 * dot(&z, &z),
        0.5 * logdet(&l),
        y.len() as f64 * HALF_LN_2PI,
    ))
}

/// Gradient of `lml(..).total` in the layout of [`KernelHyperparams::to_vec`].
pub fn lml_grad(x: &Matrix, y: &[f64], hyp: &KernelHyperparams) -> Result<Vec<f64>> {
    Ok(lml_with_grad(x, y, hyp)?.1)
}

/// `∂L/∂θ = ½ tr((a aᵀ - K⁻¹) ∂K/∂θ)` with `a = K⁻¹ y`.
pub fn lml_with_grad(x: &Matrix, y: &[f64], hyp: &KernelHyperparams) -> Result<(LmlBreakdown, Vec<f64>)> {
    dim_check(x.rows() == y.len(), || {
        format!("{} inputs, {} targets", x.rows(), y.len())
    })?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("lml needs at least one observation".into()));
    }
    let n = y.len();
    let d = hyp.dim();
    let kf = rbf_gram(x, hyp)?;
    let mut k = kf.clone();
    let noise_var = hyp.noise().powi(2);
    k.add_diag(noise_var);
    let l = cholesky(&k, DEFAULT_JITTER)?;
    let z = solve_lower(&l, y)?;
    let a = solve_chol(&l, y)?;
    let kinv = crate::linalg::chol_inverse(&l);
    let breakdown = LmlBreakdown::from_terms(0.5 * dot(&z, &z), 0.5 * logdet(&l), n as f64 * HALF_LN_2PI);

    let inv_ls2: Vec<f64> = hyp.log_lengthscales.iter().map(|v| (-2.0 * v).exp()).collect();
    let mut g = vec![0.0; d + 2];
    for i in 0..n {
        // diagonal terms: distance zero, so only amplitude and noise contribute
        let wii = a[i] * a[i] - kinv[(i, i)];
        g[0] += 0.5 * wii * kf[(i, i)];
        g[d + 1] += 0.5 * wii * 2.0 * noise_var;
        let xi = x.row(i);
        for j in 0..i {
            // off-diagonal pairs counted twice
            let w = a[i] * a[j] - kinv[(i, j)];
            let kij = kf[(i, j)];
            g[0] += w * kij;
            let xj = x.row(j);
            for dd in 0..d {
                let diff = xi[dd] - xj[dd];
                g[1 + dd] += w * kij * diff * diff * inv_ls2[dd];
            }
        }
    }
    Ok((breakdown, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Includes `σ_n²`; clamped at zero.
    pub variance: Vec<f64>,
}

pub fn predict(x: &Matrix, y: &[f64], hyp: &KernelHyperparams, xstar: &Matrix) -> Result<Prediction> {
    dim_check(x.rows() == y.len(), || {
        format!("{} inputs, {} targets", x.rows(), y.len())
    })?;
    let (_, l) = noisy_factor(x, hyp)?;
    let a = solve_chol(&l, y)?;
    let ks = rbf_kernel(x, xstar, hyp)?;
    let kst = ks.transpose();
    let noise_var = hyp.noise().powi(2);
    let amp = hyp.amplitude();
    let mut mean = Vec::with_capacity(xstar.rows());
    let mut variance = Vec::with_capacity(xstar.rows());
    for s in 0..xstar.rows() {
        let col = kst.row(s);
        mean.push(dot(col, &a));
        let v = solve_lower(&l, col)?;
        variance.push((amp - dot(&v, &v) + noise_var).max(0.0));
    }
    Ok(Prediction { mean, variance })
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub optimize_noise: bool,
}

impl Default for GprConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 1500,
            optimize_noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprStep {
    pub epoch: usize,
    pub hyp: KernelHyperparams,
    pub lml: LmlBreakdown,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprFit {
    /// Accuracy columns hold `max(0, 1 - MSE / Var(y))` for the split.
    pub trace: TrainingTrace,
    pub hyp: KernelHyperparams,
    pub trajectory: Vec<GprStep>,
}

fn variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

fn explained(mse: f64, var: f64) -> f64 {
    if var > 0.0 {
        (1.0 - mse / var).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Adam ascent on the log marginal likelihood. Row `e` holds the state
/// before update `e`.
pub fn fit_gpr(ds: &SplitDataset, hyp0: &KernelHyperparams, cfg: &GprConfig) -> Result<GprFit> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    let y = ds.train_y.values();
    let yv = ds.val_y.values();
    let (var_train, var_val) = (variance(&y), variance(&yv));
    let mut theta = hyp0.to_vec();
    let noise_idx = theta.len() - 1;
    let mut adam = Adam::new(cfg.adam, theta.len());
    let mut trace = TrainingTrace::new("gpr", Some(ds.meta.key.clone()));
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let hyp = KernelHyperparams::from_slice(&theta)?;
        let (b, g) = lml_with_grad(&ds.train_x, &y, &hyp)?;
        if !b.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: -b.total });
        }
        let train_mse = mse(&predict(&ds.train_x, &y, &hyp, &ds.train_x)?.mean, &y);
        let val_mse = mse(&predict(&ds.train_x, &y, &hyp, &ds.val_x)?.mean, &yv);
        trace.push(TraceRow {
            epoch,
            train_loss: -b.total,
            train_acc: explained(train_mse, var_train),
            val_acc: explained(val_mse, var_val),
            data_fit: b.data_fit,
            complexity: b.complexity,
        });
        trajectory.push(GprStep {
            epoch,
            hyp,
            lml: b,
            train_mse,
            val_mse,
        });
        let mut ascent: Vec<f64> = g.iter().map(|v| -v).collect();
        if !cfg.optimize_noise {
            ascent[noise_idx] = 0.0;
        }
        adam.step(&mut theta, &ascent);
    }
    Ok(GprFit {
        trace,
        hyp: KernelHyperparams::from_slice(&theta)?,
        trajectory,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_lengthscale: usize,
    pub n_amplitude: usize,
    pub lengthscale_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    /// Fixed `σ_n` for regression surfaces.
    pub noise: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_lengthscale: 60,
            n_amplitude: 60,
            lengthscale_range: (1e-2, 1e1),
            amplitude_range: (1e-2, 1e1),
            noise: 0.1,
        }
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

impl GridConfig {
    pub fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        (
            logspace(self.lengthscale_range.0, self.lengthscale_range.1, self.n_lengthscale),
            logspace(self.amplitude_range.0, self.amplitude_range.1, self.n_amplitude),
        )
    }

    fn validate(&self) -> Result<()> {
        let ok = |r: (f64, f64)| r.0 > 0.0 && r.1 >= r.0 && r.1.is_finite();
        if self.n_lengthscale == 0 || self.n_amplitude == 0 || !ok(self.lengthscale_range) || !ok(self.amplitude_range)
        {
            return Err(Error::InvalidArgument(format!("bad landscape grid {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub lengthscale: f64,
    pub amplitude: f64,
    pub data_fit: f64,
    pub complexity: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub lengthscale: f64,
    pub amplitude: f64,
    pub data_fit: f64,
    pub complexity: f64,
    pub total: f64,
    /// Validation MSE for regression, `1 - accuracy` for classification.
    pub val_error: f64,
    pub train_error: f64,
    pub in_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub label: String,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeScan {
    pub axis_lengthscale: Vec<f64>,
    pub axis_amplitude: Vec<f64>,
    /// Lengthscale-major: cell `(i, j)` sits at `i * n_amplitude + j`.
    pub cells: Vec<SurfaceCell>,
    pub trajectories: Vec<Trajectory>,
}

impl LandscapeScan {
    pub fn cell(&self, i: usize, j: usize) -> &SurfaceCell {
        &self.cells[i * self.axis_amplitude.len() + j]
    }

    pub(crate) fn in_bounds(&self, ls: f64, amp: f64) -> bool {
        let within = |v: f64, axis: &[f64]| v >= axis[0] && v <= axis[axis.len() - 1];
        within(ls, &self.axis_lengthscale) && within(amp, &self.axis_amplitude)
    }
}

/// Evaluates `f` on every grid cell in parallel; output order is fixed.
pub(crate) fn scan_grid<F>(grid: &GridConfig, f: F) -> Result<LandscapeScan>
where
    F: Fn(f64, f64) -> Result<(f64, f64, f64)> + Sync,
{
    grid.validate()?;
    let (ls_axis, amp_axis) = grid.axes();
    let coords: Vec<(f64, f64)> = ls_axis
        .iter()
        .flat_map(|&l| amp_axis.iter().map(move |&a| (l, a)))
        .collect();
    let cells = coords
        .par_iter()
        .map(|&(lengthscale, amplitude)| {
            let (data_fit, complexity, total) = f(lengthscale, amplitude)?;
            Ok(SurfaceCell {
                lengthscale,
                amplitude,
                data_fit,
                complexity,
                total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeScan {
        axis_lengthscale: ls_axis,
        axis_amplitude: amp_axis,
        cells,
        trajectories: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledInit {
    pub label: String,
    pub lengthscale: f64,
    pub amplitude: f64,
}

impl LabeledInit {
    pub fn new(label: &str, lengthscale: f64, amplitude: f64) -> Self {
        Self {
            label: label.into(),
            lengthscale,
            amplitude,
        }
    }
}

/// Regression landscape starts: A high error and low complexity, B low error
/// and high complexity, C low on both.
pub fn regression_presets() -> Vec<LabeledInit> {
    vec![
        LabeledInit::new("A", 3.0, 0.01),
        LabeledInit::new("B", 0.05, 2.0),
        LabeledInit::new("C", 1.0, 1.0),
    ]
}

/// LML surfaces over shared lengthscale and amplitude with `σ_n` fixed,
/// plus fixed-noise training trajectories from each init.
pub fn landscape_scan(
    ds: &SplitDataset,
    grid: &GridConfig,
    inits: &[LabeledInit],
    cfg: &GprConfig,
) -> Result<LandscapeScan> {
    let y = ds.train_y.values();
    let d = ds.dim();
    let mut scan = scan_grid(grid, |ls, amp| {
        let b = lml(&ds.train_x, &y, &KernelHyperparams::isotropic(amp, ls, d, grid.noise))?;
        Ok((b.data_fit, b.complexity, b.total))
    })?;
    let fixed = GprConfig {
        optimize_noise: false,
        ..*cfg
    };
    let fits = inits
        .par_iter()
        .map(|init| {
            fit_gpr(
                ds,
                &KernelHyperparams::isotropic(init.amplitude, init.lengthscale, d, grid.noise),
                &fixed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    for (init, fit) in inits.iter().zip(fits) {
        let points = fit
            .trajectory
            .iter()
            .map(|s| {
                let (ls, amp) = (s.hyp.mean_lengthscale(), s.hyp.amplitude());
                TrajectoryPoint {
                    step: s.epoch,
                    lengthscale: ls,
                    amplitude: amp,
                    data_fit: s.lml.data_fit,
                    complexity: s.lml.complexity,
                    total: s.lml.total,
                    val_error: s.val_mse,
                    train_error: s.train_mse,
                    in_bounds: scan.in_bounds(ls, amp),
                }
            })
            .collect();
        scan.trajectories.push(Trajectory {
            label: init.label.clone(),
            points,
        });
    }
    Ok(scan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayConfig {
    /// Train error counts as stable once it stays within this fraction of its final value.
    pub stable_tol: f64,
    /// Required fractional drop of validation error from its initial value.
    pub improvement: f64,
    /// Minimum epochs between stabilization and the validation drop.
    pub min_delay: usize,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            stable_tol: 0.1,
            improvement: 0.5,
            min_delay: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayedImprovement {
    /// First epoch from which train error stays within tolerance of its final value.
    pub stable_epoch: usize,
    /// First epoch where validation error is at most `(1 - improvement)` of its initial value.
    pub improve_epoch: Option<usize>,
    pub delayed: bool,
}

/// Detects a validation drop that arrives well after training error has settled.
pub fn delayed_improvement(train_err: &[f64], val_err: &[f64], cfg: &DelayConfig) -> Option<DelayedImprovement> {
    if train_err.is_empty() || train_err.len() != val_err.len() {
        return None;
    }
    let fin = *train_err.last()?;
    let band = cfg.stable_tol * fin.abs();
    let stable_epoch = train_err
        .iter()
        .rposition(|v| (v - fin).abs() > band)
        .map_or(0, |i| i + 1);
    let target = (1.0 - cfg.improvement) * val_err[0];
    let improve_epoch = val_err.iter().position(|&v| v <= target);
    let delayed = improve_epoch.is_some_and(|e| e >= stable_epoch + cfg.min_delay);
    Some(DelayedImprovement {
        stable_epoch,
        improve_epoch,
        delayed,
    })
}

impl Trajectory {
    pub fn delayed_improvement(&self, cfg: &DelayConfig) -> Option<DelayedImprovement> {
        let tr: Vec<f64> = self.points.iter().map(|p| p.train_error).collect();
        let va: Vec<f64> = self.points.iter().map(|p| p.val_error).collect();
        delayed_improvement(&tr, &va, cfg)
    }
}
