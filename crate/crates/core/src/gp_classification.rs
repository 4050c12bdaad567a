//! Variational and Laplace GP binary classification with a probit link.
//!
//! The variational posterior `q(f) = N(μ, L Lᵀ)` is kept in raw form and its
//! KL is taken against the prior `N(0, K_f)`, not a whitened one. Training
//! factors `K_f` with the model's own jitter ([`GPC_JITTER`] by default).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{binary01, SplitDataset};
use crate::error::{dim_check, Error, Result};
use crate::gp_regression::{
    rbf_gram, rbf_kernel, scan_grid, GridConfig, KernelHyperparams, LabeledInit, LandscapeScan, Trajectory,
    TrajectoryPoint,
};
use crate::harness::{TraceRow, TrainingTrace};
use crate::linalg::{
    chol_inverse, cholesky, dot, logdet, solve_chol, solve_chol_mat, solve_lower, solve_lower_mat, LowerTriangular,
    Matrix,
};
use crate::optim::{Adam, AdamConfig};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `ln Φ` and the inverse Mills ratio switch to the
/// continued fraction for the Mills ratio.
const TAIL_SWITCH: f64 = -5.0;

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Mills ratio `R(t) = (1 - Φ(t)) / φ(t)` for `t ≥ 5`, by backward
/// evaluation of `1 / (t + 1 / (t + 2 / (t + 3 / ...)))`.
fn mills_ratio_tail(t: f64) -> f64 {
    let mut acc = t;
    for k in (1..=200).rev() {
        acc = t + k as f64 / acc;
    }
    1.0 / acc
}

/// `ln Φ(z)`, accurate in both tails.
pub fn ln_norm_cdf(z: f64) -> f64 {
    if z < TAIL_SWITCH {
        -0.5 * z * z - LN_SQRT_2PI + mills_ratio_tail(-z).ln()
    } else if z > 0.0 {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else {
        norm_cdf(z).ln()
    }
}

/// `φ(z) / Φ(z)`, the derivative of `ln Φ`.
pub fn inv_mills(z: f64) -> f64 {
    if z < TAIL_SWITCH {
        1.0 / mills_ratio_tail(-z)
    } else {
        norm_pdf(z) / norm_cdf(z)
    }
}

/// Probit log-likelihood of `y ∈ {0, 1}` with its first two derivatives in `f`.
fn probit_terms(y: f64, f: f64) -> (f64, f64, f64) {
    let s = 2.0 * y - 1.0;
    let z = s * f;
    let lam = inv_mills(z);
    (ln_norm_cdf(z), s * lam, -lam * (z + lam))
}

/// Gauss–Hermite rule for `∫ g(x) e^{-x²} dx`: nodes descending, weights summing to `√π`.
pub fn gauss_hermite(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be at least 1".into()));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let n = order;
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NewtonNonConvergence { iterations: 100 });
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok((x, w))
}

/// Gauss–Hermite rule rescaled for expectations under `N(m, v)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    /// Weights divided by `√π`, so they sum to one.
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        let (nodes, w) = gauss_hermite(order)?;
        let sp = PI.sqrt();
        Ok(Self {
            nodes,
            weights: w.iter().map(|v| v / sp).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[g(f)]` for `f ~ N(m, v)`.
    pub fn expect(&self, m: f64, v: f64, g: impl Fn(f64) -> f64) -> f64 {
        let s = (2.0 * v).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * g(m + s * x))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub mu: Vec<f64>,
    pub chol_cov: LowerTriangular,
}

impl VariationalPosterior {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// `q` equal to the prior `N(0, K)`.
    pub fn prior(k_chol: &LowerTriangular) -> Self {
        Self {
            mu: vec![0.0; k_chol.n()],
            chol_cov: k_chol.clone(),
        }
    }

    /// Marginal variances `Σ_ii`.
    pub fn marginal_variances(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| dot(self.chol_cov.row(i), self.chol_cov.row(i)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GpcModel {
    /// `log_noise` is unused.
    pub hyp: KernelHyperparams,
    pub q: VariationalPosterior,
    pub train_x: Matrix,
    /// Starting diagonal jitter for factorizing `K_f`.
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub expected_loglik: f64,
    pub kl: f64,
    pub beta: f64,
    /// `expected_loglik - β kl`.
    pub elbo: f64,
    /// `-expected_loglik`.
    pub data_fit: f64,
    /// `kl`.
    pub complexity: f64,
}

impl ElboBreakdown {
    fn new(expected_loglik: f64, kl: f64, beta: f64) -> Self {
        Self {
            expected_loglik,
            kl,
            beta,
            elbo: expected_loglik - beta * kl,
            data_fit: -expected_loglik,
            complexity: kl,
        }
    }

    /// Exactly zero: rounding is symmetric, so `-E + βK` is the negation of `E - βK`.
    pub fn residual(&self) -> f64 {
        self.elbo + (self.data_fit + self.beta * self.complexity)
    }
}

/// `KL(N(μ_q, L_q L_qᵀ) ‖ N(0, L_p L_pᵀ))`.
pub fn kl_gaussians(mu_q: &[f64], chol_q: &LowerTriangular, chol_p: &LowerTriangular) -> Result<f64> {
    let n = mu_q.len();
    dim_check(chol_q.n() == n && chol_p.n() == n, || {
        format!("kl over {n} means with factors {} and {}", chol_q.n(), chol_p.n())
    })?;
    let a = solve_lower_mat(chol_p, &chol_q.to_matrix())?;
    let trace: f64 = a.data().iter().map(|v| v * v).sum();
    let z = solve_lower(chol_p, mu_q)?;
    Ok(0.5 * (trace + dot(&z, &z) - n as f64 + logdet(chol_p) - logdet(chol_q)))
}

fn prior_factor(x: &Matrix, hyp: &KernelHyperparams, jitter: f64) -> Result<(Matrix, LowerTriangular)> {
    let kf = rbf_gram(x, hyp)?;
    let l = cholesky(&kf, jitter)?;
    Ok((kf, l))
}

fn check_targets(model: &GpcModel, y01: &[f64]) -> Result<()> {
    dim_check(model.train_x.rows() == y01.len() && model.q.n() == y01.len(), || {
        format!(
            "{} inputs, {} targets, q of size {}",
            model.train_x.rows(),
            y01.len(),
            model.q.n()
        )
    })?;
    if let Some(v) = y01.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("binary target {v} is not 0 or 1")));
    }
    Ok(())
}

pub fn elbo(model: &GpcModel, y01: &[f64], beta: f64, quad: &GaussHermite) -> Result<ElboBreakdown> {
    check_targets(model, y01)?;
    let (_, kl_chol) = prior_factor(&model.train_x, &model.hyp, model.jitter)?;
    let var = model.q.marginal_variances();
    let e: f64 = y01
        .iter()
        .zip(&model.q.mu)
        .zip(&var)
        .map(|((&y, &m), &v)| quad.expect(m, v, |f| probit_terms(y, f).0))
        .sum();
    let kl = kl_gaussians(&model.q.mu, &model.q.chol_cov, &kl_chol)?;
    Ok(ElboBreakdown::new(e, kl, beta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboGrad {
    pub mu: Vec<f64>,
    /// Packed row-major lower triangle, matching [`LowerTriangular::packed`].
    pub chol_cov: Vec<f64>,
    /// `[∂/∂ ln α, ∂/∂ ln ℓ_1 ..]`.
    pub hyp: Vec<f64>,
}

/// Exact gradient of the quadrature-discretized ELBO.
pub fn elbo_grad(model: &GpcModel, y01: &[f64], beta: f64, quad: &GaussHermite) -> Result<(ElboBreakdown, ElboGrad)> {
    check_targets(model, y01)?;
    let n = y01.len();
    let d = model.hyp.dim();
    let (kf, lk) = prior_factor(&model.train_x, &model.hyp, model.jitter)?;
    let lq = &model.q.chol_cov;
    let mu = &model.q.mu;
    let var = model.q.marginal_variances();

    let mut e = 0.0;
    let mut de_dmu = vec![0.0; n];
    let mut de_dvar = vec![0.0; n];
    for i in 0..n {
        let s = (2.0 * var[i]).sqrt();
        for (x, w) in quad.nodes.iter().zip(&quad.weights) {
            let (lp, d1, _) = probit_terms(y01[i], mu[i] + s * x);
            e += w * lp;
            de_dmu[i] += w * d1;
            de_dvar[i] += w * d1 * x / s;
        }
    }
    let kl = kl_gaussians(mu, lq, &lk)?;
    let breakdown = ElboBreakdown::new(e, kl, beta);

    // KL pieces: a = K⁻¹μ, B = K⁻¹L
    let a = solve_chol(&lk, mu)?;
    let b = solve_chol_mat(&lk, &lq.to_matrix())?;
    let mut g_mu = vec![0.0; n];
    for i in 0..n {
        g_mu[i] = de_dmu[i] - beta * a[i];
    }
    let mut g_l = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            let mut dkl = b[(i, j)];
            if i == j {
                dkl -= 1.0 / lq.get(i, i);
            }
            g_l.push(de_dvar[i] * 2.0 * lq.get(i, j) - beta * dkl);
        }
    }

    // ∂KL/∂K = ½ (K⁻¹ - B Bᵀ - a aᵀ)
    let mut g_h = vec![0.0; d + 1];
    if beta != 0.0 {
        let kinv = chol_inverse(&lk);
        let bbt = b.matmul_t(&b)?;
        let inv_ls2: Vec<f64> = model.hyp.log_lengthscales.iter().map(|v| (-2.0 * v).exp()).collect();
        let x = &model.train_x;
        for i in 0..n {
            let gii = 0.5 * (kinv[(i, i)] - bbt[(i, i)] - a[i] * a[i]);
            g_h[0] += gii * kf[(i, i)];
            for j in 0..i {
                let gij = kinv[(i, j)] - bbt[(i, j)] - a[i] * a[j];
                let kij = kf[(i, j)];
                g_h[0] += gij * kij;
                let (xi, xj) = (x.row(i), x.row(j));
                for dd in 0..d {
                    let diff = xi[dd] - xj[dd];
                    g_h[1 + dd] += gij * kij * diff * diff * inv_ls2[dd];
                }
            }
        }
        for g in &mut g_h {
            *g *= -beta;
        }
    }
    Ok((
        breakdown,
        ElboGrad {
            mu: g_mu,
            chol_cov: g_l,
            hyp: g_h,
        },
    ))
}

/// Latent predictive `q(f*) = N(m*, v*)` at `xstar`.
pub fn predict_latent(model: &GpcModel, xstar: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, lk) = prior_factor(&model.train_x, &model.hyp, model.jitter)?;
    let ks = rbf_kernel(&model.train_x, xstar, &model.hyp)?;
    let a = solve_chol(&lk, &model.q.mu)?;
    let mean = ks.tr_matvec(&a)?;
    // A = K⁻¹K*; v* = k** - colsum(K* ∘ A) + ‖Lᵀ A‖² per column
    let am = solve_chol_mat(&lk, &ks)?;
    let lt_a = model.q.chol_cov.to_matrix().transpose().matmul(&am)?;
    let amp = model.hyp.amplitude();
    let var = (0..xstar.rows())
        .map(|s| {
            let mut prior_red = 0.0;
            let mut post = 0.0;
            for i in 0..ks.rows() {
                prior_red += ks[(i, s)] * am[(i, s)];
                post += lt_a[(i, s)] * lt_a[(i, s)];
            }
            (amp - prior_red + post).max(0.0)
        })
        .collect();
    Ok((mean, var))
}

/// `P(y* = 1) = Φ(m* / √(1 + v*))`.
pub fn predict_proba(model: &GpcModel, xstar: &Matrix) -> Result<Vec<f64>> {
    let (m, v) = predict_latent(model, xstar)?;
    Ok(m.iter().zip(&v).map(|(m, v)| norm_cdf(m / (1.0 + v).sqrt())).collect())
}

/// `P(y* = 1)` by quadrature of `Φ` against `q(f*)`.
pub fn predict_proba_quadrature(model: &GpcModel, xstar: &Matrix, quad: &GaussHermite) -> Result<Vec<f64>> {
    let (m, v) = predict_latent(model, xstar)?;
    Ok(m.iter().zip(&v).map(|(&m, &v)| quad.expect(m, v, norm_cdf)).collect())
}

/// Accuracy of `P(y* = 1) ≥ ½`, which under the probit link is `m* ≥ 0`.
fn latent_accuracy(model: &GpcModel, lk: &LowerTriangular, xstar: &Matrix, y01: &[f64]) -> Result<f64> {
    let ks = rbf_kernel(&model.train_x, xstar, &model.hyp)?;
    let a = solve_chol(lk, &model.q.mu)?;
    let m = ks.tr_matvec(&a)?;
    let hits = m.iter().zip(y01).filter(|(&m, &y)| (m >= 0.0) == (y == 1.0)).count();
    Ok(hits as f64 / y01.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpcConfig {
    pub beta: f64,
    pub quad_order: usize,
    pub lr: f64,
    pub epochs: usize,
    pub init_amplitude: f64,
    pub init_lengthscale: f64,
    /// Absolute variance added to the diagonal of `K_f` during training.
    /// Larger than the linear-algebra default because the ELBO's `K_f⁻¹`
    /// directions make Adam oscillate when the Gram matrix is near singular.
    pub jitter: f64,
}

/// Training jitter default for [`GpcConfig`].
pub const GPC_JITTER: f64 = 1e-3;

impl Default for GpcConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            quad_order: 20,
            lr: 1e-2,
            epochs: 1500,
            init_amplitude: 1.0,
            init_lengthscale: 1.0,
            jitter: GPC_JITTER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpcStep {
    pub epoch: usize,
    pub hyp: KernelHyperparams,
    pub elbo: ElboBreakdown,
}

#[derive(Debug, Clone)]
pub struct GpcFit {
    pub trace: TrainingTrace,
    pub model: GpcModel,
    pub steps: Vec<GpcStep>,
}

/// Adam parameter layout: `[μ, packed L with log diagonal, ln α, ln ℓ]`.
struct Packing {
    n: usize,
    d: usize,
}

impl Packing {
    fn pack(&self, model: &GpcModel) -> Vec<f64> {
        let mut v = model.q.mu.clone();
        for i in 0..self.n {
            for j in 0..=i {
                let l = model.q.chol_cov.get(i, j);
                v.push(if i == j { l.ln() } else { l });
            }
        }
        v.push(model.hyp.log_amplitude);
        v.extend_from_slice(&model.hyp.log_lengthscales);
        v
    }

    fn unpack(&self, v: &[f64], model: &mut GpcModel) -> Result<()> {
        let n = self.n;
        let m = n * (n + 1) / 2;
        model.q.mu.copy_from_slice(&v[..n]);
        let mut packed = v[n..n + m].to_vec();
        for i in 0..n {
            let k = i * (i + 1) / 2 + i;
            packed[k] = packed[k].exp();
        }
        model.q.chol_cov = LowerTriangular::from_packed(n, &packed)?;
        model.hyp.log_amplitude = v[n + m];
        model
            .hyp
            .log_lengthscales
            .copy_from_slice(&v[n + m + 1..n + m + 1 + self.d]);
        Ok(())
    }

    /// Ascent direction in packed coordinates, negated for Adam.
    fn descent(&self, g: &ElboGrad, model: &GpcModel) -> Vec<f64> {
        let mut v: Vec<f64> = g.mu.iter().map(|x| -x).collect();
        let mut k = 0;
        for i in 0..self.n {
            for j in 0..=i {
                let gl = g.chol_cov[k];
                // chain rule through L_ii = exp(θ)
                v.push(if i == j { -gl * model.q.chol_cov.get(i, i) } else { -gl });
                k += 1;
            }
        }
        v.extend(g.hyp.iter().map(|x| -x));
        v
    }
}

/// Joint Adam ascent on the ELBO over `q` and the kernel hyperparameters,
/// starting from `q` equal to the prior. Row `e` holds the state before update `e`.
pub fn fit_gpc(ds: &SplitDataset, cfg: &GpcConfig) -> Result<GpcFit> {
    fit_gpc_from(
        ds,
        cfg,
        &KernelHyperparams::isotropic(cfg.init_amplitude, cfg.init_lengthscale, ds.dim(), 1.0),
    )
}

pub fn fit_gpc_from(ds: &SplitDataset, cfg: &GpcConfig, hyp0: &KernelHyperparams) -> Result<GpcFit> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    dim_check(hyp0.dim() == ds.dim(), || {
        format!("{} lengthscales for {} inputs", hyp0.dim(), ds.dim())
    })?;
    let y = binary01(&ds.train_y)?;
    let yv = binary01(&ds.val_y)?;
    let quad = GaussHermite::new(cfg.quad_order)?;
    let (_, lk0) = prior_factor(&ds.train_x, hyp0, cfg.jitter)?;
    let mut model = GpcModel {
        hyp: hyp0.clone(),
        q: VariationalPosterior::prior(&lk0),
        train_x: ds.train_x.clone(),
        jitter: cfg.jitter,
    };
    let packing = Packing {
        n: y.len(),
        d: hyp0.dim(),
    };
    let mut theta = packing.pack(&model);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        theta.len(),
    );
    let mut trace = TrainingTrace::new("gpc", Some(ds.meta.key.clone()));
    let mut steps = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        packing.unpack(&theta, &mut model)?;
        let (b, g) = elbo_grad(&model, &y, cfg.beta, &quad)?;
        if !b.elbo.is_finite() {
            return Err(Error::Divergence { epoch, loss: -b.elbo });
        }
        let (_, lk) = prior_factor(&model.train_x, &model.hyp, model.jitter)?;
        trace.push(TraceRow {
            epoch,
            train_loss: -b.elbo,
            train_acc: latent_accuracy(&model, &lk, &ds.train_x, &y)?,
            val_acc: latent_accuracy(&model, &lk, &ds.val_x, &yv)?,
            data_fit: b.data_fit,
            complexity: b.complexity,
        });
        steps.push(GpcStep {
            epoch,
            hyp: model.hyp.clone(),
            elbo: b,
        });
        let desc = packing.descent(&g, &model);
        adam.step(&mut theta, &desc);
    }
    packing.unpack(&theta, &mut model)?;
    Ok(GpcFit { trace, model, steps })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    /// `y ∈ {0, 1}`, `p(y = 1 | f) = Φ(f)`.
    Probit,
    /// `y ~ N(f, variance)`.
    Gaussian { variance: f64 },
}

impl Likelihood {
    /// `(ln p(y|f), ∂/∂f, W = -∂²/∂f²)`.
    fn terms(self, y: f64, f: f64) -> (f64, f64, f64) {
        match self {
            Likelihood::Probit => {
                let (lp, d1, d2) = probit_terms(y, f);
                (lp, d1, -d2)
            }
            Likelihood::Gaussian { variance } => {
                let r = y - f;
                (
                    -0.5 * r * r / variance - 0.5 * (2.0 * PI * variance).ln(),
                    r / variance,
                    1.0 / variance,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the change of the Newton objective.
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tol: 1e-10,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceBreakdown {
    pub mode: Vec<f64>,
    /// `-½ f̂ᵀK⁻¹f̂ + ln p(y | f̂)`.
    pub data_fit_term: f64,
    /// `½ ln |I + W^½ K W^½|`.
    pub complexity_term: f64,
    /// `data_fit_term - complexity_term`.
    pub total: f64,
    pub iterations: usize,
}

/// `Ψ(a) = -½ aᵀ f + Σ ln p(y | f)` with `f = K a`.
fn newton_objective(k: &Matrix, y: &[f64], lik: Likelihood, a: &[f64]) -> Result<(Vec<f64>, f64)> {
    let f = k.matvec(a)?;
    let ll: f64 = y.iter().zip(&f).map(|(&yi, &fi)| lik.terms(yi, fi).0).sum();
    let psi = -0.5 * dot(a, &f) + ll;
    Ok((f, psi))
}

/// Newton iteration for the posterior mode on a given kernel matrix, in the
/// `B = I + W^½ K W^½` form that never inverts `K`.
pub fn laplace_kernel(k: &Matrix, y: &[f64], lik: Likelihood, cfg: &NewtonConfig) -> Result<LaplaceBreakdown> {
    let n = y.len();
    dim_check(k.shape() == (n, n), || {
        format!("kernel {:?} for {n} targets", k.shape())
    })?;
    let mut a = vec![0.0; n];
    let (mut f, mut psi) = newton_objective(k, y, lik, &a)?;
    for it in 1..=cfg.max_iterations {
        let mut sw = vec![0.0; n];
        let mut b = vec![0.0; n];
        for i in 0..n {
            let (_, d1, w) = lik.terms(y[i], f[i]);
            sw[i] = w.sqrt();
            b[i] = w * f[i] + d1;
        }
        let bmat = b_matrix(k, &sw);
        let l = cholesky(&bmat, 0.0)?;
        let kb = k.matvec(&b)?;
        let rhs: Vec<f64> = (0..n).map(|i| sw[i] * kb[i]).collect();
        let c = solve_chol(&l, &rhs)?;
        let a_new: Vec<f64> = (0..n).map(|i| b[i] - sw[i] * c[i]).collect();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = a.iter().zip(&a_new).map(|(o, nw)| o + step * (nw - o)).collect();
            let (ft, pt) = newton_objective(k, y, lik, &trial)?;
            if pt >= psi {
                accepted = Some((trial, ft, pt));
                break;
            }
            step *= 0.5;
        }
        let Some((an, fn_, pn)) = accepted else {
            return breakdown(k, y, lik, a, f, psi, it);
        };
        let change = pn - psi;
        (a, f, psi) = (an, fn_, pn);
        if change.abs() < cfg.tol {
            return breakdown(k, y, lik, a, f, psi, it);
        }
    }
    Err(Error::NewtonNonConvergence {
        iterations: cfg.max_iterations,
    })
}

fn b_matrix(k: &Matrix, sw: &[f64]) -> Matrix {
    let n = sw.len();
    let mut bm = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            bm[(i, j)] += sw[i] * k[(i, j)] * sw[j];
        }
    }
    bm
}

fn breakdown(
    k: &Matrix,
    y: &[f64],
    lik: Likelihood,
    _a: Vec<f64>,
    f: Vec<f64>,
    psi: f64,
    iterations: usize,
) -> Result<LaplaceBreakdown> {
    let sw: Vec<f64> = y.iter().zip(&f).map(|(&yi, &fi)| lik.terms(yi, fi).2.sqrt()).collect();
    let l = cholesky(&b_matrix(k, &sw), 0.0)?;
    let complexity_term = 0.5 * logdet(&l);
    Ok(LaplaceBreakdown {
        mode: f,
        data_fit_term: psi,
        complexity_term,
        total: psi - complexity_term,
        iterations,
    })
}

/// Laplace approximation for binary targets under the probit link.
pub fn laplace(x: &Matrix, y01: &[f64], hyp: &KernelHyperparams, cfg: &NewtonConfig) -> Result<LaplaceBreakdown> {
    dim_check(x.rows() == y01.len(), || {
        format!("{} inputs, {} targets", x.rows(), y01.len())
    })?;
    if let Some(v) = y01.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("binary target {v} is not 0 or 1")));
    }
    laplace_kernel(&rbf_gram(x, hyp)?, y01, Likelihood::Probit, cfg)
}

/// `½ ln |I + K/σ²|`: the Laplace complexity term under a Gaussian likelihood.
pub fn gaussian_laplace_complexity(k: &Matrix, y: &[f64], variance: f64) -> Result<f64> {
    Ok(laplace_kernel(k, y, Likelihood::Gaussian { variance }, &NewtonConfig::default())?.complexity_term)
}

/// Classification landscape starts: A short lengthscale with high amplitude,
/// B short lengthscale with low amplitude, C unit values.
pub fn classification_presets() -> Vec<LabeledInit> {
    vec![
        LabeledInit::new("A", 0.1, 5.0),
        LabeledInit::new("B", 0.1, 0.1),
        LabeledInit::new("C", 1.0, 1.0),
    ]
}

/// Laplace surfaces over shared lengthscale and amplitude. Cells store
/// `data_fit = -data_fit_term`, `complexity = complexity_term` and the
/// Laplace `total`. Trajectories come from variational training and carry
/// the variational data fit and KL.
pub fn laplace_surface(
    ds: &SplitDataset,
    grid: &GridConfig,
    inits: &[LabeledInit],
    cfg: &GpcConfig,
    newton: &NewtonConfig,
) -> Result<LandscapeScan> {
    let y = binary01(&ds.train_y)?;
    let d = ds.dim();
    let mut scan = scan_grid(grid, |ls, amp| {
        let b = laplace(&ds.train_x, &y, &KernelHyperparams::isotropic(amp, ls, d, 1.0), newton)?;
        Ok((-b.data_fit_term, b.complexity_term, b.total))
    })?;
    let fits = inits
        .par_iter()
        .map(|init| {
            fit_gpc_from(
                ds,
                cfg,
                &KernelHyperparams::isotropic(init.amplitude, init.lengthscale, d, 1.0),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    for (init, fit) in inits.iter().zip(fits) {
        let points = fit
            .steps
            .iter()
            .zip(&fit.trace.rows)
            .map(|(s, row)| {
                let (ls, amp) = (s.hyp.mean_lengthscale(), s.hyp.amplitude());
                TrajectoryPoint {
                    step: s.epoch,
                    lengthscale: ls,
                    amplitude: amp,
                    data_fit: s.elbo.data_fit,
                    complexity: s.elbo.complexity,
                    total: s.elbo.elbo,
                    val_error: 1.0 - row.val_acc,
                    train_error: 1.0 - row.train_acc,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_zero_one;
    use crate::linalg::DEFAULT_JITTER;
    use crate::prng::StreamKey;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn random_model(seed: u64, n: usize, d: usize) -> (GpcModel, Vec<f64>) {
        let mut s = StreamKey::new(seed).with("gpc").stream();
        let x = Matrix::from_vec(n, d, s.normals(n * d)).unwrap();
        let hyp = KernelHyperparams {
            log_amplitude: 0.3 * s.standard_normal(),
            log_lengthscales: (0..d).map(|_| 0.2 * s.standard_normal()).collect(),
            log_noise: 0.0,
        };
        let mu = s.normals(n);
        let mut packed = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                packed.push(if i == j {
                    0.3 + 0.5 * s.uniform()
                } else {
                    0.2 * s.standard_normal()
                });
            }
        }
        let q = VariationalPosterior {
            mu,
            chol_cov: LowerTriangular::from_packed(n, &packed).unwrap(),
        };
        let y = (0..n).map(|_| if s.uniform() < 0.5 { 0.0 } else { 1.0 }).collect();
        (
            GpcModel {
                hyp,
                q,
                train_x: x,
                jitter: DEFAULT_JITTER,
            },
            y,
        )
    }

    fn dense_inverse(a: &Matrix) -> Matrix {
        let l = cholesky(a, 0.0).unwrap();
        chol_inverse(&l)
    }

    #[test]
    fn normal_cdf_against_statrs() {
        let nd = Normal::new(0.0, 1.0).unwrap();
        for &z in &[-8.0, -5.5, -3.0, -1.0, -0.2, 0.0, 0.4, 2.0, 6.0] {
            assert!((norm_cdf(z) - nd.cdf(z)).abs() <= 1e-9 * nd.cdf(z));
            let lc = if z > 0.0 { (-nd.cdf(-z)).ln_1p() } else { nd.cdf(z).ln() };
            assert!(
                (ln_norm_cdf(z) - lc).abs() < 1e-9 * lc.abs().max(1e-9),
                "z {z}: {} vs {lc}",
                ln_norm_cdf(z)
            );
        }
    }

    #[test]
    fn tail_branches_join_smoothly() {
        for &z in &[TAIL_SWITCH - 1e-9, TAIL_SWITCH + 1e-9] {
            let direct = norm_cdf(z).ln();
            let tail = -0.5 * z * z - LN_SQRT_2PI + mills_ratio_tail(-z).ln();
            assert!((direct - tail).abs() < 1e-12 * direct.abs());
        }
        // deep tail: ln Φ(z) ≈ -z²/2 - ln(-z) - ln √(2π)
        let z = -40.0f64;
        let approx = -0.5 * z * z - (-z).ln() - LN_SQRT_2PI
            + (1.0 - 1.0 / (z * z) + 3.0 / z.powi(4) - 15.0 / z.powi(6) + 105.0 / z.powi(8)).ln();
        assert!((ln_norm_cdf(z) - approx).abs() < 1e-9);
        assert!((inv_mills(z) - (-z)).abs() < 0.05);
        assert!(ln_norm_cdf(40.0) == 0.0 || ln_norm_cdf(40.0).abs() < 1e-300);
    }

    #[test]
    fn inverse_mills_is_derivative() {
        for &z in &[-12.0, -6.0, -4.0, -1.0, 0.0, 1.5, 5.0] {
            let h = 1e-6;
            let fd = (ln_norm_cdf(z + h) - ln_norm_cdf(z - h)) / (2.0 * h);
            assert!((inv_mills(z) - fd).abs() < 1e-6 * fd.abs().max(1.0), "z {z}");
        }
    }

    #[test]
    fn gauss_hermite_rules() {
        let (x, w) = gauss_hermite(2).unwrap();
        assert!((x[0] - FRAC_1_SQRT_2).abs() < 1e-15 && (x[1] + FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((w[0] - PI.sqrt() / 2.0).abs() < 1e-14);
        for order in [1, 5, 20, 80] {
            let q = GaussHermite::new(order).unwrap();
            assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13, "order {order}");
            assert!(q.expect(0.0, 1.0, |f| f).abs() < 1e-13);
        }
        // even normal moments 1, 3, 15, 105, 945 are exact once 2·order > power
        let q = GaussHermite::new(20).unwrap();
        let moments = [1.0, 3.0, 15.0, 105.0, 945.0];
        for (k, m) in moments.iter().enumerate() {
            let p = 2 * (k as i32 + 1);
            assert!((q.expect(0.0, 1.0, |f| f.powi(p)) - m).abs() < 1e-10 * m);
        }
        let q = GaussHermite::new(80).unwrap();
        assert!((q.expect(1.0, 0.25, |f| f * f) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let (m, _) = random_model(1, 4, 2);
        let lp = &m.q.chol_cov;
        assert!(kl_gaussians(&[0.0; 4], lp, lp).unwrap().abs() < 1e-12);
        let eye = LowerTriangular::identity(3);
        let k = kl_gaussians(&[0.3, -0.4, 1.2], &eye, &eye).unwrap();
        assert!((k - 0.5 * (0.09 + 0.16 + 1.44)).abs() < 1e-14);
        assert!(kl_gaussians(&[0.0; 3], &eye, lp).is_err());
    }

    #[test]
    fn kl_two_dimensional_dense_oracle() {
        let lq = LowerTriangular::from_packed(2, &[0.8, 0.3, 0.5]).unwrap();
        let lp = LowerTriangular::from_packed(2, &[1.2, -0.4, 0.9]).unwrap();
        let mu = [0.7, -0.2];
        let (sq, sp) = (lq.reconstruct(), lp.reconstruct());
        let det = |m: &Matrix| m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let dp = det(&sp);
        let pinv = [[sp[(1, 1)] / dp, -sp[(0, 1)] / dp], [-sp[(1, 0)] / dp, sp[(0, 0)] / dp]];
        let mut tr = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                tr += pinv[i][j] * sq[(j, i)];
            }
        }
        let quad: f64 = (0..2)
            .map(|i| (0..2).map(|j| mu[i] * pinv[i][j] * mu[j]).sum::<f64>())
            .sum();
        let oracle = 0.5 * (tr + quad - 2.0 + dp.ln() - det(&sq).ln());
        assert!((kl_gaussians(&mu, &lq, &lp).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn kl_vanishes_when_q_is_prior() {
        let (mut m, y) = random_model(2, 6, 2);
        let (_, lk) = prior_factor(&m.train_x, &m.hyp, m.jitter).unwrap();
        m.q = VariationalPosterior::prior(&lk);
        let b = elbo(&m, &y, 1.0, &GaussHermite::new(20).unwrap()).unwrap();
        assert!(b.kl.abs() < 1e-12, "{}", b.kl);
    }

    #[test]
    fn deterministic_point_gives_ln_half() {
        let x = Matrix::column(&[0.2]);
        let q = VariationalPosterior {
            mu: vec![0.0],
            chol_cov: LowerTriangular::from_packed(1, &[1e-9]).unwrap(),
        };
        let m = GpcModel {
            hyp: KernelHyperparams::isotropic(1.0, 1.0, 1, 1.0),
            q,
            train_x: x,
            jitter: DEFAULT_JITTER,
        };
        for y in [0.0, 1.0] {
            let b = elbo(&m, &[y], 1.0, &GaussHermite::new(20).unwrap()).unwrap();
            assert!((b.expected_loglik - 0.5f64.ln()).abs() < 1e-8);
        }
    }

    #[test]
    fn quadrature_refinement_agrees() {
        for seed in 0..5 {
            let (m, y) = random_model(10 + seed, 8, 2);
            let a = elbo(&m, &y, 1.0, &GaussHermite::new(20).unwrap()).unwrap();
            let b = elbo(&m, &y, 1.0, &GaussHermite::new(80).unwrap()).unwrap();
            assert!((a.expected_loglik - b.expected_loglik).abs() < 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn elbo_residual_is_exactly_zero() {
        for seed in 0..20 {
            let (m, y) = random_model(30 + seed, 6, 3);
            for beta in [1.0, 0.3, 2.7] {
                let b = elbo(&m, &y, beta, &GaussHermite::new(20).unwrap()).unwrap();
                assert_eq!(b.residual(), 0.0);
            }
        }
    }

    fn fd_check(seed: u64, beta: f64) {
        let (m, y) = random_model(seed, 5, 2);
        let quad = GaussHermite::new(20).unwrap();
        let (_, g) = elbo_grad(&m, &y, beta, &quad).unwrap();
        let f = |m: &GpcModel| elbo(m, &y, beta, &quad).unwrap().elbo;
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        for i in 0..5 {
            let mut p = m.clone();
            p.q.mu[i] += h;
            let up = f(&p);
            p.q.mu[i] -= 2.0 * h;
            let fd = (up - f(&p)) / (2.0 * h);
            assert!(rel(g.mu[i], fd) < 1e-5, "mu {i}: {} vs {fd}", g.mu[i]);
        }
        let packed = m.q.chol_cov.packed();
        for k in 0..packed.len() {
            let mut pk = packed.clone();
            pk[k] += h;
            let mut p = m.clone();
            p.q.chol_cov = LowerTriangular::from_packed(5, &pk).unwrap();
            let up = f(&p);
            pk[k] -= 2.0 * h;
            p.q.chol_cov = LowerTriangular::from_packed(5, &pk).unwrap();
            let fd = (up - f(&p)) / (2.0 * h);
            assert!(rel(g.chol_cov[k], fd) < 1e-5, "L {k}: {} vs {fd}", g.chol_cov[k]);
        }
        for k in 0..3 {
            let mut p = m.clone();
            let bump = |p: &mut GpcModel, dh: f64| {
                if k == 0 {
                    p.hyp.log_amplitude += dh
                } else {
                    p.hyp.log_lengthscales[k - 1] += dh
                }
            };
            bump(&mut p, h);
            let up = f(&p);
            bump(&mut p, -2.0 * h);
            let fd = (up - f(&p)) / (2.0 * h);
            assert!(rel(g.hyp[k], fd) < 1e-5, "hyp {k}: {} vs {fd}", g.hyp[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            fd_check(100 + seed, 1.0);
        }
        fd_check(200, 0.4);
    }

    #[test]
    fn kl_gradient_structure() {
        let (mut m, y) = random_model(3, 5, 2);
        let quad = GaussHermite::new(20).unwrap();
        // β = 0 removes every KL contribution, including the kernel gradient
        let (_, g) = elbo_grad(&m, &y, 0.0, &quad).unwrap();
        assert!(g.hyp.iter().all(|&v| v == 0.0));
        let (_, g1) = elbo_grad(&m, &y, 1.0, &quad).unwrap();
        m.q.mu = vec![0.0; 5];
        let (_, g0) = elbo_grad(&m, &y, 0.0, &quad).unwrap();
        let (_, g1m) = elbo_grad(&m, &y, 1.0, &quad).unwrap();
        // at μ = 0 the KL term adds nothing to the μ gradient
        assert_eq!(g0.mu, g1m.mu);
        assert_ne!(g.mu, g1.mu);
    }

    #[test]
    fn predictive_examples() {
        let (m, _) = random_model(4, 6, 2);
        let xs = Matrix::from_vec(5, 2, StreamKey::new(5).stream().normals(10)).unwrap();
        let closed = predict_proba(&m, &xs).unwrap();
        let quad = predict_proba_quadrature(&m, &xs, &GaussHermite::new(80).unwrap()).unwrap();
        for (a, b) in closed.iter().zip(&quad) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        // zero latent mean at a far point
        let far = Matrix::from_rows(&[vec![1e3, 1e3]]).unwrap();
        assert!((predict_proba(&m, &far).unwrap()[0] - 0.5).abs() < 1e-12);
        // vanishing variance
        let q = GaussHermite::new(20).unwrap();
        assert!((q.expect(0.7, 1e-14, norm_cdf) - norm_cdf(0.7)).abs() < 1e-9);
    }

    #[test]
    fn predictive_variance_matches_dense_formula() {
        let (m, _) = random_model(6, 4, 1);
        let xs = Matrix::column(&[0.3, -1.1]);
        let (mean, var) = predict_latent(&m, &xs).unwrap();
        let mut k = rbf_gram(&m.train_x, &m.hyp).unwrap();
        k.add_diag(DEFAULT_JITTER);
        let kinv = dense_inverse(&k);
        let sigma = m.q.chol_cov.reconstruct();
        let ks = rbf_kernel(&m.train_x, &xs, &m.hyp).unwrap();
        for s in 0..2 {
            let kc = ks.col(s);
            let a = kinv.matvec(&kc).unwrap();
            let mm = dot(&a, &m.q.mu);
            let v = m.hyp.amplitude() - dot(&kc, &a) + dot(&a, &sigma.matvec(&a).unwrap());
            assert!((mean[s] - mm).abs() < 1e-9);
            assert!((var[s] - v).abs() < 1e-8);
        }
    }

    fn mode_gradient(k: &Matrix, y: &[f64], f: &[f64]) -> f64 {
        let l = cholesky(k, 0.0).unwrap();
        let kinv_f = solve_chol(&l, f).unwrap();
        y.iter()
            .zip(f)
            .zip(&kinv_f)
            .map(|((&yi, &fi), &ki)| (probit_terms(yi, fi).1 - ki).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn laplace_mode_is_stationary() {
        for seed in 0..5 {
            let (m, y) = random_model(40 + seed, 10, 2);
            // spread inputs so K⁻¹ f̂ is well conditioned
            let x = m.train_x.scale(2.0);
            let b = laplace(&x, &y, &m.hyp, &NewtonConfig::default()).unwrap();
            let k = rbf_gram(&x, &m.hyp).unwrap();
            let g = mode_gradient(&k, &y, &b.mode);
            assert!(g < 1e-8, "seed {seed}: {g:e} after {} iterations", b.iterations);
            assert_eq!(b.total, b.data_fit_term - b.complexity_term);
            assert!(b.complexity_term > 0.0);
        }
    }

    #[test]
    fn single_point_modes_mirror() {
        let x = Matrix::column(&[0.5]);
        let hyp = KernelHyperparams::isotropic(2.0, 1.0, 1, 1.0);
        let a = laplace(&x, &[1.0], &hyp, &NewtonConfig::default()).unwrap();
        let b = laplace(&x, &[0.0], &hyp, &NewtonConfig::default()).unwrap();
        assert!(a.mode[0] > 0.0);
        assert!((a.mode[0] + b.mode[0]).abs() < 1e-12);
    }

    #[test]
    fn two_point_mode_matches_grid_search() {
        let x = Matrix::column(&[-0.3, 0.6]);
        let y = [1.0, 0.0];
        let hyp = KernelHyperparams::isotropic(1.5, 0.8, 1, 1.0);
        let b = laplace(&x, &y, &hyp, &NewtonConfig::default()).unwrap();
        let k = rbf_gram(&x, &hyp).unwrap();
        let det = k[(0, 0)] * k[(1, 1)] - k[(0, 1)] * k[(1, 0)];
        let kinv = [[k[(1, 1)] / det, -k[(0, 1)] / det], [-k[(1, 0)] / det, k[(0, 0)] / det]];
        let psi = |f: [f64; 2]| {
            let q = f[0] * (kinv[0][0] * f[0] + kinv[0][1] * f[1]) + f[1] * (kinv[1][0] * f[0] + kinv[1][1] * f[1]);
            norm_cdf(f[0]).ln() + norm_cdf(-f[1]).ln() - 0.5 * q
        };
        // successively finer grids around the incumbent
        let (mut c, mut half) = ([0.0, 0.0], 4.0);
        for _ in 0..12 {
            let mut best = (f64::NEG_INFINITY, c);
            for i in 0..=40 {
                for j in 0..=40 {
                    let f = [
                        c[0] - half + half * i as f64 / 20.0,
                        c[1] - half + half * j as f64 / 20.0,
                    ];
                    let v = psi(f);
                    if v > best.0 {
                        best = (v, f);
                    }
                }
            }
            c = best.1;
            half /= 5.0;
        }
        assert!(
            (b.mode[0] - c[0]).abs() < 1e-4 && (b.mode[1] - c[1]).abs() < 1e-4,
            "{:?} vs {c:?}",
            b.mode
        );
        assert!((b.data_fit_term - psi([b.mode[0], b.mode[1]])).abs() < 1e-9);
    }

    #[test]
    fn gaussian_likelihood_complexity_matches_regression() {
        let (m, _) = random_model(50, 7, 2);
        let y = StreamKey::new(51).stream().normals(7);
        let k = rbf_gram(&m.train_x, &m.hyp).unwrap();
        let s2 = 0.3;
        let c = gaussian_laplace_complexity(&k, &y, s2).unwrap();
        let mut ks = k.clone();
        ks.add_diag(s2);
        let expected = 0.5 * logdet(&cholesky(&ks, 0.0).unwrap()) - 3.5 * s2.ln();
        assert!((c - expected).abs() < 1e-9);
    }

    fn zero_one(seed: u64, n: usize) -> SplitDataset {
        gen_zero_one(n, n, &StreamKey::new(seed).with("zo")).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_constant() {
        let ds = zero_one(1, 12);
        let cfg = GpcConfig {
            lr: 0.0,
            epochs: 4,
            ..Default::default()
        };
        let fit = fit_gpc(&ds, &cfg).unwrap();
        let r = &fit.trace.rows;
        assert!(r
            .windows(2)
            .all(|w| (w[0].train_loss, w[0].val_acc) == (w[1].train_loss, w[1].val_acc)));
    }

    #[test]
    fn training_improves_elbo_and_records_terms() {
        let ds = zero_one(2, 20);
        let cfg = GpcConfig {
            epochs: 200,
            ..Default::default()
        };
        let fit = fit_gpc(&ds, &cfg).unwrap();
        let r = &fit.trace.rows;
        // q starts at the prior, so the early KL transient is recovered from
        assert!(r.last().unwrap().train_loss < r[50].train_loss);
        assert!(fit.steps.iter().all(|s| s.elbo.residual() == 0.0));
        assert!(r.last().unwrap().val_acc > 0.8);
    }

    #[test]
    fn one_cell_surface_equals_direct_call() {
        let ds = zero_one(3, 10);
        let grid = GridConfig {
            n_lengthscale: 1,
            n_amplitude: 1,
            lengthscale_range: (0.7, 0.7),
            amplitude_range: (1.5, 1.5),
            noise: 0.1,
        };
        let cfg = GpcConfig {
            epochs: 3,
            ..Default::default()
        };
        let scan = laplace_surface(&ds, &grid, &classification_presets(), &cfg, &NewtonConfig::default()).unwrap();
        let y = binary01(&ds.train_y).unwrap();
        let b = laplace(
            &ds.train_x,
            &y,
            &KernelHyperparams::isotropic(1.5, 0.7, 1, 1.0),
            &NewtonConfig::default(),
        )
        .unwrap();
        let c = scan.cell(0, 0);
        assert_eq!(
            (c.data_fit, c.complexity, c.total),
            (-b.data_fit_term, b.complexity_term, b.total)
        );
        assert_eq!(scan.trajectories.len(), 3);
        let fit = fit_gpc_from(&ds, &cfg, &KernelHyperparams::isotropic(5.0, 0.1, 1, 1.0)).unwrap();
        for (p, s) in scan.trajectories[0].points.iter().zip(&fit.steps) {
            assert_eq!(
                (p.data_fit, p.complexity, p.total),
                (s.elbo.data_fit, s.elbo.complexity, s.elbo.elbo)
            );
        }
    }
}
