//! Generators for the parity, modular-arithmetic, zero-one and sine tasks, the
//! slope feature expansion and the concealment augmentation.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::prng::{Stream, StreamKey};

/// Slope of the line in the zero-one-on-a-slope task.
pub const SLOPE: f64 = 0.3;

/// Largest parity length for which distinct sampling is attempted.
pub const MAX_DISTINCT_PARITY_BITS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum Targets {
    Real(Vec<f64>),
    Class(Vec<usize>),
    /// Parity targets in `{-1, +1}`.
    Sign(Vec<i8>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class(v) => v.len(),
            Targets::Sign(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class indices; sign targets map `-1 -> 0` and `+1 -> 1`.
    pub fn classes(&self) -> Result<Vec<usize>> {
        match self {
            Targets::Class(v) => Ok(v.clone()),
            Targets::Sign(v) => Ok(v.iter().map(|&s| usize::from(s > 0)).collect()),
            Targets::Real(_) => Err(Error::InvalidArgument(
                "real-valued targets have no class labels".into(),
            )),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Targets::Real(v) => v.clone(),
            Targets::Class(v) => v.iter().map(|&c| c as f64).collect(),
            Targets::Sign(v) => v.iter().map(|&s| f64::from(s)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub id: String,
    pub params: Value,
    pub key: StreamKey,
    pub dim: usize,
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train_x: Matrix,
    pub train_y: Targets,
    pub val_x: Matrix,
    pub val_y: Targets,
    pub meta: DatasetMeta,
}

impl SplitDataset {
    pub fn n_train(&self) -> usize {
        self.train_x.rows()
    }

    pub fn n_val(&self) -> usize {
        self.val_x.rows()
    }

    pub fn dim(&self) -> usize {
        self.train_x.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Distinct sequences when they fit in the universe, otherwise with replacement.
    #[default]
    Auto,
    Distinct,
    WithReplacement,
}

/// Parity target: product of the bits with `0 -> -1` and `1 -> +1`.
pub fn parity_of(bits: &[f64]) -> i8 {
    bits.iter().fold(1i8, |acc, &b| if b > 0.5 { acc } else { -acc })
}

pub fn gen_parity(k: usize, n_train: usize, n_val: usize, sampling: Sampling, key: &StreamKey) -> Result<SplitDataset> {
    if k == 0 || k > 63 {
        return Err(Error::InvalidArgument(format!("parity length {k} outside 1..=63")));
    }
    check_counts(n_train, n_val)?;
    let total = (n_train + n_val) as u64;
    let universe = 1u64 << k;
    let distinct = match sampling {
        Sampling::Distinct => {
            if total > universe {
                return Err(Error::InsufficientUniverse {
                    requested: total,
                    available: universe,
                });
            }
            true
        }
        Sampling::WithReplacement => false,
        Sampling::Auto => k as u32 <= MAX_DISTINCT_PARITY_BITS && total <= universe,
    };

    let mut stream = key.stream();
    let mut codes = Vec::with_capacity(total as usize);
    let mut seen = HashSet::new();
    while codes.len() < total as usize {
        let c = stream.below(universe);
        if !distinct || seen.insert(c) {
            codes.push(c);
        }
    }

    let encode = |cs: &[u64]| {
        let mut x = Matrix::zeros(cs.len(), k);
        let mut y = Vec::with_capacity(cs.len());
        for (i, &c) in cs.iter().enumerate() {
            for j in 0..k {
                x[(i, j)] = ((c >> j) & 1) as f64;
            }
            y.push(parity_of(x.row(i)));
        }
        (x, Targets::Sign(y))
    };
    let (train_x, train_y) = encode(&codes[..n_train]);
    let (val_x, val_y) = encode(&codes[n_train..]);
    Ok(SplitDataset {
        train_x,
        train_y,
        val_x,
        val_y,
        meta: DatasetMeta {
            id: "parity".into(),
            params: json!({ "k": k, "n_train": n_train, "n_val": n_val, "distinct": distinct }),
            key: key.clone(),
            dim: k,
            classes: Some(2),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModOp {
    Add,
    Sub,
    Div,
    Poly,
    ExtPoly,
    ExtMult,
}

impl ModOp {
    pub const ALL: [ModOp; 6] = [
        ModOp::Add,
        ModOp::Sub,
        ModOp::Div,
        ModOp::Poly,
        ModOp::ExtPoly,
        ModOp::ExtMult,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModOp::Add => "add",
            ModOp::Sub => "sub",
            ModOp::Div => "div",
            ModOp::Poly => "poly",
            ModOp::ExtPoly => "ext_poly",
            ModOp::ExtMult => "ext_mult",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }

    /// `x ∘ y mod p`; `None` for division by zero.
    pub fn apply(self, x: u64, y: u64, p: u64) -> Option<u64> {
        let (x, y) = (x % p, y % p);
        Some(match self {
            ModOp::Add => (x + y) % p,
            ModOp::Sub => (x + p - y) % p,
            ModOp::Div => {
                if y == 0 {
                    return None;
                }
                x * pow_mod(y, p - 2, p) % p
            }
            ModOp::Poly => (x * x + x * y + y * y) % p,
            ModOp::ExtPoly => (x * x + x * y + y * y + x) % p,
            ModOp::ExtMult => x * y % p * x % p,
        })
    }
}

impl std::fmt::Display for ModOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn pow_mod(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % p;
        }
        base = base * base % p;
        exp >>= 1;
    }
    acc
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    (2..).take_while(|d| d * d <= p).all(|d| !p.is_multiple_of(d))
}

/// All operand pairs of the `p x p` grid on which `op` is defined, row-major.
pub fn modular_pairs(op: ModOp, p: u64) -> Vec<(u64, u64)> {
    (0..p)
        .flat_map(|x| (0..p).map(move |y| (x, y)))
        .filter(|&(x, y)| op.apply(x, y, p).is_some())
        .collect()
}

pub fn one_hot_pair(x: u64, y: u64, p: u64) -> Vec<f64> {
    let mut v = vec![0.0; 2 * p as usize];
    v[x as usize] = 1.0;
    v[(p + y) as usize] = 1.0;
    v
}

/// Splits the operand grid at random into train and validation halves.
///
/// The training set gets `round(train_fraction · N)` pairs, clamped so both
/// sides are non-empty. Rows keep grid order within each side.
pub fn gen_modular(op: ModOp, p: u64, train_fraction: f64, key: &StreamKey) -> Result<SplitDataset> {
    if !is_prime(p) {
        return Err(Error::NotPrime(p));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    let pairs = modular_pairs(op, p);
    let n = pairs.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    key.stream().shuffle(&mut order);
    let mut train_idx = order[..n_train].to_vec();
    let mut val_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let build = |idx: &[usize]| {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| one_hot_pair(pairs[i].0, pairs[i].1, p)).collect();
        let ys = idx
            .iter()
            .map(|&i| op.apply(pairs[i].0, pairs[i].1, p).expect("filtered") as usize)
            .collect();
        (Matrix::from_rows(&rows).expect("equal widths"), Targets::Class(ys))
    };
    let (train_x, train_y) = build(&train_idx);
    let (val_x, val_y) = build(&val_idx);
    Ok(SplitDataset {
        train_x,
        train_y,
        val_x,
        val_y,
        meta: DatasetMeta {
            id: format!("mod_{}", op.name()),
            params: json!({ "op": op.name(), "p": p, "train_fraction": train_fraction }),
            key: key.clone(),
            dim: 2 * p as usize,
            classes: Some(p as usize),
        },
    })
}

fn check_counts(n_train: usize, n_val: usize) -> Result<()> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least one example per split, got {n_train}/{n_val}"
        )));
    }
    Ok(())
}

fn sign_label(x: f64) -> usize {
    usize::from(x > 0.0)
}

fn normal_column(stream: &mut Stream, n: usize) -> Matrix {
    Matrix::column(&stream.normals(n))
}

/// Scalar inputs from `N(0, 1)` labelled 1 above zero and 0 otherwise.
pub fn gen_zero_one(n_train: usize, n_val: usize, key: &StreamKey) -> Result<SplitDataset> {
    check_counts(n_train, n_val)?;
    let mut s = key.stream();
    let train_x = normal_column(&mut s, n_train);
    let val_x = normal_column(&mut s, n_val);
    let label = |m: &Matrix| Targets::Class(m.data().iter().map(|&x| sign_label(x)).collect());
    Ok(SplitDataset {
        train_y: label(&train_x),
        val_y: label(&val_x),
        train_x,
        val_x,
        meta: DatasetMeta {
            id: "zero_one".into(),
            params: json!({ "n_train": n_train, "n_val": n_val }),
            key: key.clone(),
            dim: 1,
            classes: Some(2),
        },
    })
}

/// Points on the line `y = 0.3 x₀`, labelled by whether they lie above zero.
///
/// Examples hold the raw `x₀`; [`slope_features`] expands them.
pub fn gen_zero_one_slope(n_train: usize, n_val: usize, key: &StreamKey) -> Result<SplitDataset> {
    let mut ds = gen_zero_one(n_train, n_val, key)?;
    ds.meta.id = "zero_one_slope".into();
    ds.meta.params = json!({ "n_train": n_train, "n_val": n_val, "slope": SLOPE });
    Ok(ds)
}

/// `[x₀, x₀², x₀³, sin(100 x₀)]`.
pub fn slope_features(x0: f64) -> [f64; 4] {
    [x0, x0 * x0, x0 * x0 * x0, (100.0 * x0).sin()]
}

/// Applies [`slope_features`] to the first column of every row.
pub fn expand_slope(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), 4);
    for i in 0..x.rows() {
        out.row_mut(i).copy_from_slice(&slope_features(x[(i, 0)]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SineSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    /// Scale `B` of the target noise.
    pub noise: f64,
    /// Standard deviation of the Gaussian shift applied to training inputs.
    pub x_jitter: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for SineSpec {
    fn default() -> Self {
        Self {
            n_train: 30,
            n_val: 100,
            amplitude: 1.0,
            frequency: std::f64::consts::FRAC_1_PI,
            phase: 0.0,
            noise: 0.1,
            x_jitter: 1.0,
            x_min: -std::f64::consts::PI,
            x_max: std::f64::consts::PI,
        }
    }
}

impl SineSpec {
    /// Noise-free curve `A sin(2π f x + φ)`.
    pub fn clean(&self, x: f64) -> f64 {
        self.amplitude * (std::f64::consts::TAU * self.frequency * x + self.phase).sin()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Noisy sine regression. Training inputs are a uniform grid shifted by
/// Gaussian noise; validation inputs are the clean grid.
pub fn gen_sine(spec: &SineSpec, key: &StreamKey) -> Result<SplitDataset> {
    if spec.n_train < 2 || spec.n_val == 0 {
        return Err(Error::InvalidArgument(format!(
            "sine task needs n_train >= 2 and n_val >= 1, got {}/{}",
            spec.n_train, spec.n_val
        )));
    }
    let mut s = key.stream();
    let train_xs: Vec<f64> = linspace(spec.x_min, spec.x_max, spec.n_train)
        .into_iter()
        .map(|x| x + spec.x_jitter * s.standard_normal())
        .collect();
    let val_xs = linspace(spec.x_min, spec.x_max, spec.n_val);
    let mut target = |x: f64| spec.clean(x) + spec.noise * s.standard_normal();
    let train_y: Vec<f64> = train_xs.iter().map(|&x| target(x)).collect();
    let val_y: Vec<f64> = val_xs.iter().map(|&x| target(x)).collect();
    Ok(SplitDataset {
        train_x: Matrix::column(&train_xs),
        train_y: Targets::Real(train_y),
        val_x: Matrix::column(&val_xs),
        val_y: Targets::Real(val_y),
        meta: DatasetMeta {
            id: "sine".into(),
            params: serde_json::to_value(spec).expect("plain struct"),
            key: key.clone(),
            dim: 1,
            classes: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcealmentSpec {
    pub extra_dims: usize,
    pub key: StreamKey,
}

/// Appends `extra_dims` i.i.d. standard-normal columns drawn from `stream`.
pub fn conceal(x: &Matrix, extra_dims: usize, stream: &mut Stream) -> Matrix {
    if extra_dims == 0 {
        return x.clone();
    }
    let noise = Matrix::from_vec(x.rows(), extra_dims, stream.normals(x.rows() * extra_dims)).expect("sized from x");
    x.hstack(&noise).expect("same row count")
}

/// Conceals both splits, with separate child streams for train and validation.
pub fn conceal_dataset(ds: &SplitDataset, spec: &ConcealmentSpec) -> SplitDataset {
    let mut out = ds.clone();
    out.train_x = conceal(&ds.train_x, spec.extra_dims, &mut spec.key.with("train").stream());
    out.val_x = conceal(&ds.val_x, spec.extra_dims, &mut spec.key.with("val").stream());
    out.meta.dim = ds.meta.dim + spec.extra_dims;
    if let Value::Object(m) = &mut out.meta.params {
        m.insert("extra_dims".into(), json!(spec.extra_dims));
        m.insert("conceal_key".into(), serde_json::to_value(&spec.key).expect("key"));
    }
    out
}

/// Maps sign or class targets onto `{0, 1}` for Bernoulli likelihoods.
pub fn binary01(t: &Targets) -> Result<Vec<f64>> {
    let c = t.classes()?;
    if let Some(bad) = c.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("class {bad} is not binary")));
    }
    Ok(c.into_iter().map(|v| v as f64).collect())
}
