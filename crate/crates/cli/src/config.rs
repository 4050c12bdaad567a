//! Declarative experiment configs. Every block rejects unknown fields.

use std::path::{Path, PathBuf};

use grok_core::bnn_model::BnnConfig;
use grok_core::datasets::{
    conceal_dataset, gen_modular, gen_parity, gen_sine, gen_zero_one, gen_zero_one_slope, ConcealmentSpec, ModOp,
    Sampling, SineSpec, SplitDataset,
};
use grok_core::gp_classification::{GpcConfig, NewtonConfig};
use grok_core::gp_regression::{DelayConfig, GprConfig, GridConfig, KernelHyperparams, LabeledInit};
use grok_core::harness::{SweepConfig, DEFAULT_GAMMA};
use grok_core::linear_model::LinearConfig;
use grok_core::mlp_model::MlpConfig;
use grok_core::optim::AdamConfig;
use grok_core::prng::StreamKey;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Gen,
    Train,
    Sweep,
    Landscape,
    BnnSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gen => "gen",
            Self::Train => "train",
            Self::Sweep => "sweep",
            Self::Landscape => "landscape",
            Self::BnnSweep => "bnn_sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
    Bnn,
    Gpc,
    Gpr,
}

fn n64() -> usize {
    64
}

fn n128() -> usize {
    128
}

fn p7() -> u64 {
    7
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    ZeroOne {
        #[serde(default = "n64")]
        n_train: usize,
        #[serde(default = "n64")]
        n_val: usize,
    },
    ZeroOneSlope {
        #[serde(default = "n64")]
        n_train: usize,
        #[serde(default = "n64")]
        n_val: usize,
    },
    Parity {
        k: usize,
        #[serde(default = "n128")]
        n_train: usize,
        #[serde(default = "n128")]
        n_val: usize,
        #[serde(default)]
        sampling: Sampling,
        #[serde(default)]
        extra_dims: usize,
    },
    Modular {
        op: ModOp,
        #[serde(default = "p7")]
        p: u64,
        #[serde(default = "half")]
        train_fraction: f64,
        #[serde(default)]
        extra_dims: usize,
    },
    Sine {
        #[serde(default)]
        spec: SineSpec,
    },
}

impl DatasetConfig {
    pub fn id(&self) -> &'static str {
        match self {
            Self::ZeroOne { .. } => "zero_one",
            Self::ZeroOneSlope { .. } => "zero_one_slope",
            Self::Parity { .. } => "parity",
            Self::Modular { .. } => "modular",
            Self::Sine { .. } => "sine",
        }
    }

    fn extra_dims(&self) -> usize {
        match self {
            Self::Parity { extra_dims, .. } | Self::Modular { extra_dims, .. } => *extra_dims,
            _ => 0,
        }
    }

    /// Samples the split from `run.with("data")` and conceals it with
    /// `run.with("conceal")`.
    pub fn build(&self, run: &StreamKey) -> grok_core::Result<SplitDataset> {
        let key = run.with("data");
        let base = match *self {
            Self::ZeroOne { n_train, n_val } => gen_zero_one(n_train, n_val, &key)?,
            Self::ZeroOneSlope { n_train, n_val } => gen_zero_one_slope(n_train, n_val, &key)?,
            Self::Parity {
                k,
                n_train,
                n_val,
                sampling,
                ..
            } => gen_parity(k, n_train, n_val, sampling, &key)?,
            Self::Modular {
                op, p, train_fraction, ..
            } => gen_modular(op, p, train_fraction, &key)?,
            Self::Sine { spec } => gen_sine(&spec, &key)?,
        };
        let extra_dims = self.extra_dims();
        Ok(if extra_dims == 0 {
            base
        } else {
            conceal_dataset(
                &base,
                &ConcealmentSpec {
                    extra_dims,
                    key: run.with("conceal"),
                },
            )
        })
    }

    fn binary(&self) -> bool {
        matches!(
            self,
            Self::ZeroOne { .. } | Self::ZeroOneSlope { .. } | Self::Parity { .. }
        )
    }

    fn classes(&self) -> bool {
        !matches!(self, Self::Sine { .. })
    }
}

/// Exact GP regression: initial hyperparameters plus the Adam settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprBlock {
    pub init_lengthscale: f64,
    pub init_amplitude: f64,
    pub init_noise: f64,
    pub lr: f64,
    pub epochs: usize,
    pub optimize_noise: bool,
}

impl Default for GprBlock {
    fn default() -> Self {
        let base = GprConfig::default();
        Self {
            init_lengthscale: 1.0,
            init_amplitude: 1.0,
            init_noise: 0.1,
            lr: base.adam.lr,
            epochs: base.epochs,
            optimize_noise: base.optimize_noise,
        }
    }
}

impl GprBlock {
    pub fn fit_config(&self) -> GprConfig {
        GprConfig {
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            epochs: self.epochs,
            optimize_noise: self.optimize_noise,
        }
    }

    pub fn init(&self, dim: usize) -> KernelHyperparams {
        KernelHyperparams::isotropic(self.init_amplitude, self.init_lengthscale, dim, self.init_noise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeBlock {
    pub grid: GridConfig,
    /// Labelled trajectory starts; the model's presets when absent.
    pub inits: Option<Vec<LabeledInit>>,
    pub delay: DelayConfig,
    pub newton: NewtonConfig,
}

fn one() -> usize {
    1
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present it must agree with the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    pub master_seed: u64,
    /// Independent runs for `gen` and `train`; seeds per initial scale for
    /// `bnn_sweep`. `sweep` counts its own seeds and `landscape` uses run 0.
    #[serde(default = "one")]
    pub seeds: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub bnn: BnnConfig,
    #[serde(default)]
    pub gpc: GpcConfig,
    #[serde(default)]
    pub gpr: GprBlock,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub landscape: LandscapeBlock,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks that the config can drive `kind` before any work starts.
    pub fn validate(&self, kind: ExperimentKind) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Some(declared) = self.experiment {
            if declared != kind {
                return bad(format!(
                    "config declares experiment `{}` but `{}` was requested",
                    declared.name(),
                    kind.name()
                ));
            }
        }
        if self.seeds == 0 {
            return bad("`seeds` must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("`gamma` must lie in (0, 1], got {}", self.gamma));
        }
        let dataset = || {
            self.dataset
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("`dataset` is required for {}", kind.name())))
        };
        let model = || {
            self.model
                .ok_or_else(|| CliError::Config(format!("`model` is required for {}", kind.name())))
        };
        match kind {
            ExperimentKind::Gen => {
                dataset()?;
            }
            ExperimentKind::Train => check_pair(model()?, dataset()?)?,
            ExperimentKind::Sweep => {
                if self.sweep.seeds == 0 {
                    return bad("`sweep.seeds` must be at least 1".into());
                }
            }
            ExperimentKind::Landscape => {
                let m = model()?;
                if !matches!(m, ModelKind::Gpr | ModelKind::Gpc) {
                    return bad("landscape needs model `gpr` or `gpc`".into());
                }
                check_pair(m, dataset()?)?;
                let g = &self.landscape.grid;
                if g.n_lengthscale == 0 || g.n_amplitude == 0 {
                    return bad("landscape grid needs at least one point per axis".into());
                }
            }
            ExperimentKind::BnnSweep => {
                check_pair(ModelKind::Bnn, dataset()?)?;
                if self.bnn.sigma_list.is_empty() {
                    return bad("`bnn.sigma_list` must not be empty".into());
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, lowercase hex.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_pair(model: ModelKind, dataset: &DatasetConfig) -> Result<(), CliError> {
    let ok = match model {
        ModelKind::Linear => matches!(dataset, DatasetConfig::ZeroOneSlope { .. }),
        ModelKind::Mlp | ModelKind::Bnn => dataset.classes(),
        ModelKind::Gpc => dataset.binary(),
        ModelKind::Gpr => matches!(dataset, DatasetConfig::Sine { .. }),
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "model `{}` cannot train on dataset `{}`",
            serde_json::to_value(model)
                .expect("unit variant")
                .as_str()
                .unwrap_or("?"),
            dataset.id()
        )))
    }
}

/// Root key of run `i`; datasets and models draw from labelled children.
pub fn run_key(master_seed: u64, run: usize) -> StreamKey {
    StreamKey::new(master_seed).with("run").with(run)
}
