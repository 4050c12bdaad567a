//! Numerical core for grokking experiments: datasets, models, the grokking
//! gap harness and the statistics applied to sweep results.

pub mod bnn_model;
pub mod datasets;
pub mod error;
pub mod gp_classification;
pub mod gp_regression;
pub mod harness;
pub mod linalg;
pub mod linear_model;
pub mod mlp_model;
pub mod optim;
pub mod prng;
pub mod stats;

pub use error::{Error, Result};
