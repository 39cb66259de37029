//! Trace-driven serverless cold-start laboratory.
//!
//! The crate is organised bottom-up:
//!
//! - [`trace`]: FaaS trace parsing, filtering and synthetic trace generation.
//! - [`nn`]: a small deterministic neural kernel (dilated causal convolution,
//!   per-time-step channel normalisation, ReLU, Adam, gradient checking).
//! - [`tcn`]: the temporal convolutional forecaster for function names
//!   (module A) and inter-arrival gaps (module B).
//! - [`training`]: rolling-window cross-validation, the training loop and the
//!   landmark hyper-parameter search.
//! - [`baselines`]: exponential smoothing, AR/ARX least squares and a naive
//!   last-value forecaster.
//! - [`metrics`]: explained variance, MAPE, normalised RMSE, R² and Spearman.
//! - [`simulator`]: a discrete-event model of a scale-per-request worker pool.
//! - [`policy`]: fixed keep-alive and the forecast-driven ensemble policy.
//! - [`benchmark`]: paired TCN/baseline evaluation on identical CV splits.

pub mod baselines;
pub mod benchmark;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod simulator;
pub mod tcn;
pub mod trace;
pub mod training;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
