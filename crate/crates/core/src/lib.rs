//! Binary quantile regression for feed-forward ReLU networks.
//!
//! A network with a shared trunk and one linear head per quantile level is
//! trained on binary labels only. Each head learns a conditional quantile of
//! the unobserved latent response whose sign produced the label. From those
//! quantiles the crate derives prediction intervals, a per-sample confidence
//! score whose expected misclassification rate is `0.5 - delta`, and smoothed
//! conditional means and variances. Training uses plain SGD with either a
//! fixed step or the Lipschitz-adaptive step `1 / (k_z * L)`.
//!
//! Modules, bottom-up:
//!
//! - [`net`]: grid of levels, network, forward/backward, checkpoints
//! - [`loss`]: class-probability map, loss, gradients, crossing penalty,
//!   Lipschitz and curvature constants
//! - [`optim`]: SGD loop, adaptive step, epochs-to-target
//! - [`data`]: simulated generators, thresholding, label noise, CSV
//! - [`quantiles`]: smoothing, conditional moments, intervals, confidence score
//! - [`eval`]: coverage, confidence bins, AUC, accuracy
//! - [`experiment`]: run configuration and the end-to-end commands behind the `bqr` binary

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod net;
pub mod optim;
pub mod quantiles;

pub use error::{BqrError, Result};
pub use loss::{LossKind, LossSpec};
pub use net::{LatentPrediction, QuantileNet, TauGrid};
