//! Probabilistic regression toolkit for manufacturing lead-time prediction.
//!
//! Instead of point estimates, every model in this crate outputs a full
//! predictive distribution per sample: natural-gradient boosting with
//! Gaussian or Exponential outputs, quantile gradient boosting, a
//! heteroscedastic neural network, and a sparse variational Gaussian
//! process, plus calibration diagnostics and isotonic recalibration.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod dist;
pub mod error;
pub mod eval;
pub mod gp;
pub mod ngboost;
pub mod optim;
pub mod persist;
pub mod plot;
pub mod pnn;
pub mod quantile_gb;
pub mod tree;

pub use dist::PredictiveDistribution;
pub use error::{Error, Result};
