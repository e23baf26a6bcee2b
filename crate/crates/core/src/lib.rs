//! Bayesian dynamic ensembles of multiple models.
//!
//! A pool of candidate models is run side by side. Before each observation the
//! model weights pass through a weight-transition operator, and afterwards they
//! are updated by Bayes' rule with each model's evidence for the observation.
//! Three engines are provided: exact Kalman filtering for linear-Gaussian
//! pools ([`kf`]), particle filtering for general state-space pools ([`smc`]),
//! and Gaussian-process time-series prediction ([`gpts`]).

pub mod bench;
pub mod ensemble;
pub mod error;
pub mod evidence;
pub mod gaussian;
pub mod gpts;
pub mod kf;
pub mod rng;
pub mod selftest;
pub mod smc;
pub mod weights;
pub mod wtt;

pub use error::{Error, Result};
pub use gaussian::{collapse_mixture, GaussianBelief};
pub use weights::{
    bma_point_estimate, log_sum_exp, normalize_log_weights, normalize_weights,
    update_model_weights, update_model_weights_log, PointEstimate, WeightHistory, WeightVector,
};
pub use wtt::{apply_wtt, WttConfig, WttKind};
