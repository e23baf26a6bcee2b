//! Experiment harness: the nonlinear toy benchmark, a flat configuration
//! format, and a CSV stream runner for all three engines.

pub mod config;
pub mod stream;
pub mod toy;

use thiserror::Error;

use crate::error::Error;

pub use config::{ConfigValue, FlatConfig};
pub use stream::run_stream;
pub use toy::{gen_toy_series, run_toy_experiment, RunReport, ToyConfig, ToySeries};

/// Harness failures, split by who has to fix them.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config key '{key}': {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("numeric failure: {0}")]
    Numeric(#[from] Error),
}

impl BenchError {
    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        Self::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// True for failures inside the engines rather than in the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Self::Numeric(_))
    }
}

/// `(1/T) Σ (x̂_t − x_t)²`.
pub fn mse(estimates: &[f64], truths: &[f64]) -> crate::Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: truths.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::Empty("mse input"));
    }
    let s: f64 = estimates.iter().zip(truths).map(|(e, x)| (e - x).powi(2)).sum();
    Ok(s / estimates.len() as f64)
}
