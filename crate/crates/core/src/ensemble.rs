//! The model-weight recursion shared by the three engines: a weight-transition
//! step followed by a Bayesian update with the step's evidences.

use crate::error::{Error, Result};
use crate::weights::{update_model_weights_log, WeightHistory, WeightVector};
use crate::wtt::{apply_wtt, WttConfig};

/// Predictive and posterior model weights for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStep {
    pub predictive: WeightVector,
    pub posterior: WeightVector,
    /// True when every evidence was zero and `posterior` is the carried-forward
    /// predictive vector.
    pub fallback: bool,
}

/// `w_{t|t-1} = WTT(history)`, then `w_t ∝ w_{t|t-1} · exp(log_evidence)`.
///
/// When all products are zero nothing can be learned from the observation,
/// so the predictive weights are carried forward and `fallback` is set. The
/// optional floor is applied last.
pub fn advance_weights(
    history: &WeightHistory,
    wtt: &WttConfig,
    log_evidences: &[f64],
    floor: f64,
) -> Result<WeightStep> {
    let predictive = apply_wtt(wtt, history)?;
    let (posterior, fallback) = match update_model_weights_log(&predictive, log_evidences) {
        Ok(w) => (w, false),
        Err(Error::AllZero) => (predictive.clone(), true),
        Err(e) => return Err(e),
    };
    Ok(WeightStep {
        predictive,
        posterior: posterior.with_floor(floor)?,
        fallback,
    })
}
