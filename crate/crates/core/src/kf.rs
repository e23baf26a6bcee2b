//! Kalman-filter ensemble over a pool of linear-Gaussian models.
//!
//! Each step runs a predict/update per model from a shared belief, turns the
//! per-model Gaussian evidences into posterior model weights, and collapses
//! the weighted posterior mixture back into one Gaussian that seeds every
//! model at the next step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::evidence::gaussian_log_evidence;
use crate::gaussian::{collapse_mixture, symmetrize, GaussianBelief};
use crate::weights::{bma_point_estimate, PointEstimate, WeightHistory, WeightVector};
use crate::wtt::WttConfig;
use crate::ensemble::advance_weights;

/// `x_t ~ N(A x_{t-1}, Q)`, `y_t ~ N(B x_t, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, b: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        let m = b.nrows();
        let mismatch = |found: usize, expected: usize| Error::DimensionMismatch { expected, found };
        if d == 0 || a.ncols() != d {
            return Err(mismatch(a.ncols(), d));
        }
        if q.nrows() != d || q.ncols() != d {
            return Err(mismatch(q.nrows(), d));
        }
        if m == 0 || b.ncols() != d {
            return Err(mismatch(b.ncols(), d));
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(mismatch(r.nrows(), m));
        }
        Ok(Self {
            a,
            q: symmetrize(q),
            b,
            r: symmetrize(r),
        })
    }

    /// Scalar random-walk-style model `x' = a x + N(0, q)`, `y = b x + N(0, r)`.
    pub fn scalar(a: f64, q: f64, b: f64, r: f64) -> Self {
        let s = |v| DMatrix::from_element(1, 1, v);
        Self {
            a: s(a),
            q: s(q),
            b: s(b),
            r: s(r),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.b.nrows()
    }
}

/// Time update: `N(A m, A P Aᵀ + Q)`.
pub fn kf_predict(model: &LinearGaussianModel, belief: &GaussianBelief) -> Result<GaussianBelief> {
    if belief.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            found: belief.dim(),
        });
    }
    let a = &model.a;
    Ok(GaussianBelief {
        mean: a * &belief.mean,
        cov: symmetrize(a * &belief.cov * a.transpose() + &model.q),
    })
}

/// Posterior belief and log evidence `ln N(y; B m, S)` from a measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct KfUpdate {
    pub posterior: GaussianBelief,
    pub log_evidence: f64,
}

impl KfUpdate {
    pub fn evidence(&self) -> f64 {
        self.log_evidence.exp()
    }
}

/// Measurement update with gain `G = P Bᵀ S⁻¹` and covariance `P − G B P`.
pub fn kf_update(
    model: &LinearGaussianModel,
    predicted: &GaussianBelief,
    y: &DVector<f64>,
) -> Result<KfUpdate> {
    if y.len() != model.obs_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.obs_dim(),
            found: y.len(),
        });
    }
    let log_evidence = gaussian_log_evidence(y, predicted, &model.b, &model.r)?;
    let b = &model.b;
    let p = &predicted.cov;
    let s = symmetrize(b * p * b.transpose() + &model.r);
    let s_inv = s
        .cholesky()
        .ok_or(Error::SingularInnovationCov)?
        .inverse();
    let gain = p * b.transpose() * s_inv;
    let innov = y - b * &predicted.mean;
    let mean = &predicted.mean + &gain * innov;
    let cov = symmetrize(p - &gain * b * p);
    Ok(KfUpdate {
        posterior: GaussianBelief { mean, cov },
        log_evidence,
    })
}

/// Ensemble state carried between steps.
#[derive(Debug, Clone)]
pub struct KfEnsembleState {
    /// Collapsed posterior shared by every model.
    pub belief: GaussianBelief,
    pub weights: WeightVector,
    pub history: WeightHistory,
    /// Lower bound applied to posterior weights after each update (0 = off).
    pub weight_floor: f64,
}

impl KfEnsembleState {
    pub fn new(belief: GaussianBelief, weights: WeightVector) -> Self {
        Self {
            belief,
            history: WeightHistory::new(weights.clone()),
            weights,
            weight_floor: 0.0,
        }
    }

    /// Uniform initial weights over `k` models.
    pub fn uniform(belief: GaussianBelief, k: usize) -> Self {
        Self::new(belief, WeightVector::uniform(k))
    }

    pub fn with_weight_floor(mut self, floor: f64) -> Self {
        self.weight_floor = floor;
        self
    }
}

/// Everything a [`kf_bdemm_step`] produces besides the next state.
#[derive(Debug, Clone)]
pub struct KfStepOutput {
    pub estimate: PointEstimate,
    pub predictive_weights: WeightVector,
    pub posteriors: Vec<GaussianBelief>,
    pub log_evidences: Vec<f64>,
    /// Largest posterior model weight; the collapse is only accurate when this is near one.
    pub max_component_weight: f64,
    /// Set when every evidence was zero and the predictive weights were carried forward.
    pub evidence_fallback: bool,
}

/// One predict/update/re-weight/collapse cycle of the Kalman ensemble.
pub fn kf_bdemm_step(
    state: &KfEnsembleState,
    pool: &[LinearGaussianModel],
    y: &DVector<f64>,
    wtt: &WttConfig,
) -> Result<(KfEnsembleState, KfStepOutput)> {
    if pool.len() != state.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: state.weights.len(),
            found: pool.len(),
        });
    }
    let mut posteriors = Vec::with_capacity(pool.len());
    let mut log_evidences = Vec::with_capacity(pool.len());
    for model in pool {
        let predicted = kf_predict(model, &state.belief)?;
        let upd = kf_update(model, &predicted, y)?;
        posteriors.push(upd.posterior);
        log_evidences.push(upd.log_evidence);
    }
    let step = advance_weights(&state.history, wtt, &log_evidences, state.weight_floor)?;
    let means: Vec<PointEstimate> = posteriors.iter().map(|p| p.mean.clone()).collect();
    let estimate = bma_point_estimate(&means, &step.posterior)?;
    let belief = collapse_mixture(&posteriors, &step.posterior)?;
    let mut history = state.history.clone();
    history.push(step.posterior.clone())?;
    let next = KfEnsembleState {
        belief,
        weights: step.posterior.clone(),
        history,
        weight_floor: state.weight_floor,
    };
    let out = KfStepOutput {
        estimate,
        max_component_weight: step.posterior.max(),
        predictive_weights: step.predictive,
        posteriors,
        log_evidences,
        evidence_fallback: step.fallback,
    };
    Ok((next, out))
}
