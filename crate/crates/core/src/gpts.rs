//! Gaussian-process time-series models and the INTEL engine.
//!
//! Each candidate model is a GP over time with a squared-exponential kernel,
//! a constant mean, and Gaussian observation noise. Every step each model
//! predicts the next observation from a sliding window; the density it gave
//! the observation that actually arrived is its evidence. The pool's forecast
//! is a weighted product of the per-model predictive Gaussians.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::advance_weights;
use crate::error::{Error, Result};
use crate::weights::{WeightHistory, WeightVector};
use crate::wtt::{apply_wtt, WttConfig};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
const VAR_FLOOR: f64 = 1e-12;

/// `y(t) = f(t) + η`, `f ~ GP(mean, SE(signal_variance, lengthscale))`,
/// `η ~ N(0, noise_var)`, conditioned on the last `window` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GptsModel {
    pub mean: f64,
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub noise_var: f64,
    pub window: usize,
}

impl GptsModel {
    pub fn new(mean: f64, signal_variance: f64, lengthscale: f64, noise_var: f64, window: usize) -> Result<Self> {
        let m = Self {
            mean,
            signal_variance,
            lengthscale,
            noise_var,
            window,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be non-negative, got {}",
                self.noise_var
            )));
        }
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be at least 1".into()));
        }
        if !self.mean.is_finite() {
            return Err(Error::InvalidParameter("mean must be finite".into()));
        }
        Ok(())
    }

    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        let r = (a - b) / self.lengthscale;
        self.signal_variance * (-0.5 * r * r).exp()
    }

    /// Copies of `self` with the noise variance scaled by each factor.
    pub fn perturb_noise(&self, factors: &[f64]) -> Result<Vec<GptsModel>> {
        factors
            .iter()
            .map(|&f| {
                let m = GptsModel {
                    noise_var: self.noise_var * f,
                    ..self.clone()
                };
                m.validate().map(|_| m)
            })
            .collect()
    }

    pub fn prior_predictive(&self) -> PredictiveGaussian {
        PredictiveGaussian {
            mean: self.mean,
            var: self.signal_variance + self.noise_var,
        }
    }
}

/// A univariate Gaussian forecast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveGaussian {
    pub mean: f64,
    pub var: f64,
}

impl PredictiveGaussian {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "predictive needs finite mean and positive variance, got N({mean}, {var})"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let r = y - self.mean;
        -0.5 * ((2.0 * std::f64::consts::PI * self.var).ln() + r * r / self.var)
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }
}

/// Cholesky factor of `m + jitter·I`, escalating the jitter by ×10 from
/// `1e-10·scale` until the factorization succeeds or passes `1e-4`.
pub(crate) fn jittered_cholesky(m: &DMatrix<f64>, scale: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch);
    }
    let n = m.nrows();
    let mut jitter = JITTER_START * scale;
    loop {
        let shifted = m + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch);
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::FactorizationFailure { jitter: jitter / 10.0 });
        }
    }
}

/// GP posterior predictive for the observation at `t_next` given the window.
///
/// `mean = μ + k*ᵀ (K + σ²I)⁻¹ (y − μ)`,
/// `var = k(t*, t*) + σ² − k*ᵀ (K + σ²I)⁻¹ k*`.
pub fn gp_predict_next(model: &GptsModel, times: &[f64], obs: &[f64], t_next: f64) -> Result<PredictiveGaussian> {
    if times.len() != obs.len() {
        return Err(Error::LengthMismatch {
            left: times.len(),
            right: obs.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::Empty("gp window"));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("window times must be strictly increasing".into()));
    }
    let n = times.len();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        model.kernel(times[i], times[j]) + if i == j { model.noise_var } else { 0.0 }
    });
    let ch = jittered_cholesky(&gram, model.signal_variance)?;
    let k_star = DVector::from_fn(n, |i, _| model.kernel(times[i], t_next));
    let resid = DVector::from_fn(n, |i, _| obs[i] - model.mean);
    let alpha = ch.solve(&resid);
    let v = ch
        .l_dirty()
        .solve_lower_triangular(&k_star)
        .ok_or(Error::FactorizationFailure { jitter: 0.0 })?;
    let mean = model.mean + k_star.dot(&alpha);
    let var = (model.kernel(t_next, t_next) + model.noise_var - v.norm_squared()).max(0.0);
    Ok(PredictiveGaussian { mean, var })
}

/// Weighted product of Gaussian experts, renormalized:
/// precision `λ = Σ ω_k/σ_k²`, mean `Σ (ω_k μ_k/σ_k²) / λ`.
pub fn poe_combine(predictives: &[PredictiveGaussian], weights: &WeightVector) -> Result<PredictiveGaussian> {
    if predictives.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: predictives.len(),
        });
    }
    // precisions relative to the first active expert, so a lone expert with
    // unit weight comes back bit-for-bit
    let Some(reference) = predictives
        .iter()
        .zip(weights.as_slice())
        .find(|(_, &w)| w > 0.0)
        .map(|(p, _)| p.var)
    else {
        return Err(Error::ZeroPrecision);
    };
    let mut precision = 0.0;
    let mut weighted = 0.0;
    for (p, &w) in predictives.iter().zip(weights.as_slice()) {
        if w == 0.0 {
            continue;
        }
        let r = w * (reference / p.var);
        precision += r;
        weighted += r * p.mean;
    }
    if !(precision > 0.0) || !precision.is_finite() {
        return Err(Error::ZeroPrecision);
    }
    Ok(PredictiveGaussian {
        mean: weighted / precision,
        var: reference / precision,
    })
}

/// State carried between INTEL steps.
#[derive(Debug, Clone)]
pub struct IntelState {
    /// `(time, observation)` pairs, oldest first, at most the pool's largest window.
    pub buffer: VecDeque<(f64, f64)>,
    pub capacity: usize,
    pub model_weights: WeightVector,
    pub history: WeightHistory,
    /// Each model's forecast for the next observation.
    pub pending: Vec<PredictiveGaussian>,
    pub weight_floor: f64,
}

impl IntelState {
    /// Empty buffer; pending forecasts are the models' prior predictives.
    pub fn new(pool: &[GptsModel], weights: WeightVector) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Empty("model pool"));
        }
        if pool.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                found: pool.len(),
            });
        }
        for m in pool {
            m.validate()?;
        }
        Ok(Self {
            buffer: VecDeque::new(),
            capacity: pool.iter().map(|m| m.window).max().unwrap_or(1),
            history: WeightHistory::new(weights.clone()),
            model_weights: weights,
            pending: pool.iter().map(GptsModel::prior_predictive).collect(),
            weight_floor: 0.0,
        })
    }

    pub fn uniform(pool: &[GptsModel]) -> Result<Self> {
        Self::new(pool, WeightVector::uniform(pool.len()))
    }

    pub fn with_weight_floor(mut self, floor: f64) -> Self {
        self.weight_floor = floor;
        self
    }

    /// Pool forecast for the next observation before any data has arrived.
    pub fn initial_forecast(&self, wtt: &WttConfig) -> Result<PredictiveGaussian> {
        poe_combine(&self.pending, &apply_wtt(wtt, &self.history)?)
    }
}

/// Diagnostics of one INTEL step.
#[derive(Debug, Clone)]
pub struct IntelStepOutput {
    /// Fused forecast for the observation at `t + 1`.
    pub forecast: PredictiveGaussian,
    pub per_model: Vec<PredictiveGaussian>,
    /// Log density of `y_t` under each model's previous forecast.
    pub log_evidences: Vec<f64>,
    /// Weights used as POE exponents for `forecast`.
    pub fusion_weights: WeightVector,
    pub evidence_fallback: bool,
}

/// Absorbs `y_t` observed at time `t` and forecasts `y_{t+1}`.
pub fn intel_step(
    state: &IntelState,
    pool: &[GptsModel],
    y: f64,
    t: f64,
    wtt: &WttConfig,
) -> Result<(IntelState, IntelStepOutput)> {
    let k = state.model_weights.len();
    if pool.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: pool.len(),
        });
    }
    if !y.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    if let Some(&(last, _)) = state.buffer.back() {
        if !(t > last) {
            return Err(Error::InvalidParameter(format!(
                "time {t} does not follow the previous time {last}"
            )));
        }
    }
    let log_evidences: Vec<f64> = state.pending.iter().map(|p| p.log_density(y)).collect();
    let step = advance_weights(&state.history, wtt, &log_evidences, state.weight_floor)?;

    let mut buffer = state.buffer.clone();
    buffer.push_back((t, y));
    while buffer.len() > state.capacity {
        buffer.pop_front();
    }
    let (times, obs): (Vec<f64>, Vec<f64>) = buffer.iter().copied().unzip();
    let t_next = t + 1.0;
    let per_model = pool
        .iter()
        .map(|m| {
            let start = times.len().saturating_sub(m.window);
            // a noise-free model can predict with zero variance at a seen time
            gp_predict_next(m, &times[start..], &obs[start..], t_next).map(|p| PredictiveGaussian {
                var: p.var.max(VAR_FLOOR * m.signal_variance),
                ..p
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut history = state.history.clone();
    history.push(step.posterior.clone())?;
    let fusion_weights = apply_wtt(wtt, &history)?;
    let forecast = poe_combine(&per_model, &fusion_weights)?;
    let next = IntelState {
        buffer,
        capacity: state.capacity,
        model_weights: step.posterior,
        history,
        pending: per_model.clone(),
        weight_floor: state.weight_floor,
    };
    Ok((
        next,
        IntelStepOutput {
            forecast,
            per_model,
            log_evidences,
            fusion_weights,
            evidence_fallback: step.fallback,
        },
    ))
}
