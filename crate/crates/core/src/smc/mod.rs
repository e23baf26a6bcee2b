//! Sequential Monte Carlo ensemble.
//!
//! All candidate models start each step from one shared, equally weighted
//! particle set. Per model: propagate through the model's transition, weight
//! by its likelihood, and estimate its evidence as the incoming-weighted mean
//! likelihood. The model weights are updated from those evidences, and the
//! next shared set is drawn from the augmented set of every model's weighted
//! particles, each scaled by its model's posterior weight.

pub mod models;

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore};

use crate::ensemble::advance_weights;
use crate::error::{Error, Result};
use crate::rng::{tag, StreamSeeder};
use crate::weights::{
    bma_point_estimate, log_sum_exp, normalize_log_weights, PointEstimate, WeightHistory,
    WeightVector,
};
use crate::wtt::WttConfig;

pub use models::{
    GaussianNoise, LinearObservation, LinearTransition, NoiseModel, ObservationMap,
    SplitRegimeObservation, StateSpace, StudentTNoise, ToyTransition, Transition, UniformNoise,
};

/// A candidate model: a transition sampler and an observation log-likelihood.
pub trait StateSpaceModel: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Writes a draw from `p(x_t | x_{t-1} = prev)` into `out`.
    fn sample_transition(&self, prev: &[f64], t: usize, rng: &mut dyn RngCore, out: &mut [f64]);

    /// `ln p(y_t | x_t)`; may be `-inf`.
    fn log_likelihood(&self, y: &[f64], x: &[f64], t: usize) -> f64;
}

pub type ModelRef = Arc<dyn StateSpaceModel>;

/// `N` weighted particles in `d` dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    particles: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, particles: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("particle dimension"));
        }
        if weights.is_empty() {
            return Err(Error::Empty("particle ensemble"));
        }
        if particles.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * weights.len(),
                found: particles.len(),
            });
        }
        // validates the simplex constraint
        crate::weights::WeightVector::new(weights.clone())?;
        Ok(Self {
            dim,
            particles,
            weights,
        })
    }

    pub fn equally_weighted(dim: usize, particles: Vec<f64>) -> Result<Self> {
        if dim == 0 || particles.is_empty() || particles.len() % dim != 0 {
            return Err(Error::Empty("particle ensemble"));
        }
        let n = particles.len() / dim;
        Ok(Self {
            dim,
            particles,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// `n` copies of one state.
    pub fn point_mass(x: &[f64], n: usize) -> Result<Self> {
        Self::equally_weighted(x.len(), x.repeat(n))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weighted_mean(&self) -> DVector<f64> {
        weighted_mean(self.dim, &self.particles, &self.weights)
    }

    /// `1 / Σ u_i²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|u| u * u).sum::<f64>()
    }

    pub fn is_equally_weighted(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| w == u)
    }
}

fn weighted_mean(dim: usize, particles: &[f64], weights: &[f64]) -> DVector<f64> {
    let mut m = DVector::zeros(dim);
    for (x, &w) in particles.chunks_exact(dim).zip(weights) {
        if w != 0.0 {
            for (mj, xj) in m.iter_mut().zip(x) {
                *mj += w * xj;
            }
        }
    }
    m
}

/// Draws every particle through the model's transition; weights are kept.
pub fn propagate<M: StateSpaceModel + ?Sized>(
    model: &M,
    ensemble: &ParticleEnsemble,
    t: usize,
    rng: &mut dyn RngCore,
) -> ParticleEnsemble {
    let d = ensemble.dim;
    let mut out = vec![0.0; ensemble.particles.len()];
    for (prev, next) in ensemble.particles.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        model.sample_transition(prev, t, rng, next);
    }
    ParticleEnsemble {
        dim: d,
        particles: out,
        weights: ensemble.weights.clone(),
    }
}

/// Like [`propagate`], but particle `i` draws from its own sub-stream
/// `(PROPAGATE, t, stream, i)`.
pub fn propagate_streams<M: StateSpaceModel + ?Sized>(
    model: &M,
    ensemble: &ParticleEnsemble,
    t: usize,
    seeder: &StreamSeeder,
    stream: u64,
) -> ParticleEnsemble {
    let d = ensemble.dim;
    let mut out = vec![0.0; ensemble.particles.len()];
    for (i, (prev, next)) in ensemble
        .particles
        .chunks_exact(d)
        .zip(out.chunks_exact_mut(d))
        .enumerate()
    {
        let mut rng = seeder.rng([tag::PROPAGATE, t as u64, stream, i as u64]);
        model.sample_transition(prev, t, &mut rng, next);
    }
    ParticleEnsemble {
        dim: d,
        particles: out,
        weights: ensemble.weights.clone(),
    }
}

/// Normalized posterior particle weights plus the raw log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct Reweighted {
    pub weights: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
}

/// `u_i ∝ u_{t-1,i} · p(y | x_i)`, normalized in the log domain.
///
/// Fails with [`Error::AllZero`] when the likelihood of every particle that
/// still carries weight underflows to zero in double precision.
pub fn reweight<M: StateSpaceModel + ?Sized>(
    model: &M,
    propagated: &ParticleEnsemble,
    y: &[f64],
    t: usize,
) -> Result<Reweighted> {
    let log_likelihoods: Vec<f64> = propagated
        .particles
        .chunks_exact(propagated.dim)
        .map(|x| model.log_likelihood(y, x, t))
        .collect();
    let weights = reweight_from_log_likelihoods(&propagated.weights, &log_likelihoods)?;
    Ok(Reweighted {
        weights,
        log_likelihoods,
    })
}

fn reweight_from_log_likelihoods(incoming: &[f64], log_liks: &[f64]) -> Result<Vec<f64>> {
    if let Some(index) = log_liks.iter().position(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::NonFinite { index });
    }
    let alive = incoming
        .iter()
        .zip(log_liks)
        .any(|(&u, &l)| u > 0.0 && l.exp() > 0.0);
    if !alive {
        return Err(Error::AllZero);
    }
    let log_w: Vec<f64> = incoming
        .iter()
        .zip(log_liks)
        .map(|(&u, &l)| if u == 0.0 { f64::NEG_INFINITY } else { u.ln() + l })
        .collect();
    Ok(normalize_log_weights(&log_w)?.into_vec())
}

/// `ln Σ_i u_i p(y | x_i)`.
pub fn mc_log_evidence(incoming: &[f64], log_likelihoods: &[f64]) -> f64 {
    assert_eq!(incoming.len(), log_likelihoods.len());
    let terms: Vec<f64> = incoming
        .iter()
        .zip(log_likelihoods)
        .map(|(&u, &l)| if u == 0.0 { f64::NEG_INFINITY } else { u.ln() + l })
        .collect();
    log_sum_exp(&terms)
}

/// `Σ_i u_i p(y | x_i)`; zero signals total underflow.
pub fn mc_evidence(incoming: &[f64], likelihoods: &[f64]) -> f64 {
    let ll: Vec<f64> = likelihoods.iter().map(|l| l.ln()).collect();
    mc_log_evidence(incoming, &ll).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResamplingScheme {
    /// Independent inverse-CDF draws, one uniform per output particle.
    #[default]
    Multinomial,
    /// One uniform offset and `n` evenly spaced points.
    Systematic,
}

impl std::str::FromStr for ResamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multinomial" => Ok(Self::Multinomial),
            "systematic" => Ok(Self::Systematic),
            other => Err(Error::InvalidParameter(format!("unknown resampling scheme '{other}'"))),
        }
    }
}

/// Draws `n_out` equally weighted particles from a weighted set.
pub fn resample(
    source: &ParticleEnsemble,
    n_out: usize,
    scheme: ResamplingScheme,
    rng: &mut dyn RngCore,
) -> ParticleEnsemble {
    let d = source.dim;
    let mut cdf = Vec::with_capacity(source.len());
    let mut acc = 0.0;
    for &w in &source.weights {
        acc += w;
        cdf.push(acc);
    }
    let last_alive = source
        .weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(source.len() - 1);
    // first j with v < cdf[j]; v beyond the rounded total maps to the last live particle
    let pick = |v: f64| cdf.partition_point(|&c| c <= v).min(last_alive);
    let mut particles = Vec::with_capacity(n_out * d);
    match scheme {
        ResamplingScheme::Multinomial => {
            for _ in 0..n_out {
                let v: f64 = rng.random();
                particles.extend_from_slice(source.particle(pick(v)));
            }
        }
        ResamplingScheme::Systematic => {
            let step = 1.0 / n_out as f64;
            let u0: f64 = rng.random::<f64>() * step;
            for n in 0..n_out {
                particles.extend_from_slice(source.particle(pick(u0 + n as f64 * step)));
            }
        }
    }
    ParticleEnsemble {
        dim: d,
        particles,
        weights: vec![1.0 / n_out as f64; n_out],
    }
}

/// State carried between SMC ensemble steps.
#[derive(Debug, Clone)]
pub struct SmcEnsembleState {
    pub ensemble: ParticleEnsemble,
    pub model_weights: WeightVector,
    pub history: WeightHistory,
    /// Propagate once with the first model's transition and share the
    /// particles across the pool. Only valid when every model has the same
    /// transition prior.
    pub shared_transition: bool,
    pub resampling: ResamplingScheme,
    /// Give each model its own propagation sub-stream. When false every model
    /// propagates with the stream of model 0, which makes the generic path
    /// reproduce the shared path exactly for identical transitions.
    pub stream_per_model: bool,
    pub weight_floor: f64,
}

impl SmcEnsembleState {
    pub fn new(ensemble: ParticleEnsemble, weights: WeightVector) -> Self {
        Self {
            ensemble,
            history: WeightHistory::new(weights.clone()),
            model_weights: weights,
            shared_transition: false,
            resampling: ResamplingScheme::Multinomial,
            stream_per_model: true,
            weight_floor: 0.0,
        }
    }

    pub fn uniform(ensemble: ParticleEnsemble, k: usize) -> Self {
        Self::new(ensemble, WeightVector::uniform(k))
    }

    pub fn with_shared_transition(mut self, shared: bool) -> Self {
        self.shared_transition = shared;
        self
    }

    pub fn with_resampling(mut self, scheme: ResamplingScheme) -> Self {
        self.resampling = scheme;
        self
    }

    pub fn with_weight_floor(mut self, floor: f64) -> Self {
        self.weight_floor = floor;
        self
    }

    pub fn with_stream_per_model(mut self, per_model: bool) -> Self {
        self.stream_per_model = per_model;
        self
    }
}

/// Per-step diagnostics of the SMC ensemble.
#[derive(Debug, Clone)]
pub struct SmcStepOutput {
    pub estimate: PointEstimate,
    pub per_model_estimates: Vec<PointEstimate>,
    /// `ln Σ_i u_{t-1,i} p_k(y_t | x_{k,t,i})`, `-inf` when model `k` underflowed.
    pub log_evidences: Vec<f64>,
    pub predictive_weights: WeightVector,
    /// Effective sample size of each model's reweighted particles.
    pub ess: Vec<f64>,
    /// Models whose likelihood underflowed for every particle.
    pub underflowed: Vec<bool>,
    pub evidence_fallback: bool,
    /// `Σ_k Σ_i w_k u_{k,i}` over the augmented set before resampling.
    pub augmented_weight_sum: f64,
}

impl SmcStepOutput {
    pub fn evidences(&self) -> Vec<f64> {
        self.log_evidences.iter().map(|l| l.exp()).collect()
    }
}

/// One step of the SMC ensemble at time `t` with observation `y`.
pub fn smc_bdemm_step(
    state: &SmcEnsembleState,
    pool: &[ModelRef],
    y: &[f64],
    t: usize,
    wtt: &WttConfig,
    seeder: &StreamSeeder,
) -> Result<(SmcEnsembleState, SmcStepOutput)> {
    let k = state.model_weights.len();
    if pool.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: pool.len(),
        });
    }
    let incoming = &state.ensemble.weights;
    let n = state.ensemble.len();
    let d = state.ensemble.dim;

    let mut propagated: Vec<Arc<ParticleEnsemble>> = Vec::with_capacity(k);
    let mut post_weights = Vec::with_capacity(k);
    let mut log_evidences = Vec::with_capacity(k);
    let mut per_model_estimates = Vec::with_capacity(k);
    let mut ess = Vec::with_capacity(k);
    let mut underflowed = Vec::with_capacity(k);
    for (j, model) in pool.iter().enumerate() {
        if model.state_dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: model.state_dim(),
            });
        }
        let particles = if state.shared_transition && j > 0 {
            Arc::clone(&propagated[0])
        } else {
            let stream = if state.stream_per_model { j as u64 } else { 0 };
            Arc::new(propagate_streams(model.as_ref(), &state.ensemble, t, seeder, stream))
        };
        let log_liks: Vec<f64> = particles
            .particles
            .chunks_exact(d)
            .map(|x| model.log_likelihood(y, x, t))
            .collect();
        let (u, log_ev, dead) = match reweight_from_log_likelihoods(incoming, &log_liks) {
            Ok(u) => {
                let le = mc_log_evidence(incoming, &log_liks);
                (u, le, false)
            }
            // an unrepresentable likelihood carries no information: keep the
            // prior particle weights for this model and give it zero evidence
            Err(Error::AllZero) => (incoming.clone(), f64::NEG_INFINITY, true),
            Err(e) => return Err(e),
        };
        per_model_estimates.push(weighted_mean(d, &particles.particles, &u));
        ess.push(1.0 / u.iter().map(|x| x * x).sum::<f64>());
        post_weights.push(u);
        log_evidences.push(log_ev);
        underflowed.push(dead);
        propagated.push(particles);
    }

    let step = advance_weights(&state.history, wtt, &log_evidences, state.weight_floor)?;
    let estimate = bma_point_estimate(&per_model_estimates, &step.posterior)?;

    let mut aug_particles = Vec::with_capacity(k * n * d);
    let mut aug_weights = Vec::with_capacity(k * n);
    for (j, (parts, u)) in propagated.iter().zip(&post_weights).enumerate() {
        let wk = step.posterior[j];
        aug_particles.extend_from_slice(&parts.particles);
        aug_weights.extend(u.iter().map(|ui| wk * ui));
    }
    let augmented_weight_sum: f64 = aug_weights.iter().sum();
    let augmented = ParticleEnsemble {
        dim: d,
        particles: aug_particles,
        weights: aug_weights,
    };
    let mut rs_rng = seeder.rng([tag::RESAMPLE, t as u64, 0, 0]);
    let ensemble = resample(&augmented, n, state.resampling, &mut rs_rng);

    let mut history = state.history.clone();
    history.push(step.posterior.clone())?;
    let next = SmcEnsembleState {
        ensemble,
        model_weights: step.posterior,
        history,
        ..state.clone()
    };
    Ok((
        next,
        SmcStepOutput {
            estimate,
            per_model_estimates,
            log_evidences,
            predictive_weights: step.predictive,
            ess,
            underflowed,
            evidence_fallback: step.fallback,
            augmented_weight_sum,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `x' = x + shift + N(0, noise²)`, `y ~ N(x, 1)`.
    struct Shift {
        shift: f64,
        noise: f64,
    }

    impl StateSpaceModel for Shift {
        fn state_dim(&self) -> usize {
            1
        }
        fn sample_transition(&self, prev: &[f64], _t: usize, rng: &mut dyn RngCore, out: &mut [f64]) {
            let z: f64 = if self.noise > 0.0 {
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
            } else {
                0.0
            };
            out[0] = prev[0] + self.shift + self.noise * z;
        }
        fn log_likelihood(&self, y: &[f64], x: &[f64], _t: usize) -> f64 {
            -0.5 * (y[0] - x[0]).powi(2)
        }
    }

    fn ens(xs: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble::equally_weighted(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn propagate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = ens(&[0.0, 1.0]);
        let still = propagate(&Shift { shift: 0.0, noise: 0.0 }, &e, 1, &mut rng);
        assert_eq!(still, e);
        let moved = propagate(&Shift { shift: 1.0, noise: 0.0 }, &e, 1, &mut rng);
        assert_eq!(moved.particles(), &[1.0, 2.0]);

        let noisy = Shift { shift: 0.0, noise: 1.0 };
        let a = propagate(&noisy, &e, 1, &mut ChaCha8Rng::seed_from_u64(7));
        let b = propagate(&noisy, &e, 1, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert_ne!(a, e);
    }

    #[test]
    fn reweight_examples() {
        let flat = reweight_from_log_likelihoods(&[0.25; 4], &[-1.0; 4]).unwrap();
        assert!(flat.iter().all(|&u| (u - 0.25).abs() < 1e-15));

        let two = reweight_from_log_likelihoods(&[0.5, 0.5], &[0.2f64.ln(), 0.6f64.ln()]).unwrap();
        assert!((two[0] - 0.25).abs() < 1e-15 && (two[1] - 0.75).abs() < 1e-15);

        let stuck = reweight_from_log_likelihoods(&[1.0, 0.0], &[-3.0, 2.0]).unwrap();
        assert_eq!(stuck, vec![1.0, 0.0]);

        assert_eq!(
            reweight_from_log_likelihoods(&[0.5, 0.5], &[-800.0, -1e6]),
            Err(Error::AllZero)
        );
        // a particle that carries no weight cannot keep the set alive
        assert_eq!(
            reweight_from_log_likelihoods(&[1.0, 0.0], &[-800.0, 0.0]),
            Err(Error::AllZero)
        );
    }

    #[test]
    fn reweight_through_model() {
        let e = ens(&[0.0, 2.0]);
        let r = reweight(&Shift { shift: 0.0, noise: 0.0 }, &e, &[1.0], 1).unwrap();
        assert!((r.weights[0] - 0.5).abs() < 1e-15);
        assert_eq!(r.log_likelihoods, vec![-0.5, -0.5]);
    }

    #[test]
    fn evidence_examples() {
        assert!((mc_evidence(&[0.5, 0.5], &[2.0, 4.0]) - 3.0).abs() < 1e-14);
        assert!((mc_evidence(&[1.0, 0.0], &[5.0, 99.0]) - 5.0).abs() < 1e-14);
        assert!((mc_evidence(&[1.0], &[0.37]) - 0.37).abs() < 1e-15);
        assert_eq!(mc_evidence(&[0.5, 0.5], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn resample_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src = ParticleEnsemble::new(1, vec![10.0, 20.0, 30.0], vec![1.0, 0.0, 0.0]).unwrap();
        for scheme in [ResamplingScheme::Multinomial, ResamplingScheme::Systematic] {
            let out = resample(&src, 50, scheme, &mut rng);
            assert!(out.particles().iter().all(|&x| x == 10.0));
            assert!(out.is_equally_weighted());
        }

        let single = ens(&[4.0]);
        let out = resample(&single, 7, ResamplingScheme::Multinomial, &mut rng);
        assert_eq!(out.particles(), &[4.0; 7]);

        let coin = ens(&[0.0, 1.0]);
        let n = 100_000;
        let out = resample(&coin, n, ResamplingScheme::Multinomial, &mut rng);
        let frac = out.particles().iter().sum::<f64>() / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn resample_never_picks_dead_tail() {
        let src = ParticleEnsemble {
            dim: 1,
            particles: vec![1.0, 2.0, 3.0],
            weights: vec![0.3, 0.7 - 1e-17, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = resample(&src, 10_000, ResamplingScheme::Multinomial, &mut rng);
        assert!(out.particles().iter().all(|&x| x != 3.0));
    }

    fn shift_pool(shifts: &[f64]) -> Vec<ModelRef> {
        shifts
            .iter()
            .map(|&s| Arc::new(Shift { shift: s, noise: 1.0 }) as ModelRef)
            .collect()
    }

    #[test]
    fn step_keeps_invariants() {
        let pool = shift_pool(&[0.0, 1.0, -1.0]);
        let seeder = StreamSeeder::new(5);
        let mut state = SmcEnsembleState::uniform(ens(&vec![0.0; 64]), 3);
        for t in 1..=20 {
            let obs = [t as f64 * 0.5];
            let (next, out) =
                smc_bdemm_step(&state, &pool, &obs, t, &WttConfig::forgetting(0.9), &seeder).unwrap();
            assert!((out.augmented_weight_sum - 1.0).abs() < 1e-10);
            assert!(next.ensemble.is_equally_weighted());
            let s: f64 = next.model_weights.as_slice().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            state = next;
        }
        // data drift +0.5 per step sits between the first two models
        assert!(state.model_weights[2] < 0.05);
    }

    #[test]
    fn identical_models_keep_wtt_weights() {
        let pool = shift_pool(&[0.0, 0.0]);
        let seeder = StreamSeeder::new(9);
        let state = SmcEnsembleState::new(ens(&[0.0; 32]), WeightVector::new(vec![0.2, 0.8]).unwrap())
            .with_shared_transition(true);
        let (next, out) =
            smc_bdemm_step(&state, &pool, &[0.3], 1, &WttConfig::forgetting(0.5), &seeder).unwrap();
        assert_eq!(out.log_evidences[0], out.log_evidences[1]);
        for k in 0..2 {
            assert!((next.model_weights[k] - out.predictive_weights[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn total_underflow_falls_back() {
        let pool = shift_pool(&[0.0]);
        let seeder = StreamSeeder::new(1);
        let state = SmcEnsembleState::uniform(ens(&[0.0; 16]), 1);
        let (next, out) = smc_bdemm_step(&state, &pool, &[1e4], 1, &WttConfig::identity(), &seeder).unwrap();
        assert!(out.evidence_fallback && out.underflowed[0]);
        assert_eq!(out.log_evidences[0], f64::NEG_INFINITY);
        assert_eq!(next.model_weights.as_slice(), &[1.0]);
        assert!(next.ensemble.is_equally_weighted());
        // estimate is the prior-weighted mean of the propagated particles
        let prop = propagate_streams(pool[0].as_ref(), &state.ensemble, 1, &seeder, 0);
        assert_eq!(out.estimate, prop.weighted_mean());
    }
}
