//! The nonlinear toy benchmark with intermittent outliers.
//!
//! The state follows `x_t = 1 + sin(0.04π t) + 0.5 x_{t-1} + u_t` with Gamma
//! noise `u_t`, and is observed through a map that switches from quadratic to
//! linear after step 30. Observation noise is Gaussian except at a fixed list
//! of steps where a large one-sided Uniform outlier is added instead.
//!
//! Three particle filters are compared per run: the two-model ensemble
//! (Gaussian-noise model and a wide Uniform-noise model sharing one
//! transition), and each of the two models on its own.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::mse;
use crate::error::{Error, Result};
use crate::rng::{tag, StreamSeeder};
use crate::smc::{
    smc_bdemm_step, GaussianNoise, ModelRef, ParticleEnsemble, ResamplingScheme, SmcEnsembleState,
    SplitRegimeObservation, StateSpace, ToyTransition, UniformNoise,
};
use crate::wtt::WttConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub x0: f64,
    pub gamma_shape: f64,
    /// Scale (not rate) of the Gamma process noise.
    pub gamma_scale: f64,
    /// Variance of the Gaussian observation noise, in the data and in the
    /// Gaussian-noise model.
    pub gauss_noise_var: f64,
    pub outlier_steps: Vec<usize>,
    pub outlier_low: f64,
    pub outlier_high: f64,
    /// The robust model assumes `Uniform(-w, w)` observation noise.
    pub robust_half_width: f64,
    pub switch_step: usize,
    pub particles: usize,
    pub wtt: WttConfig,
    pub weight_floor: f64,
    pub resampling: ResamplingScheme,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            horizon: 60,
            runs: 30,
            seed: 0,
            x0: 1.0,
            gamma_shape: 3.0,
            gamma_scale: 0.5,
            gauss_noise_var: 0.4,
            outlier_steps: vec![7, 8, 9, 20, 37, 38, 39, 50],
            outlier_low: 40.0,
            outlier_high: 50.0,
            robust_half_width: 50.0,
            switch_step: 30,
            particles: 200,
            wtt: WttConfig::forgetting(0.9),
            weight_floor: 2e-2,
            resampling: ResamplingScheme::Multinomial,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.horizon == 0 || self.runs == 0 || self.particles == 0 {
            return bad("horizon, runs and particles must be at least 1".into());
        }
        if let Some(&s) = self.outlier_steps.iter().find(|&&s| s == 0 || s > self.horizon) {
            return bad(format!("outlier step {s} outside 1..={}", self.horizon));
        }
        if !(self.gamma_shape > 0.0 && self.gamma_scale > 0.0) {
            return bad("gamma shape and scale must be positive".into());
        }
        if !(self.gauss_noise_var > 0.0 && self.gauss_noise_var.is_finite()) {
            return bad("gauss_noise_var must be positive".into());
        }
        if !(self.outlier_low < self.outlier_high) || !(self.robust_half_width > 0.0) {
            return bad("outlier range and robust half-width must be non-degenerate".into());
        }
        if !self.x0.is_finite() {
            return bad("x0 must be finite".into());
        }
        self.wtt.validate(2)
    }

    pub fn is_outlier(&self, t: usize) -> bool {
        self.outlier_steps.contains(&t)
    }

    fn transition(&self) -> Result<Arc<ToyTransition>> {
        Ok(Arc::new(ToyTransition::new(self.gamma_shape, self.gamma_scale)?))
    }

    /// `[Gaussian-noise model, Uniform-noise model]`, sharing one transition.
    pub fn model_pool(&self) -> Result<Vec<ModelRef>> {
        let base = StateSpace::new(
            self.transition()?,
            Arc::new(SplitRegimeObservation::new(self.switch_step)),
            Arc::new(GaussianNoise::scalar(self.gauss_noise_var)?),
        )?;
        let robust = base.with_noise(Arc::new(UniformNoise::new(
            1,
            -self.robust_half_width,
            self.robust_half_width,
        )?))?;
        Ok(vec![Arc::new(base), Arc::new(robust)])
    }
}

/// One simulated trajectory, indexed by step `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySeries {
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
    pub outlier_mask: Vec<bool>,
}

/// Simulates states and observations for steps `1..=T` from `x_0 = config.x0`.
pub fn gen_toy_series(config: &ToyConfig, run_seed: u64) -> Result<ToySeries> {
    config.validate()?;
    let transition = config.transition()?;
    let h = SplitRegimeObservation::new(config.switch_step);
    let gauss = Normal::new(0.0, config.gauss_noise_var.sqrt())
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = StreamSeeder::new(run_seed).rng([tag::DATA, 0, 0, 0]);
    let t_max = config.horizon;
    let mut series = ToySeries {
        states: Vec::with_capacity(t_max),
        observations: Vec::with_capacity(t_max),
        outlier_mask: Vec::with_capacity(t_max),
    };
    let mut x = config.x0;
    for t in 1..=t_max {
        x = ToyTransition::drift(x, t) + transition.sample_noise(&mut rng);
        let outlier = config.is_outlier(t);
        let noise = if outlier {
            rng.random_range(config.outlier_low..config.outlier_high)
        } else {
            gauss.sample(&mut rng)
        };
        series.states.push(x);
        series.observations.push(h.eval(x, t) + noise);
        series.outlier_mask.push(outlier);
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyAlgorithm {
    /// Both models, weighted by the ensemble recursion.
    Ensemble,
    /// Gaussian-noise model alone.
    GaussianOnly,
    /// Uniform-noise model alone.
    UniformOnly,
}

impl ToyAlgorithm {
    pub const ALL: [ToyAlgorithm; 3] = [Self::Ensemble, Self::GaussianOnly, Self::UniformOnly];

    pub fn label(self) -> &'static str {
        match self {
            Self::Ensemble => "BDEMM",
            Self::GaussianOnly => "SMC-I",
            Self::UniformOnly => "SMC-II",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Posterior-mean estimates and per-step model weights of one filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub estimates: Vec<f64>,
    pub model_weights: Vec<Vec<f64>>,
}

/// Runs one particle filter over a series, starting from a point mass at `x0`.
pub fn run_toy_filter(
    config: &ToyConfig,
    series: &ToySeries,
    algorithm: ToyAlgorithm,
    seeder: &StreamSeeder,
) -> Result<FilterTrace> {
    let full = config.model_pool()?;
    let pool: Vec<ModelRef> = match algorithm {
        ToyAlgorithm::Ensemble => full,
        ToyAlgorithm::GaussianOnly => vec![Arc::clone(&full[0])],
        ToyAlgorithm::UniformOnly => vec![Arc::clone(&full[1])],
    };
    let start = ParticleEnsemble::point_mass(&[config.x0], config.particles)?;
    let mut state = SmcEnsembleState::uniform(start, pool.len())
        .with_shared_transition(true)
        .with_resampling(config.resampling)
        .with_weight_floor(config.weight_floor);
    let mut trace = FilterTrace {
        estimates: Vec::with_capacity(series.observations.len()),
        model_weights: Vec::with_capacity(series.observations.len()),
    };
    for (i, &y) in series.observations.iter().enumerate() {
        let (next, out) = smc_bdemm_step(&state, &pool, &[y], i + 1, &config.wtt, seeder)?;
        trace.estimates.push(out.estimate[0]);
        trace.model_weights.push(next.model_weights.as_slice().to_vec());
        state = next;
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub run: usize,
    pub algorithm: ToyAlgorithm,
    pub message: String,
}

/// Outcome of one run: MSE per algorithm and the ensemble's weight path.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub mse: [Option<f64>; 3],
    pub ensemble_weights: Option<Vec<Vec<f64>>>,
    pub failures: Vec<RunFailure>,
}

fn run_one(config: &ToyConfig, run: usize) -> Result<RunOutcome> {
    let run_seeder = StreamSeeder::new(config.seed).child([tag::RUN, run as u64, 0, 0]);
    let series = gen_toy_series(config, run_seeder.derive_seed([tag::DATA, 0, 0, 0]))?;
    let mut outcome = RunOutcome {
        mse: [None; 3],
        ensemble_weights: None,
        failures: Vec::new(),
    };
    for alg in ToyAlgorithm::ALL {
        let seeder = run_seeder.child([tag::ALGORITHM, alg.index() as u64, 0, 0]);
        match run_toy_filter(config, &series, alg, &seeder) {
            Ok(trace) => {
                outcome.mse[alg.index()] = Some(mse(&trace.estimates, &series.states)?);
                if alg == ToyAlgorithm::Ensemble {
                    outcome.ensemble_weights = Some(trace.model_weights);
                }
            }
            Err(e) => outcome.failures.push(RunFailure {
                run,
                algorithm: alg,
                message: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ToyConfig,
    pub runs: Vec<RunOutcome>,
    /// Ensemble model weights `[Gaussian, Uniform]` per step, averaged over
    /// the runs where the ensemble completed.
    pub mean_model_probs: Vec<[f64; 2]>,
}

/// Mean and (unbiased) variance over the finite entries.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

impl RunReport {
    pub fn mse_values(&self, alg: ToyAlgorithm) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.mse[alg.index()]).collect()
    }

    /// `(mean, variance)` of the per-run MSE.
    pub fn mse_summary(&self, alg: ToyAlgorithm) -> (f64, f64) {
        mean_var(&self.mse_values(alg))
    }

    pub fn failures(&self) -> Vec<&RunFailure> {
        self.runs.iter().flat_map(|r| &r.failures).collect()
    }

    /// Strict ordering of mean MSE: ensemble < Gaussian-only < Uniform-only.
    pub fn ordering_holds(&self) -> bool {
        let [a, b, c] = ToyAlgorithm::ALL.map(|alg| self.mse_summary(alg).0);
        a < b && b < c
    }

    /// Mean Uniform-model weight at outlier steps divided by its mean at the
    /// other steps.
    pub fn outlier_response_ratio(&self) -> f64 {
        let (mut on, mut off) = (Vec::new(), Vec::new());
        for (i, p) in self.mean_model_probs.iter().enumerate() {
            if self.config.is_outlier(i + 1) {
                on.push(p[1]);
            } else {
                off.push(p[1]);
            }
        }
        mean_var(&on).0 / mean_var(&off).0
    }

    pub fn summary_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "toy experiment");
        let _ = writeln!(
            s,
            "runs={} horizon={} particles={} seed={} wtt={:?} alpha={} floor={}",
            c.runs,
            c.horizon,
            c.particles,
            c.seed,
            c.wtt.kind,
            c.wtt.alpha.map_or("-".to_string(), |a| a.to_string()),
            c.weight_floor
        );
        let _ = writeln!(
            s,
            "gamma_shape={} gamma_scale={} gauss_noise_var={} outliers={:?} U({}, {})",
            c.gamma_shape, c.gamma_scale, c.gauss_noise_var, c.outlier_steps, c.outlier_low, c.outlier_high
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<8} {:>12} {:>12} {:>6}", "method", "mean_mse", "var_mse", "n");
        for alg in ToyAlgorithm::ALL {
            let (m, v) = self.mse_summary(alg);
            let _ = writeln!(s, "{:<8} {:>12.5} {:>12.5} {:>6}", alg.label(), m, v, self.mse_values(alg).len());
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "ordering BDEMM < SMC-I < SMC-II: {}", self.ordering_holds());
        let _ = writeln!(s, "uniform-model weight ratio, outlier vs other steps: {:.4}", self.outlier_response_ratio());
        let failures = self.failures();
        let _ = writeln!(s, "failures: {}", failures.len());
        for f in failures {
            let _ = writeln!(s, "  run {} {}: {}", f.run, f.algorithm.label(), f.message);
        }
        s
    }

    pub fn mse_csv(&self) -> String {
        let mut s = String::from("run,bdemm,smc_i,smc_ii\n");
        for (i, r) in self.runs.iter().enumerate() {
            let cell = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{}", i, cell(r.mse[0]), cell(r.mse[1]), cell(r.mse[2]));
        }
        s
    }

    pub fn model_probs_csv(&self) -> String {
        let mut s = String::from("step,outlier,p_gaussian,p_uniform\n");
        for (i, p) in self.mean_model_probs.iter().enumerate() {
            let t = i + 1;
            let _ = writeln!(s, "{},{},{},{}", t, u8::from(self.config.is_outlier(t)), p[0], p[1]);
        }
        s
    }

    /// Writes `report.txt`, `mse.csv` and `model_probs.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.summary_text())?;
        std::fs::write(dir.join("mse.csv"), self.mse_csv())?;
        std::fs::write(dir.join("model_probs.csv"), self.model_probs_csv())?;
        Ok(())
    }
}

/// Runs every algorithm on `config.runs` independent series.
///
/// Runs execute in parallel, each with its own sub-streams derived from
/// `config.seed`, so the report does not depend on the thread count. A filter
/// that fails is recorded in the report rather than aborting the experiment.
pub fn run_toy_experiment(config: &ToyConfig) -> Result<RunReport> {
    config.validate()?;
    let runs = (0..config.runs)
        .into_par_iter()
        .map(|r| run_one(config, r))
        .collect::<Result<Vec<_>>>()?;
    let mut mean_model_probs = vec![[0.0; 2]; config.horizon];
    let completed: Vec<&Vec<Vec<f64>>> = runs.iter().filter_map(|r| r.ensemble_weights.as_ref()).collect();
    for w in &completed {
        for (acc, row) in mean_model_probs.iter_mut().zip(w.iter()) {
            acc[0] += row[0];
            acc[1] += row[1];
        }
    }
    let n = completed.len().max(1) as f64;
    for acc in &mut mean_model_probs {
        acc[0] /= n;
        acc[1] /= n;
    }
    Ok(RunReport {
        config: config.clone(),
        runs,
        mean_model_probs,
    })
}
