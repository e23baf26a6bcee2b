//! Runs any of the three engines over a CSV file of observations.
//!
//! Each input row is one observation vector. The output has one row per
//! input row: `step`, the estimate columns, one weight column per model, and
//! one log-evidence column per model. An input whose first row contains no
//! numbers is treated as having a header.
//!
//! Configuration keys (all engines): `engine` (`kf`, `smc`, `intel`),
//! `pool.size`, `weights.initial`, `weights.floor`, and the `wtt.*` keys.
//!
//! * `kf`: `state.dim`, `model.K.a|q|b|r` (row-major), `prior.mean`, `prior.cov`.
//! * `smc`: `state.dim`, `particles`, `seed`, `resampling`,
//!   `shared_transition`, `prior.mean`, `prior.cov`, and per model
//!   `model.K.kind` (`linear` with `a`, `q`, `b`; or `toy` with
//!   `gamma_shape`, `gamma_scale`, `switch_step`) plus `model.K.noise`
//!   (`gaussian` with `r`; `uniform` with `low`, `high`; `student` with
//!   `nu`, `scale`).
//! * `intel`: either `gp.mean|signal_variance|lengthscale|noise_var|window`
//!   with `gp.noise_factors` to perturb the noise variance, or explicit
//!   `model.K.*` entries with the same names. The estimate columns are the
//!   fused forecast mean and variance for the next step.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{BenchError, FlatConfig};
use crate::gaussian::GaussianBelief;
use crate::gpts::{intel_step, GptsModel, IntelState};
use crate::kf::{kf_bdemm_step, KfEnsembleState, LinearGaussianModel};
use crate::rng::{tag, StreamSeeder};
use crate::smc::models::psd_sqrt;
use crate::smc::{
    smc_bdemm_step, GaussianNoise, LinearObservation, LinearTransition, ModelRef, NoiseModel,
    ObservationMap, ParticleEnsemble, ResamplingScheme, SmcEnsembleState, SplitRegimeObservation,
    StateSpace, StudentTNoise, ToyTransition, Transition, UniformNoise,
};
use crate::weights::WeightVector;
use crate::wtt::WttConfig;

/// Reads numeric rows; the error names the 1-based line of the bad row.
pub fn read_observations(input: impl Read) -> Result<Vec<Vec<f64>>, BenchError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| BenchError::Parse {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && record.iter().all(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or(f))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|f| BenchError::Parse {
                line,
                message: format!("'{f}' is not a finite number"),
            })?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(BenchError::Parse {
                    line,
                    message: format!("expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

struct StepRow {
    estimate: Vec<f64>,
    weights: Vec<f64>,
    log_evidences: Vec<f64>,
}

trait Engine {
    fn estimate_labels(&self) -> Vec<String>;
    fn step(&mut self, t: usize, y: &[f64]) -> crate::Result<StepRow>;
}

fn pool_size(cfg: &FlatConfig) -> Result<usize, BenchError> {
    let k: usize = cfg.parse_or("pool.size", 1)?;
    if k == 0 {
        return Err(BenchError::config("pool.size", "must be at least 1"));
    }
    Ok(k)
}

fn initial_weights(cfg: &FlatConfig, k: usize) -> Result<WeightVector, BenchError> {
    match cfg.list("weights.initial")? {
        None => Ok(WeightVector::uniform(k)),
        Some(w) if w.len() != k => Err(BenchError::config(
            "weights.initial",
            format!("expected {k} entries, found {}", w.len()),
        )),
        Some(w) => WeightVector::new(w).map_err(|e| BenchError::config("weights.initial", e.to_string())),
    }
}

fn weight_floor(cfg: &FlatConfig, k: usize) -> Result<f64, BenchError> {
    let f = cfg.f64_or("weights.floor", 0.0)?;
    if !(0.0..1.0).contains(&f) || f * k as f64 >= 1.0 {
        return Err(BenchError::config("weights.floor", "must satisfy 0 <= floor < 1/K"));
    }
    Ok(f)
}

fn prior(cfg: &FlatConfig, d: usize) -> Result<GaussianBelief, BenchError> {
    let mean = match cfg.list("prior.mean")? {
        None => DVector::zeros(d),
        Some(m) if m.len() == d => DVector::from_vec(m),
        Some(m) => {
            return Err(BenchError::config(
                "prior.mean",
                format!("expected {d} entries, found {}", m.len()),
            ))
        }
    };
    let cov = cfg.matrix("prior.cov", d, d)?.unwrap_or_else(|| DMatrix::identity(d, d));
    GaussianBelief::new(mean, cov).map_err(|e| BenchError::config("prior.cov", e.to_string()))
}

fn key(k: usize, name: &str) -> String {
    format!("model.{k}.{name}")
}

fn with_key<T>(r: crate::Result<T>, key: &str) -> Result<T, BenchError> {
    r.map_err(|e| BenchError::config(key, e.to_string()))
}

struct KfEngine {
    pool: Vec<LinearGaussianModel>,
    state: KfEnsembleState,
    wtt: WttConfig,
}

impl KfEngine {
    fn new(cfg: &FlatConfig, m: usize) -> Result<Self, BenchError> {
        let d: usize = cfg.require("state.dim")?;
        let k = pool_size(cfg)?;
        let mut pool = Vec::with_capacity(k);
        for j in 0..k {
            let a = cfg.require_matrix(&key(j, "a"), d, d)?;
            let q = cfg.require_matrix(&key(j, "q"), d, d)?;
            let b = cfg.require_matrix(&key(j, "b"), m, d)?;
            let r = cfg.require_matrix(&key(j, "r"), m, m)?;
            pool.push(with_key(LinearGaussianModel::new(a, q, b, r), &key(j, "a"))?);
        }
        let state = KfEnsembleState::new(prior(cfg, d)?, initial_weights(cfg, k)?)
            .with_weight_floor(weight_floor(cfg, k)?);
        Ok(Self {
            wtt: cfg.wtt(k)?,
            pool,
            state,
        })
    }
}

impl Engine for KfEngine {
    fn estimate_labels(&self) -> Vec<String> {
        (0..self.state.belief.dim()).map(|i| format!("x{i}")).collect()
    }

    fn step(&mut self, _t: usize, y: &[f64]) -> crate::Result<StepRow> {
        let (next, out) = kf_bdemm_step(&self.state, &self.pool, &DVector::from_column_slice(y), &self.wtt)?;
        self.state = next;
        Ok(StepRow {
            estimate: out.estimate.iter().copied().collect(),
            weights: self.state.weights.as_slice().to_vec(),
            log_evidences: out.log_evidences,
        })
    }
}

struct SmcEngine {
    pool: Vec<ModelRef>,
    state: SmcEnsembleState,
    wtt: WttConfig,
    seeder: StreamSeeder,
}

fn smc_noise(cfg: &FlatConfig, j: usize, m: usize) -> Result<Arc<dyn NoiseModel>, BenchError> {
    let kind = cfg.str(&key(j, "noise"))?.unwrap_or("gaussian").to_ascii_lowercase();
    let noise: Arc<dyn NoiseModel> = match kind.as_str() {
        "gaussian" => {
            let r = cfg.require_matrix(&key(j, "r"), m, m)?;
            Arc::new(with_key(GaussianNoise::new(r), &key(j, "r"))?)
        }
        "uniform" => {
            let low = cfg.f64(&key(j, "low"))?.ok_or_else(|| BenchError::config(&key(j, "low"), "missing"))?;
            let high = cfg.f64(&key(j, "high"))?.ok_or_else(|| BenchError::config(&key(j, "high"), "missing"))?;
            Arc::new(with_key(UniformNoise::new(m, low, high), &key(j, "low"))?)
        }
        "student" | "student_t" | "t" => {
            let nu = cfg.f64(&key(j, "nu"))?.ok_or_else(|| BenchError::config(&key(j, "nu"), "missing"))?;
            let scale = cfg.f64_or(&key(j, "scale"), 1.0)?;
            Arc::new(with_key(StudentTNoise::new(m, nu, scale), &key(j, "nu"))?)
        }
        other => return Err(BenchError::config(&key(j, "noise"), format!("unknown noise model '{other}'"))),
    };
    Ok(noise)
}

impl SmcEngine {
    fn new(cfg: &FlatConfig, m: usize) -> Result<Self, BenchError> {
        let d: usize = cfg.parse_or("state.dim", 1)?;
        let k = pool_size(cfg)?;
        let n: usize = cfg.parse_or("particles", 200)?;
        if n == 0 {
            return Err(BenchError::config("particles", "must be at least 1"));
        }
        let seed: u64 = cfg.parse_or("seed", 0)?;
        let resampling: ResamplingScheme = cfg.parse_or("resampling", ResamplingScheme::Multinomial)?;
        let shared: bool = cfg.parse_or("shared_transition", false)?;
        let mut pool: Vec<ModelRef> = Vec::with_capacity(k);
        for j in 0..k {
            let kind = cfg.str(&key(j, "kind"))?.unwrap_or("linear").to_ascii_lowercase();
            let (transition, observation): (Arc<dyn Transition>, Arc<dyn ObservationMap>) = match kind.as_str() {
                "linear" => {
                    let a = cfg.require_matrix(&key(j, "a"), d, d)?;
                    let q = cfg.require_matrix(&key(j, "q"), d, d)?;
                    let b = cfg.require_matrix(&key(j, "b"), m, d)?;
                    (
                        Arc::new(with_key(LinearTransition::new(a, q), &key(j, "q"))?),
                        Arc::new(LinearObservation::new(b)),
                    )
                }
                "toy" => {
                    if d != 1 || m != 1 {
                        return Err(BenchError::config(&key(j, "kind"), "toy model is scalar"));
                    }
                    let shape = cfg.f64_or(&key(j, "gamma_shape"), 3.0)?;
                    let scale = cfg.f64_or(&key(j, "gamma_scale"), 0.5)?;
                    let switch: usize = cfg.parse_or(&key(j, "switch_step"), 30)?;
                    (
                        Arc::new(with_key(ToyTransition::new(shape, scale), &key(j, "gamma_shape"))?),
                        Arc::new(SplitRegimeObservation::new(switch)),
                    )
                }
                other => return Err(BenchError::config(&key(j, "kind"), format!("unknown model kind '{other}'"))),
            };
            let noise = smc_noise(cfg, j, m)?;
            pool.push(Arc::new(with_key(StateSpace::new(transition, observation, noise), &key(j, "noise"))?));
        }
        let seeder = StreamSeeder::new(seed);
        let p = prior(cfg, d)?;
        let root = with_key(psd_sqrt(&p.cov), "prior.cov")?;
        let mut rng = seeder.rng([tag::INIT, 0, 0, 0]);
        let mut particles = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            particles.extend((&p.mean + &root * z).iter());
        }
        let start = with_key(ParticleEnsemble::equally_weighted(d, particles), "particles")?;
        let state = SmcEnsembleState::new(start, initial_weights(cfg, k)?)
            .with_shared_transition(shared)
            .with_resampling(resampling)
            .with_weight_floor(weight_floor(cfg, k)?);
        Ok(Self {
            wtt: cfg.wtt(k)?,
            pool,
            state,
            seeder,
        })
    }
}

impl Engine for SmcEngine {
    fn estimate_labels(&self) -> Vec<String> {
        (0..self.state.ensemble.dim()).map(|i| format!("x{i}")).collect()
    }

    fn step(&mut self, t: usize, y: &[f64]) -> crate::Result<StepRow> {
        let (next, out) = smc_bdemm_step(&self.state, &self.pool, y, t, &self.wtt, &self.seeder)?;
        self.state = next;
        Ok(StepRow {
            estimate: out.estimate.iter().copied().collect(),
            weights: self.state.model_weights.as_slice().to_vec(),
            log_evidences: out.log_evidences,
        })
    }
}

struct IntelEngine {
    pool: Vec<GptsModel>,
    state: IntelState,
    wtt: WttConfig,
}

fn gp_model(cfg: &FlatConfig, prefix: &str) -> Result<GptsModel, BenchError> {
    let k = |name: &str| format!("{prefix}.{name}");
    let m = GptsModel {
        mean: cfg.f64_or(&k("mean"), 0.0)?,
        signal_variance: cfg.f64_or(&k("signal_variance"), 1.0)?,
        lengthscale: cfg.f64_or(&k("lengthscale"), 1.0)?,
        noise_var: cfg.f64_or(&k("noise_var"), 0.1)?,
        window: cfg.parse_or(&k("window"), 10)?,
    };
    with_key(m.validate(), &k("signal_variance"))?;
    Ok(m)
}

impl IntelEngine {
    fn new(cfg: &FlatConfig, m: usize) -> Result<Self, BenchError> {
        if m != 1 {
            return Err(BenchError::config("engine", "intel needs a single observation column"));
        }
        let pool = if cfg.contains("pool.size") {
            let k = pool_size(cfg)?;
            (0..k).map(|j| gp_model(cfg, &format!("model.{j}"))).collect::<Result<Vec<_>, _>>()?
        } else {
            let nominal = gp_model(cfg, "gp")?;
            let factors = cfg.list("gp.noise_factors")?.unwrap_or_else(|| vec![1.0]);
            with_key(nominal.perturb_noise(&factors), "gp.noise_factors")?
        };
        let k = pool.len();
        let state = with_key(IntelState::new(&pool, initial_weights(cfg, k)?), "gp")?
            .with_weight_floor(weight_floor(cfg, k)?);
        Ok(Self {
            wtt: cfg.wtt(k)?,
            pool,
            state,
        })
    }
}

impl Engine for IntelEngine {
    fn estimate_labels(&self) -> Vec<String> {
        vec!["forecast_mean".into(), "forecast_var".into()]
    }

    fn step(&mut self, t: usize, y: &[f64]) -> crate::Result<StepRow> {
        let (next, out) = intel_step(&self.state, &self.pool, y[0], t as f64, &self.wtt)?;
        self.state = next;
        Ok(StepRow {
            estimate: vec![out.forecast.mean, out.forecast.var],
            weights: self.state.model_weights.as_slice().to_vec(),
            log_evidences: out.log_evidences,
        })
    }
}

/// Runs the configured engine over `input` and writes per-step rows to
/// `output`. Returns the number of rows written. Empty input produces empty
/// output.
pub fn run_stream(cfg: &FlatConfig, input: impl Read, mut output: impl Write) -> Result<usize, BenchError> {
    let rows = read_observations(input)?;
    let m = rows.first().map_or(1, Vec::len);
    let engine_name = cfg.str("engine")?.ok_or_else(|| BenchError::config("engine", "missing"))?;
    let mut engine: Box<dyn Engine> = match engine_name.to_ascii_lowercase().as_str() {
        "kf" => Box::new(KfEngine::new(cfg, m)?),
        "smc" => Box::new(SmcEngine::new(cfg, m)?),
        "intel" => Box::new(IntelEngine::new(cfg, m)?),
        other => return Err(BenchError::config("engine", format!("unknown engine '{other}'"))),
    };
    cfg.reject_unused()?;
    if rows.is_empty() {
        return Ok(0);
    }
    let mut out = String::new();
    let mut header_done = false;
    for (i, y) in rows.iter().enumerate() {
        let t = i + 1;
        let row = engine.step(t, y)?;
        if !header_done {
            let kk = row.weights.len();
            let mut cols = vec!["step".to_string()];
            cols.extend(engine.estimate_labels());
            cols.extend((0..kk).map(|j| format!("w{j}")));
            cols.extend((0..kk).map(|j| format!("log_evidence{j}")));
            out.push_str(&cols.join(","));
            out.push('\n');
            header_done = true;
        }
        let mut cells = vec![t.to_string()];
        cells.extend(row.estimate.iter().map(f64::to_string));
        cells.extend(row.weights.iter().map(f64::to_string));
        cells.extend(row.log_evidences.iter().map(f64::to_string));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    output.write_all(out.as_bytes())?;
    Ok(rows.len())
}
