//! Built-in state-space models assembled from a transition prior, an
//! observation map, and an additive observation-noise density.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::StateSpaceModel;
use crate::error::{Error, Result};
use crate::kf::LinearGaussianModel;

/// `p(x_t | x_{t-1})`.
pub trait Transition: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, prev: &[f64], t: usize, rng: &mut dyn RngCore, out: &mut [f64]);
}

/// Noise-free observation `h_t(x)`.
pub trait ObservationMap: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn apply(&self, x: &[f64], t: usize, out: &mut [f64]);
}

/// Density of the residual `y - h_t(x)`.
pub trait NoiseModel: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, residual: &[f64]) -> f64;
}

/// Square root `L` with `L Lᵀ = m` for a PSD matrix; falls back to an
/// eigen decomposition when `m` is singular.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(Error::InvalidParameter("covariance is not positive semidefinite".into()));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// `x_t = A x_{t-1} + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone)]
pub struct LinearTransition {
    a: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
}

impl LinearTransition {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || q.shape() != a.shape() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: q.nrows(),
            });
        }
        Ok(Self {
            q_sqrt: psd_sqrt(&q)?,
            a,
        })
    }
}

impl Transition for LinearTransition {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn sample(&self, prev: &[f64], _t: usize, rng: &mut dyn RngCore, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            for j in 0..d {
                v += self.a[(i, j)] * prev[j] + self.q_sqrt[(i, j)] * z[j];
            }
            *o = v;
        }
    }
}

/// `x_t = 1 + sin(0.04 π t) + 0.5 x_{t-1} + u_t`, `u_t ~ Gamma(shape, scale)`.
#[derive(Debug, Clone)]
pub struct ToyTransition {
    gamma: Gamma<f64>,
}

impl ToyTransition {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        let gamma = Gamma::new(shape, scale)
            .map_err(|e| Error::InvalidParameter(format!("gamma noise: {e}")))?;
        Ok(Self { gamma })
    }

    /// Deterministic part of the transition.
    pub fn drift(prev: f64, t: usize) -> f64 {
        1.0 + (0.04 * PI * t as f64).sin() + 0.5 * prev
    }

    pub fn sample_noise(&self, rng: &mut dyn RngCore) -> f64 {
        self.gamma.sample(rng)
    }
}

impl Transition for ToyTransition {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, prev: &[f64], t: usize, rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = Self::drift(prev[0], t) + self.gamma.sample(rng);
    }
}

/// `h(x) = B x`.
#[derive(Debug, Clone)]
pub struct LinearObservation {
    b: DMatrix<f64>,
}

impl LinearObservation {
    pub fn new(b: DMatrix<f64>) -> Self {
        Self { b }
    }
}

impl ObservationMap for LinearObservation {
    fn obs_dim(&self) -> usize {
        self.b.nrows()
    }

    fn apply(&self, x: &[f64], _t: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.b.row(i).iter().zip(x).map(|(b, x)| b * x).sum();
        }
    }
}

/// Scalar map that is quadratic up to `switch_step` and linear afterwards:
/// `0.2 x²` for `t ≤ switch_step`, `0.2 x − 2` otherwise.
#[derive(Debug, Clone, Copy)]
pub struct SplitRegimeObservation {
    pub switch_step: usize,
}

impl SplitRegimeObservation {
    pub fn new(switch_step: usize) -> Self {
        Self { switch_step }
    }

    pub fn eval(&self, x: f64, t: usize) -> f64 {
        if t <= self.switch_step {
            0.2 * x * x
        } else {
            0.2 * x - 2.0
        }
    }
}

impl ObservationMap for SplitRegimeObservation {
    fn obs_dim(&self) -> usize {
        1
    }

    fn apply(&self, x: &[f64], t: usize, out: &mut [f64]) {
        out[0] = self.eval(x[0], t);
    }
}

/// Zero-mean Gaussian noise with covariance `R`.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    l_inv: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianNoise {
    pub fn new(r: DMatrix<f64>) -> Result<Self> {
        let d = r.nrows();
        let ch = r.cholesky().ok_or(Error::SingularInnovationCov)?;
        let l = ch.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or(Error::SingularInnovationCov)?;
        Ok(Self {
            l_inv,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn scalar(var: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, var))
    }
}

impl NoiseModel for GaussianNoise {
    fn dim(&self) -> usize {
        self.l_inv.nrows()
    }

    fn log_density(&self, r: &[f64]) -> f64 {
        let z = &self.l_inv * DVector::from_column_slice(r);
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Independent `Uniform(low, high)` noise in every coordinate.
#[derive(Debug, Clone, Copy)]
pub struct UniformNoise {
    dim: usize,
    low: f64,
    high: f64,
}

impl UniformNoise {
    pub fn new(dim: usize, low: f64, high: f64) -> Result<Self> {
        if !(low < high) || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "uniform noise needs low < high, got [{low}, {high}]"
            )));
        }
        Ok(Self { dim, low, high })
    }
}

impl NoiseModel for UniformNoise {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, r: &[f64]) -> f64 {
        if r.iter().all(|&v| v >= self.low && v <= self.high) {
            -(self.dim as f64) * (self.high - self.low).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Independent Student's-t noise with `nu` degrees of freedom and the given
/// scale in every coordinate.
#[derive(Debug, Clone, Copy)]
pub struct StudentTNoise {
    dim: usize,
    nu: f64,
    scale: f64,
    log_norm: f64,
}

impl StudentTNoise {
    pub fn new(dim: usize, nu: f64, scale: f64) -> Result<Self> {
        if !(nu > 0.0 && scale > 0.0) || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "student-t noise needs nu > 0 and scale > 0, got nu={nu} scale={scale}"
            )));
        }
        let log_norm = ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * PI).ln()
            - scale.ln();
        Ok(Self {
            dim,
            nu,
            scale,
            log_norm,
        })
    }
}

impl NoiseModel for StudentTNoise {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, r: &[f64]) -> f64 {
        r.iter()
            .map(|&v| {
                let z = v / self.scale;
                self.log_norm - 0.5 * (self.nu + 1.0) * (z * z / self.nu).ln_1p()
            })
            .sum()
    }
}

/// `x_t ~ transition`, `y_t = h_t(x_t) + noise`.
#[derive(Clone)]
pub struct StateSpace {
    pub transition: Arc<dyn Transition>,
    pub observation: Arc<dyn ObservationMap>,
    pub noise: Arc<dyn NoiseModel>,
}

impl std::fmt::Debug for StateSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateSpace")
            .field("state_dim", &self.transition.dim())
            .field("obs_dim", &self.observation.obs_dim())
            .finish()
    }
}

impl StateSpace {
    pub fn new(
        transition: Arc<dyn Transition>,
        observation: Arc<dyn ObservationMap>,
        noise: Arc<dyn NoiseModel>,
    ) -> Result<Self> {
        if observation.obs_dim() != noise.dim() {
            return Err(Error::DimensionMismatch {
                expected: observation.obs_dim(),
                found: noise.dim(),
            });
        }
        Ok(Self {
            transition,
            observation,
            noise,
        })
    }

    pub fn linear_gaussian(model: &LinearGaussianModel) -> Result<Self> {
        Self::new(
            Arc::new(LinearTransition::new(model.a.clone(), model.q.clone())?),
            Arc::new(LinearObservation::new(model.b.clone())),
            Arc::new(GaussianNoise::new(model.r.clone())?),
        )
    }

    /// Same transition and observation map, different noise density.
    pub fn with_noise(&self, noise: Arc<dyn NoiseModel>) -> Result<Self> {
        Self::new(Arc::clone(&self.transition), Arc::clone(&self.observation), noise)
    }
}

impl StateSpaceModel for StateSpace {
    fn state_dim(&self) -> usize {
        self.transition.dim()
    }

    fn sample_transition(&self, prev: &[f64], t: usize, rng: &mut dyn RngCore, out: &mut [f64]) {
        self.transition.sample(prev, t, rng, out);
    }

    fn log_likelihood(&self, y: &[f64], x: &[f64], t: usize) -> f64 {
        let m = self.observation.obs_dim();
        let mut buf = [0.0; 4];
        let mut heap;
        let h: &mut [f64] = if m <= buf.len() {
            &mut buf[..m]
        } else {
            heap = vec![0.0; m];
            &mut heap
        };
        self.observation.apply(x, t, h);
        for (hi, yi) in h.iter_mut().zip(y) {
            *hi = yi - *hi;
        }
        self.noise.log_density(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_noise_matches_scalar_formula() {
        let g = GaussianNoise::scalar(2.0).unwrap();
        let expect = -0.5 * (2.0 * PI * 2.0).ln() - 0.25;
        assert!((g.log_density(&[1.0]) - expect).abs() < 1e-14);
    }

    #[test]
    fn uniform_noise_support() {
        let u = UniformNoise::new(1, -50.0, 50.0).unwrap();
        assert!((u.log_density(&[49.0]) + 100f64.ln()).abs() < 1e-15);
        assert_eq!(u.log_density(&[50.5]), f64::NEG_INFINITY);
        assert!(UniformNoise::new(1, 1.0, 1.0).is_err());
    }

    #[test]
    fn student_t_reduces_to_cauchy() {
        let c = StudentTNoise::new(1, 1.0, 1.0).unwrap();
        let expect = -(PI * 2.0).ln();
        assert!((c.log_density(&[1.0]) - expect).abs() < 1e-12);
    }

    #[test]
    fn split_regime_observation() {
        let h = SplitRegimeObservation::new(30);
        assert_eq!(h.eval(5.0, 30), 5.0);
        assert_eq!(h.eval(5.0, 31), -1.0);
    }

    #[test]
    fn toy_transition_mean() {
        let tr = ToyTransition::new(3.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let mut out = [0.0];
        let mut s = 0.0;
        for _ in 0..n {
            tr.sample(&[2.0], 25, &mut rng, &mut out);
            s += out[0];
        }
        // drift 1 + sin(π) + 1 = 2, gamma mean 6
        let m = s / n as f64;
        assert!((m - 8.0).abs() < 0.03, "{m}");
    }

    #[test]
    fn singular_process_noise_is_deterministic() {
        let tr = LinearTransition::new(DMatrix::from_element(1, 1, 0.5), DMatrix::zeros(1, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = [0.0];
        tr.sample(&[4.0], 1, &mut rng, &mut out);
        assert_eq!(out[0], 2.0);
    }
}
