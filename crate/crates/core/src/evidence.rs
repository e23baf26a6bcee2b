//! Model evidence: importance-sampling estimates for arbitrary
//! prior×likelihood targets and the closed form for linear-Gaussian models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, GaussianBelief};
use crate::weights::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln π(x)`, the log of prior × likelihood up to nothing: the normalizer of
/// `π` is the evidence being estimated.
pub trait UnnormalizedTarget {
    fn log_density(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> UnnormalizedTarget for F {
    fn log_density(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// An importance-sampling proposal `q`.
pub trait Proposal {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Multivariate normal proposal.
#[derive(Debug, Clone)]
pub struct GaussianProposal {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianProposal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        let chol = Cholesky::new(symmetrize(cov))
            .ok_or_else(|| Error::InvalidParameter("proposal covariance is not positive definite".into()))?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
        Ok(Self {
            mean,
            chol,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    pub fn from_belief(b: &GaussianBelief) -> Result<Self> {
        Self::new(b.mean.clone(), b.cov.clone())
    }
}

impl Proposal for GaussianProposal {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let d = self.mean.len();
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let x = &self.mean + self.chol.l() * z;
        x.as_slice().to_vec()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        let sol = self.chol.solve(&r);
        self.log_norm - 0.5 * r.dot(&sol)
    }
}

/// Result of an importance-sampling evidence run.
#[derive(Debug, Clone)]
pub struct IsEstimate {
    /// `(1/n) Σ π(x_i) / q(x_i)`; zero when the estimate underflows.
    pub estimate: f64,
    pub log_estimate: f64,
    /// `ln û_i = ln π(x_i) − ln q(x_i)`.
    pub log_weights: Vec<f64>,
    /// Effective sample size `1 / Σ ŵ_i²` of the normalized weights.
    pub ess: f64,
    pub underflow: bool,
}

impl IsEstimate {
    pub fn importance_weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }
}

/// Importance-sampling estimate of `∫ π(x) dx` with `n` draws from `proposal`.
pub fn is_evidence<T, Q>(
    target: &T,
    proposal: &Q,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<IsEstimate>
where
    T: UnnormalizedTarget + ?Sized,
    Q: Proposal + ?Sized,
{
    if n == 0 {
        return Err(Error::Empty("importance sample"));
    }
    let mut log_weights = Vec::with_capacity(n);
    for index in 0..n {
        let x = proposal.sample(rng);
        let lq = proposal.log_density(&x);
        let lp = target.log_density(&x);
        if !lq.is_finite() || lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::NonFiniteWeight { index });
        }
        log_weights.push(lp - lq);
    }
    let lse = log_sum_exp(&log_weights);
    let log_estimate = lse - (n as f64).ln();
    let ess = if lse == f64::NEG_INFINITY {
        0.0
    } else {
        1.0 / log_weights.iter().map(|l| (2.0 * (l - lse)).exp()).sum::<f64>()
    };
    let estimate = log_estimate.exp();
    Ok(IsEstimate {
        estimate,
        log_estimate,
        log_weights,
        ess,
        underflow: estimate == 0.0,
    })
}

/// `ln N(y; B m, B P Bᵀ + R)` for a predictive belief `N(m, P)`.
pub fn gaussian_log_evidence(
    y: &DVector<f64>,
    predictive: &GaussianBelief,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    let m = y.len();
    if b.nrows() != m || r.nrows() != m || r.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: b.nrows(),
        });
    }
    if b.ncols() != predictive.dim() {
        return Err(Error::DimensionMismatch {
            expected: predictive.dim(),
            found: b.ncols(),
        });
    }
    let s = symmetrize(b * &predictive.cov * b.transpose() + r);
    let innov = y - b * &predictive.mean;
    log_normal_density(&innov, s)
}

/// Linear-domain version of [`gaussian_log_evidence`].
pub fn gaussian_evidence(
    y: &DVector<f64>,
    predictive: &GaussianBelief,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    gaussian_log_evidence(y, predictive, b, r).map(f64::exp)
}

/// `ln N(r; 0, S)`.
pub(crate) fn log_normal_density(r: &DVector<f64>, s: DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(s).ok_or(Error::SingularInnovationCov)?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    if !log_det.is_finite() {
        return Err(Error::SingularInnovationCov);
    }
    let quad = r.dot(&chol.solve(r));
    Ok(-0.5 * (r.len() as f64 * LN_2PI + log_det + quad))
}
