//! Gaussian beliefs over the state and moment-matched mixture collapse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::weights::WeightVector;

/// Eigenvalue tolerance below zero accepted by [`GaussianBelief::is_psd`].
pub const PSD_TOL: f64 = 1e-10;

/// `N(mean, cov)` over a `d`-dimensional state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Empty("belief mean"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        Ok(Self {
            mean,
            cov: symmetrize(cov),
        })
    }

    /// One-dimensional belief `N(mean, var)`.
    pub fn scalar(mean: f64, var: f64) -> Self {
        Self {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// True when every eigenvalue of the covariance is at least `-PSD_TOL`.
    pub fn is_psd(&self) -> bool {
        self.cov
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .all(|&l| l >= -PSD_TOL)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..i).all(|j| (self.cov[(i, j)] - self.cov[(j, i)]).abs() <= tol))
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    let t = a.transpose();
    (a + t) * 0.5
}

/// Approximates `Σ_k w_k N(μ_k, Σ_k)` by the single Gaussian with the same
/// first two moments.
///
/// The covariance is accumulated in centered form,
/// `Σ_k w_k (Σ_k + (μ_k − μ)(μ_k − μ)ᵀ)`, which equals
/// `Σ_k w_k (Σ_k + μ_k μ_kᵀ) − μ μᵀ` without the cancellation.
pub fn collapse_mixture(
    components: &[GaussianBelief],
    weights: &WeightVector,
) -> Result<GaussianBelief> {
    if components.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: components.len(),
        });
    }
    let d = components[0].dim();
    let mut mean = DVector::zeros(d);
    for (c, &w) in components.iter().zip(weights.as_slice()) {
        if c.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
        if w != 0.0 {
            mean.axpy(w, &c.mean, 1.0);
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (c, &w) in components.iter().zip(weights.as_slice()) {
        if w == 0.0 {
            continue;
        }
        let dev = &c.mean - &mean;
        cov += (&c.cov + &dev * dev.transpose()) * w;
    }
    Ok(GaussianBelief {
        mean,
        cov: symmetrize(cov),
    })
}
