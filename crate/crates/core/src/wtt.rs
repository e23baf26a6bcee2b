//! Weight-temporal-transition operators: the map from posterior model
//! weights at `t-1` (and their history) to predictive weights at `t`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::weights::{normalize_weights, WeightHistory, WeightVector};

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WttKind {
    /// `w_{t|t-1} = w_{t-1}`.
    Identity,
    /// `w_{t|t-1} = C`, fixed by the modeler.
    Constant,
    /// `w_{t|t-1} = w_{t-1}ᵀ T` for a row-stochastic mode transition matrix.
    Markov,
    /// `w_{t|t-1} ∝ w_{t-1}^α`.
    Forgetting,
    /// `w_{t|t-1} ∝ β + Σ_τ w_τ`.
    PolyaUrn,
}

impl std::str::FromStr for WttKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Self::Identity),
            "constant" => Ok(Self::Constant),
            "markov" => Ok(Self::Markov),
            "forgetting" => Ok(Self::Forgetting),
            "polya" | "polyaurn" | "polya_urn" | "polya-urn" => Ok(Self::PolyaUrn),
            other => Err(Error::ConfigMismatch(format!("unknown operator '{other}'"))),
        }
    }
}

/// Operator selection plus whichever parameter the chosen operator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct WttConfig {
    pub kind: WttKind,
    pub constants: Option<WeightVector>,
    pub transition: Option<DMatrix<f64>>,
    pub alpha: Option<f64>,
    pub beta: Option<Vec<u32>>,
}

impl WttConfig {
    pub fn bare(kind: WttKind) -> Self {
        Self {
            kind,
            constants: None,
            transition: None,
            alpha: None,
            beta: None,
        }
    }

    pub fn identity() -> Self {
        Self::bare(WttKind::Identity)
    }

    pub fn constant(c: WeightVector) -> Self {
        Self {
            constants: Some(c),
            ..Self::bare(WttKind::Constant)
        }
    }

    pub fn markov(t: DMatrix<f64>) -> Self {
        Self {
            transition: Some(t),
            ..Self::bare(WttKind::Markov)
        }
    }

    pub fn forgetting(alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            ..Self::bare(WttKind::Forgetting)
        }
    }

    pub fn polya_urn(beta: Vec<u32>) -> Self {
        Self {
            beta: Some(beta),
            ..Self::bare(WttKind::PolyaUrn)
        }
    }

    /// Checks that the parameter for `kind` is present and well formed for a
    /// pool of `k` models.
    pub fn validate(&self, k: usize) -> Result<()> {
        let missing = |what: &str| Error::ConfigMismatch(format!("{:?} requires {what}", self.kind));
        let wrong_len = |what: &str, n: usize| {
            Error::ConfigMismatch(format!("{what} has length {n}, pool has {k} models"))
        };
        match self.kind {
            WttKind::Identity => Ok(()),
            WttKind::Constant => {
                let c = self.constants.as_ref().ok_or_else(|| missing("constants"))?;
                if c.len() != k {
                    return Err(wrong_len("constants", c.len()));
                }
                Ok(())
            }
            WttKind::Markov => {
                let t = self.transition.as_ref().ok_or_else(|| missing("a transition matrix"))?;
                if t.nrows() != k || t.ncols() != k {
                    return Err(wrong_len("transition matrix", t.nrows()));
                }
                for (i, row) in t.row_iter().enumerate() {
                    if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                        return Err(Error::ConfigMismatch(format!(
                            "transition row {i} has a negative or non-finite entry"
                        )));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > ROW_TOL {
                        return Err(Error::ConfigMismatch(format!(
                            "transition row {i} sums to {s}"
                        )));
                    }
                }
                Ok(())
            }
            WttKind::Forgetting => {
                let a = self.alpha.ok_or_else(|| missing("alpha"))?;
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::ConfigMismatch(format!(
                        "forgetting factor {a} outside (0, 1]"
                    )));
                }
                Ok(())
            }
            WttKind::PolyaUrn => {
                let b = self.beta.as_ref().ok_or_else(|| missing("beta"))?;
                if b.len() != k {
                    return Err(wrong_len("beta", b.len()));
                }
                if b.iter().any(|&x| x < 1) {
                    return Err(Error::ConfigMismatch("every beta must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Mode transition matrix with `stay` on the diagonal and the remainder
/// spread evenly off the diagonal. `stay = 0.9` is the usual example.
pub fn sticky_transition_matrix(k: usize, stay: f64) -> DMatrix<f64> {
    if k == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    let off = (1.0 - stay) / (k - 1) as f64;
    DMatrix::from_fn(k, k, |i, j| if i == j { stay } else { off })
}

/// Predictive weights `w_{·,t|t-1}` from the history up to `t-1`.
pub fn apply_wtt(config: &WttConfig, history: &WeightHistory) -> Result<WeightVector> {
    let last = history.last().ok_or(Error::EmptyHistory)?;
    let k = last.len();
    config.validate(k)?;
    let w = last.as_slice();
    match config.kind {
        WttKind::Identity => Ok(last.clone()),
        WttKind::Constant => Ok(config.constants.clone().expect("validated")),
        WttKind::Markov => {
            let t = config.transition.as_ref().expect("validated");
            let out: Vec<f64> = (0..k)
                .map(|j| (0..k).map(|i| w[i] * t[(i, j)]).sum())
                .collect();
            normalize_weights(&out)
        }
        WttKind::Forgetting => {
            let a = config.alpha.expect("validated");
            if a == 1.0 {
                return Ok(last.clone());
            }
            let out: Vec<f64> = w.iter().map(|&x| x.powf(a)).collect();
            normalize_weights(&out)
        }
        WttKind::PolyaUrn => {
            let beta = config.beta.as_ref().expect("validated");
            let out: Vec<f64> = beta
                .iter()
                .zip(history.cumulative())
                .map(|(&b, &s)| b as f64 + s)
                .collect();
            normalize_weights(&out)
        }
    }
}
