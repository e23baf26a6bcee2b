//! Model weights on the probability simplex and the Bayesian re-weighting
//! shared by every engine.
//!
//! All weight updates run in the log domain: evidences are combined with the
//! prior as `ln w_k + ln p_k(y)` and normalized with log-sum-exp, so long
//! sequences of small densities never underflow the normalizer.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Tolerance used to decide that a vector already sums to one.
const SIMPLEX_TOL: f64 = 1e-12;

/// A point estimate of the state, `x_hat`.
pub type PointEstimate = DVector<f64>;

/// Probabilities `w_1..w_K` over the candidate models.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Validates `w` as a point on the simplex (entries >= 0, sum 1 within 1e-12).
    pub fn new(w: Vec<f64>) -> Result<Self> {
        check_entries(&w)?;
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {s}, expected 1"
            )));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k >= 1, "a weight vector needs at least one model");
        Self(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest weight (first one on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Clamps every entry to at least `floor` and renormalizes.
    ///
    /// A floor of zero is a no-op. `floor * K` must stay below one.
    pub fn with_floor(self, floor: f64) -> Result<Self> {
        if floor <= 0.0 {
            return Ok(self);
        }
        if floor * self.len() as f64 >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "weight floor {floor} is too large for {} models",
                self.len()
            )));
        }
        if self.0.iter().all(|&w| w >= floor) {
            return Ok(self);
        }
        let clamped: Vec<f64> = self.0.iter().map(|&w| w.max(floor)).collect();
        normalize_weights(&clamped)
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_entries(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Empty("weight vector"));
    }
    for (index, &value) in w.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if value < 0.0 {
            return Err(Error::NegativeEntry { index, value });
        }
    }
    Ok(())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `ln Σ exp(v_i)`; returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Scales a nonnegative vector onto the simplex.
///
/// A vector that already sums to one within 1e-12 is returned unchanged, which
/// makes the operation idempotent.
pub fn normalize_weights(raw: &[f64]) -> Result<WeightVector> {
    check_entries(raw)?;
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        return Err(Error::AllZero);
    }
    if (s - 1.0).abs() <= SIMPLEX_TOL {
        return Ok(WeightVector(raw.to_vec()));
    }
    Ok(WeightVector(raw.iter().map(|&x| x / s).collect()))
}

/// Normalizes log-weights with log-sum-exp. `-inf` entries map to exact zeros.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<WeightVector> {
    if log_w.is_empty() {
        return Err(Error::Empty("weight vector"));
    }
    if let Some(index) = log_w.iter().position(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::NonFinite { index });
    }
    let lse = log_sum_exp(log_w);
    if lse == f64::NEG_INFINITY {
        return Err(Error::AllZero);
    }
    let w: Vec<f64> = log_w.iter().map(|&l| (l - lse).exp()).collect();
    // exp rounding can leave the sum a few ulps away from one
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() <= SIMPLEX_TOL {
        Ok(WeightVector(w))
    } else {
        Ok(WeightVector(w.iter().map(|x| x / s).collect()))
    }
}

/// Bayes' rule for model probabilities given linear-domain evidences.
pub fn update_model_weights(prior: &WeightVector, evidences: &[f64]) -> Result<WeightVector> {
    check_len(prior.len(), evidences.len())?;
    check_entries(evidences)?;
    let log_ev: Vec<f64> = evidences.iter().map(|e| e.ln()).collect();
    update_model_weights_log(prior, &log_ev)
}

/// Bayes' rule for model probabilities given log evidences `ln p_k(y_t | y_1:t-1)`.
///
/// Returns [`Error::AllZero`] when every prior-times-evidence product is zero.
pub fn update_model_weights_log(
    prior: &WeightVector,
    log_evidences: &[f64],
) -> Result<WeightVector> {
    check_len(prior.len(), log_evidences.len())?;
    if let Some(index) = log_evidences.iter().position(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::NonFinite { index });
    }
    // only models that can still receive mass set the reference level
    let top = prior
        .as_slice()
        .iter()
        .zip(log_evidences)
        .filter(|(&w, _)| w > 0.0)
        .map(|(_, &le)| le)
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::AllZero);
    }
    // evidence ratios against the best model: equal evidences leave the prior untouched
    let post: Vec<f64> = prior
        .as_slice()
        .iter()
        .zip(log_evidences)
        .map(|(&w, &le)| if w == 0.0 { 0.0 } else { w * (le - top).exp() })
        .collect();
    normalize_weights(&post)
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Weighted average `Σ_k w_k x_hat_k` of per-model point estimates.
pub fn bma_point_estimate(
    estimates: &[PointEstimate],
    weights: &WeightVector,
) -> Result<PointEstimate> {
    check_len(weights.len(), estimates.len())?;
    let d = estimates[0].len();
    let mut out = DVector::zeros(d);
    for (est, &w) in estimates.iter().zip(weights.as_slice()) {
        check_len(d, est.len())?;
        if w != 0.0 {
            out.axpy(w, est, 1.0);
        }
    }
    Ok(out)
}

/// Posterior weight rows seen so far plus running per-model sums.
///
/// The initial weight vector is stored as the first row, so after `t`
/// completed steps there are `t + 1` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHistory {
    rows: Vec<WeightVector>,
    cumulative: Vec<f64>,
}

impl WeightHistory {
    pub fn new(initial: WeightVector) -> Self {
        let cumulative = initial.as_slice().to_vec();
        Self {
            rows: vec![initial],
            cumulative,
        }
    }

    /// An empty history, only useful to exercise error paths.
    pub fn empty(k: usize) -> Self {
        Self {
            rows: Vec::new(),
            cumulative: vec![0.0; k],
        }
    }

    pub fn push(&mut self, row: WeightVector) -> Result<()> {
        check_len(self.cumulative.len(), row.len())?;
        for (c, w) in self.cumulative.iter_mut().zip(row.as_slice()) {
            *c += w;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&WeightVector> {
        self.rows.last()
    }

    pub fn rows(&self) -> &[WeightVector] {
        &self.rows
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_models(&self) -> usize {
        self.cumulative.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_weights(&[2.0, 2.0]).unwrap().as_slice(), &[0.5, 0.5]);
        assert_eq!(normalize_weights(&[0.0, 3.0]).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(normalize_weights(&[0.0, 0.0]), Err(Error::AllZero));
        assert!(matches!(
            normalize_weights(&[1.0, -0.5]),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
        assert!(matches!(
            normalize_weights(&[f64::NAN]),
            Err(Error::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn update_examples() {
        let half = WeightVector::uniform(2);
        for c in [1e-300, 0.3, 7.0, 1e200] {
            let w = update_model_weights(&half, &[c, c]).unwrap();
            assert!(close(w.as_slice(), &[0.5, 0.5], 1e-15));
        }
        let w = update_model_weights(&half, &[0.2, 0.6]).unwrap();
        assert!(close(w.as_slice(), &[0.25, 0.75], 1e-15));

        let one_zero = WeightVector::new(vec![1.0, 0.0]).unwrap();
        let w = update_model_weights(&one_zero, &[0.1, 50.0]).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);

        assert_eq!(update_model_weights(&one_zero, &[0.0, 1.0]), Err(Error::AllZero));
    }

    #[test]
    fn log_update_survives_tiny_evidence() {
        let half = WeightVector::uniform(2);
        let w = update_model_weights_log(&half, &[-2000.0, -2001.0]).unwrap();
        let e = 1.0f64.exp();
        assert!(close(w.as_slice(), &[e / (1.0 + e), 1.0 / (1.0 + e)], 1e-14));
    }

    #[test]
    fn bma_examples() {
        let one = WeightVector::uniform(1);
        let x = bma_point_estimate(&[DVector::from_vec(vec![3.0])], &one).unwrap();
        assert_eq!(x[0], 3.0);

        let ests = [DVector::from_vec(vec![1.0]), DVector::from_vec(vec![3.0])];
        let x = bma_point_estimate(&ests, &WeightVector::uniform(2)).unwrap();
        assert_eq!(x[0], 2.0);

        let ests = [DVector::from_vec(vec![0.0]), DVector::from_vec(vec![4.0])];
        let w = WeightVector::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(bma_point_estimate(&ests, &w).unwrap()[0], 3.0);

        let bad = [DVector::from_vec(vec![0.0]), DVector::from_vec(vec![4.0, 1.0])];
        assert!(matches!(
            bma_point_estimate(&bad, &w),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn floor_revives_dead_model() {
        let w = WeightVector::new(vec![1.0, 0.0]).unwrap().with_floor(0.01).unwrap();
        assert!(close(w.as_slice(), &[1.0 / 1.01, 0.01 / 1.01], 1e-15));
        assert!(WeightVector::uniform(4).with_floor(0.3).is_err());
    }

    #[test]
    fn history_tracks_column_sums() {
        let mut h = WeightHistory::new(WeightVector::uniform(2));
        h.push(WeightVector::new(vec![0.2, 0.8]).unwrap()).unwrap();
        h.push(WeightVector::new(vec![0.9, 0.1]).unwrap()).unwrap();
        assert_eq!(h.len(), 3);
        assert!(close(h.cumulative(), &[1.6, 1.4], 1e-12));
        assert!(h.push(WeightVector::uniform(3)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn raw_vec() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0f64..100.0, 1..12)
                .prop_filter("not all zero", |v| v.iter().any(|&x| x > 0.0))
        }

        proptest! {
            #[test]
            fn normalize_is_idempotent(v in raw_vec()) {
                let once = normalize_weights(&v).unwrap();
                let twice = normalize_weights(once.as_slice()).unwrap();
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn update_is_scale_invariant(
                v in raw_vec(),
                ev in prop::collection::vec(1e-3f64..10.0, 12),
                c in 1e-6f64..1e6,
            ) {
                let prior = normalize_weights(&v).unwrap();
                let ev = &ev[..prior.len()];
                let scaled: Vec<f64> = ev.iter().map(|e| e * c).collect();
                let a = update_model_weights(&prior, ev).unwrap();
                let b = update_model_weights(&prior, &scaled).unwrap();
                prop_assert!(close(a.as_slice(), b.as_slice(), 1e-12));
            }

            #[test]
            fn bma_stays_in_hull(
                xs in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..6),
                v in raw_vec(),
            ) {
                let k = xs.len().min(v.len());
                let w = normalize_weights(&v[..k]).unwrap_or_else(|_| WeightVector::uniform(k));
                let ests: Vec<PointEstimate> =
                    xs[..k].iter().map(|x| DVector::from_vec(x.clone())).collect();
                let out = bma_point_estimate(&ests, &w).unwrap();
                for j in 0..3 {
                    let lo = ests.iter().map(|e| e[j]).fold(f64::INFINITY, f64::min);
                    let hi = ests.iter().map(|e| e[j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(out[j] >= lo - 1e-12 && out[j] <= hi + 1e-12);
                }
            }
        }
    }
}
