//! Quick invariant checks that can run from an installed binary.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gaussian::{collapse_mixture, GaussianBelief};
use crate::gpts::{gp_predict_next, poe_combine, GptsModel, PredictiveGaussian};
use crate::kf::{kf_bdemm_step, kf_predict, kf_update, KfEnsembleState, LinearGaussianModel};
use crate::weights::{normalize_weights, update_model_weights, WeightHistory, WeightVector};
use crate::wtt::{apply_wtt, sticky_transition_matrix, WttConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed,
        detail: detail.into(),
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> WeightVector {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    normalize_weights(&raw).expect("positive entries")
}

fn wtt_simplex(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = 0.0f64;
    let mut ok = true;
    for _ in 0..200 {
        let k = rng.random_range(1..6);
        let mut h = WeightHistory::new(random_simplex(rng, k));
        for _ in 0..rng.random_range(0..4) {
            h.push(random_simplex(rng, k)).expect("same length");
        }
        let ops = [
            WttConfig::identity(),
            WttConfig::constant(random_simplex(rng, k)),
            WttConfig::markov(sticky_transition_matrix(k, 0.9)),
            WttConfig::forgetting(rng.random_range(0.01..1.0)),
            WttConfig::polya_urn(vec![1; k]),
        ];
        for op in &ops {
            match apply_wtt(op, &h) {
                Ok(w) => {
                    let dev = (w.as_slice().iter().sum::<f64>() - 1.0).abs();
                    worst = worst.max(dev);
                    ok &= dev <= 1e-12 && w.as_slice().iter().all(|&x| x >= 0.0);
                }
                Err(_) => ok = false,
            }
        }
    }
    check("weight operators stay on the simplex", ok, format!("max |sum - 1| = {worst:e}"))
}

fn update_scale_invariance(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..6);
        let prior = random_simplex(rng, k);
        let ev: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-6).collect();
        let c = 10f64.powf(rng.random_range(-50.0..50.0));
        let scaled: Vec<f64> = ev.iter().map(|e| e * c).collect();
        let a = update_model_weights(&prior, &ev).expect("positive evidence");
        let b = update_model_weights(&prior, &scaled).expect("positive evidence");
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            worst = worst.max((x - y).abs());
        }
    }
    check("weight update ignores evidence scale", worst < 1e-12, format!("max diff = {worst:e}"))
}

fn kf_single_model() -> Check {
    let m = LinearGaussianModel::scalar(0.9, 0.3, 1.0, 0.5);
    let mut state = KfEnsembleState::uniform(GaussianBelief::scalar(0.0, 1.0), 1);
    let mut belief = GaussianBelief::scalar(0.0, 1.0);
    let mut worst = 0.0f64;
    for t in 0..50 {
        let y = DVector::from_element(1, (t as f64 * 0.37).sin() * 3.0);
        let (next, _) = kf_bdemm_step(&state, std::slice::from_ref(&m), &y, &WttConfig::identity())
            .expect("valid model");
        let pred = kf_predict(&m, &belief).expect("valid model");
        belief = kf_update(&m, &pred, &y).expect("valid model").posterior;
        worst = worst
            .max((next.belief.mean[0] - belief.mean[0]).abs())
            .max((next.belief.cov[(0, 0)] - belief.cov[(0, 0)]).abs());
        state = next;
    }
    check("one-model Kalman ensemble equals a plain filter", worst < 1e-10, format!("max diff = {worst:e}"))
}

fn collapse_psd(rng: &mut ChaCha8Rng) -> Check {
    let mut ok = true;
    for _ in 0..100 {
        let d = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let comps: Vec<GaussianBelief> = (0..k)
            .map(|_| {
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                let mean = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
                GaussianBelief::new(mean, &a * a.transpose() + DMatrix::identity(d, d) * 1e-3).expect("psd")
            })
            .collect();
        match collapse_mixture(&comps, &random_simplex(rng, k)) {
            Ok(b) => ok &= b.is_psd() && b.is_symmetric(1e-12),
            Err(_) => ok = false,
        }
    }
    check("collapsed mixture covariance is symmetric PSD", ok, "100 random mixtures")
}

fn gp_interpolates() -> Check {
    let m = GptsModel {
        mean: 0.0,
        signal_variance: 1.0,
        lengthscale: 2.0,
        noise_var: 0.0,
        window: 8,
    };
    let times: Vec<f64> = (1..=8).map(f64::from).collect();
    let obs: Vec<f64> = times.iter().map(|t| (0.7 * t).cos()).collect();
    let mut worst = 0.0f64;
    for (t, y) in times.iter().zip(&obs) {
        match gp_predict_next(&m, &times, &obs, *t) {
            Ok(p) => worst = worst.max((p.mean - y).abs()),
            Err(_) => worst = f64::INFINITY,
        }
    }
    check("noise-free GP reproduces its training targets", worst < 1e-6, format!("max diff = {worst:e}"))
}

fn poe_precision() -> Check {
    let experts = [
        PredictiveGaussian { mean: 0.0, var: 1.0 },
        PredictiveGaussian { mean: 2.0, var: 4.0 },
    ];
    let w = WeightVector::new(vec![0.25, 0.75]).expect("simplex");
    let ok = poe_combine(&experts, &w).is_ok_and(|p| {
        let lambda = 1.0 / p.var;
        lambda >= 0.25 && lambda >= 0.75 / 4.0 && (lambda - (0.25 + 0.75 / 4.0)).abs() < 1e-12
    });
    check("product of experts adds precisions", ok, "two experts")
}

/// Runs every check with a fixed seed.
pub fn run_selftest() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    vec![
        wtt_simplex(&mut rng),
        update_scale_invariance(&mut rng),
        kf_single_model(),
        collapse_psd(&mut rng),
        gp_interpolates(),
        poe_precision(),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        for c in super::run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
