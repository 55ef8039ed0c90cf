//! L1-regularized logistic regression fitted by proximal gradient descent.
//!
//! Minimizes `mean_i logloss(y_i, w·x_i + b) + lambda * ||w||_1` with the
//! bias left unpenalized. Each step takes a gradient step on the smooth part
//! and soft-thresholds the weights; the step size is halved until the
//! quadratic upper bound holds, which makes the objective non-increasing.

use serde::{Deserialize, Serialize};

use super::{check_training_set, Classifier};
use crate::error::Result;
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegOptions {
    /// Stop once the objective decreases by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 2000,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

/// Objective value after every accepted iteration, starting with the
/// initial point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub objective: Vec<f64>,
    pub converged: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Mean logistic loss of the unpenalized model.
pub fn logistic_loss(weights: &[f64], bias: f64, x: &[FeatureVector], y: &[bool]) -> f64 {
    let n = x.len() as f64;
    x.iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = xi.dot(weights) + bias;
            softplus(z) - if yi { z } else { 0.0 }
        })
        .sum::<f64>()
        / n
}

/// Mean logistic loss with its gradient in the weights and bias.
pub fn logistic_loss_grad(weights: &[f64], bias: f64, x: &[FeatureVector], y: &[bool]) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut grad = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z = xi.dot(weights) + bias;
        let target = if yi { 1.0 } else { 0.0 };
        loss += softplus(z) - target * z;
        let r = sigmoid(z) - target;
        grad_b += r;
        for (j, v) in xi.iter() {
            grad[j] += r * v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad, grad_b / n)
}

fn l1(w: &[f64]) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

pub fn train_l1_logreg(
    x: &[FeatureVector],
    n_features: usize,
    y: &[bool],
    lambda: f64,
    opts: &LogRegOptions,
) -> Result<LogRegModel> {
    train_l1_logreg_traced(x, n_features, y, lambda, opts).map(|(m, _)| m)
}

pub fn train_l1_logreg_traced(
    x: &[FeatureVector],
    n_features: usize,
    y: &[bool],
    lambda: f64,
    opts: &LogRegOptions,
) -> Result<(LogRegModel, TrainTrace)> {
    check_training_set(x, n_features, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(crate::Error::InvalidArgument(format!("lambda {lambda} must be finite and >= 0")));
    }
    let prior = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    // parameters are [w_0, .., w_{d-1}, b]; only the weights are penalized
    let mut start = vec![0.0; n_features + 1];
    start[n_features] = (prior / (1.0 - prior)).ln();
    let (theta, trace) = proximal_gradient(
        |t| logistic_loss(&t[..n_features], t[n_features], x, y),
        |t| {
            let (loss, mut g, gb) = logistic_loss_grad(&t[..n_features], t[n_features], x, y);
            g.push(gb);
            (loss, g)
        },
        start,
        n_features,
        lambda,
        opts,
    );
    let bias = theta[n_features];
    let mut weights = theta;
    weights.truncate(n_features);
    Ok((LogRegModel { weights, bias, lambda }, trace))
}

/// Minimize `f(θ) + lambda * Σ_{j < penalized} |θ_j|` for a smooth convex `f`.
///
/// `value` evaluates `f`; `value_grad` evaluates `f` and its gradient. The
/// trial step size comes from the Barzilai-Borwein secant estimate and is
/// halved until `f(θ') <= f(θ) + ∇f·(θ'-θ) + |θ'-θ|²/(2t)`. Iteration stops
/// when the objective decreases by less than `opts.tol`, when the iterate
/// stops moving, or after `opts.max_iter` steps.
pub fn proximal_gradient<V, G>(
    value: V,
    value_grad: G,
    start: Vec<f64>,
    penalized: usize,
    lambda: f64,
    opts: &LogRegOptions,
) -> (Vec<f64>, TrainTrace)
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let penalty = |t: &[f64]| lambda * l1(&t[..penalized]);
    let mut theta = start;
    let mut step = opts.initial_step;
    let (mut loss, mut grad) = value_grad(&theta);
    let mut objective = loss + penalty(&theta);
    let mut trace = TrainTrace {
        objective: vec![objective],
        converged: false,
    };

    for _ in 0..opts.max_iter {
        let (next, loss_next) = loop {
            let next: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .enumerate()
                .map(|(j, (t, g))| {
                    let moved = t - step * g;
                    if j < penalized {
                        soft_threshold(moved, step * lambda)
                    } else {
                        moved
                    }
                })
                .collect();
            let loss_next = value(&next);
            let (mut lin, mut sq) = (0.0, 0.0);
            for ((a, b), g) in next.iter().zip(&theta).zip(&grad) {
                let d = a - b;
                lin += d * g;
                sq += d * d;
            }
            if loss_next <= loss + lin + sq / (2.0 * step) || step < 1e-12 {
                break (next, loss_next);
            }
            step *= 0.5;
        };
        let objective_next = loss_next + penalty(&next);
        if next == theta {
            trace.converged = true;
            break;
        }
        if objective_next.is_nan() || objective_next > objective {
            // rounding noise at the optimum
            trace.converged = true;
            break;
        }
        let decrease = objective - objective_next;
        let (loss_new, grad_new) = value_grad(&next);
        // Barzilai-Borwein estimate of the inverse curvature along the last move
        let (mut ss, mut sy) = (0.0, 0.0);
        for j in 0..next.len() {
            let s = next[j] - theta[j];
            ss += s * s;
            sy += s * (grad_new[j] - grad[j]);
        }
        theta = next;
        objective = objective_next;
        trace.objective.push(objective);
        if decrease < opts.tol {
            trace.converged = true;
            break;
        }
        (loss, grad) = (loss_new, grad_new);
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { step * 2.0 };
    }
    (theta, trace)
}

impl LogRegModel {
    pub fn margin(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub fn objective(&self, x: &[FeatureVector], y: &[bool]) -> f64 {
        logistic_loss(&self.weights, self.bias, x, y) + self.lambda * l1(&self.weights)
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }
}

impl Classifier for LogRegModel {
    fn predict_proba_one(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.margin(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(pairs: &[(u32, f64)]) -> FeatureVector {
        FeatureVector {
            indices: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        }
    }

    fn random_binary(n: usize, d: usize, seed: u64) -> (Vec<FeatureVector>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let dense: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
            y.push(rng.random_bool(0.4));
            x.push(FeatureVector::from_dense(&dense));
        }
        (x, y)
    }

    #[test]
    fn separable_toy_set() {
        // feature 0 marks the positives, feature 1 the negatives
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let pos = i % 2 == 0;
            x.push(fv(&[(if pos { 0 } else { 1 }, 1.0), (2, (i % 3) as f64)]));
            y.push(pos);
        }
        let m = train_l1_logreg(&x, 3, &y, 1e-4, &LogRegOptions::default()).unwrap();
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| (m.predict_proba_one(xi) >= 0.5) == yi)
            .count() as f64
            / 20.0;
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let (x, y) = random_binary(60, 8, 3);
        let m = train_l1_logreg(&x, 8, &y, 1e6, &LogRegOptions::default()).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        let p = y.iter().filter(|&&v| v).count() as f64 / 60.0;
        assert!((m.bias - (p / (1.0 - p)).ln()).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = random_binary(40, 6, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = 0.3;
        let (_, g, gb) = logistic_loss_grad(&w, b, &x, &y);
        let h = 1e-5;
        for j in 0..6 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (logistic_loss(&wp, b, &x, &y) - logistic_loss(&wm, b, &x, &y)) / (2.0 * h);
            let rel = (fd - g[j]).abs() / g[j].abs().max(1e-8);
            assert!(rel < 1e-6, "feature {j}: fd {fd} analytic {}", g[j]);
        }
        let fd_b = (logistic_loss(&w, b + h, &x, &y) - logistic_loss(&w, b - h, &x, &y)) / (2.0 * h);
        assert!((fd_b - gb).abs() / gb.abs().max(1e-8) < 1e-6);
    }

    #[test]
    fn objective_never_increases() {
        let (x, y) = random_binary(80, 10, 17);
        let (_, trace) = train_l1_logreg_traced(&x, 10, &y, 1e-2, &LogRegOptions::default()).unwrap();
        assert!(trace.objective.len() > 2);
        for pair in trace.objective.windows(2) {
            assert!(pair[1] <= pair[0], "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn prox_solver_matches_closed_form_in_one_dimension() {
        // argmin_w 0.5 a (w - v)^2 + lambda |w| = soft_threshold(v, lambda / a)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let opts = LogRegOptions {
            tol: 1e-30,
            max_iter: 10_000,
            initial_step: 1.0,
        };
        for _ in 0..200 {
            let a: f64 = rng.random_range(0.2..4.0);
            let v: f64 = rng.random_range(-3.0..3.0);
            let lambda: f64 = rng.random_range(0.0..2.0);
            let (w, trace) = proximal_gradient(
                |t| 0.5 * a * (t[0] - v).powi(2),
                |t| (0.5 * a * (t[0] - v).powi(2), vec![a * (t[0] - v)]),
                vec![0.0],
                1,
                lambda,
                &opts,
            );
            assert!((w[0] - soft_threshold(v, lambda / a)).abs() < 1e-8, "a={a} v={v} lambda={lambda}: {}", w[0]);
            assert!(trace.objective.windows(2).all(|p| p[1] <= p[0]));
        }
    }

    #[test]
    fn soft_threshold_solves_quadratic_plus_l1() {
        // argmin_w 0.5 (w - v)^2 + t |w|
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v: f64 = rng.random_range(-3.0..3.0);
            let t: f64 = rng.random_range(0.0..2.0);
            let closed = soft_threshold(v, t);
            // bisection on the subgradient optimality condition 0 ∈ w - v + t·∂|w|
            let upper = |w: f64| w - v + if w >= 0.0 { t } else { -t };
            let (mut lo, mut hi) = (-5.0f64, 5.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if upper(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((closed - (lo + hi) / 2.0).abs() < 1e-8, "v={v} t={t}");
        }
    }

    #[test]
    fn input_validation() {
        let x = vec![fv(&[(0, 1.0)]), fv(&[(0, 0.5)])];
        assert!(matches!(
            train_l1_logreg(&x, 1, &[true, true], 0.1, &LogRegOptions::default()),
            Err(Error::SingleClass)
        ));
        let bad = vec![fv(&[(0, f64::NAN)]), fv(&[(0, 1.0)])];
        assert!(matches!(
            train_l1_logreg(&bad, 1, &[true, false], 0.1, &LogRegOptions::default()),
            Err(Error::NonFinite { row: 0 })
        ));
        assert!(train_l1_logreg(&x, 1, &[true], 0.1, &LogRegOptions::default()).is_err());
        assert!(train_l1_logreg(&x, 1, &[true, false], -1.0, &LogRegOptions::default()).is_err());
    }

    #[test]
    fn probabilities() {
        let zero = LogRegModel {
            weights: vec![0.0; 3],
            bias: 0.0,
            lambda: 0.0,
        };
        assert_eq!(zero.predict_proba_one(&fv(&[(1, 1.0)])), 0.5);
        let m = LogRegModel {
            weights: vec![2.0],
            bias: 0.0,
            lambda: 0.0,
        };
        assert!((m.predict_proba_one(&fv(&[(0, 1.0)])) - 0.880797).abs() < 1e-6);
        let batch: Vec<_> = (0..7).map(|i| fv(&[(0, i as f64 - 3.0)])).collect();
        let probs = m.predict_proba(&batch);
        assert_eq!(probs.len(), 7);
        // monotone in the margin
        assert!(probs.windows(2).all(|p| p[0] < p[1]));
    }
}
