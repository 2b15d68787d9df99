//! Loss functions, their curvature bounds, and the elastic-net thresholding rule.
//!
//! Every trainer in this crate reduces a coordinate update to the same
//! one-dimensional problem: minimize
//!
//! ```text
//! phi(delta) = x*delta + (y/2)*delta^2 + alpha*|w + delta| + (lambda/2)*(w + delta)^2
//! ```
//!
//! over the step `delta`, where `x` is the accumulated gradient, `y` the
//! accumulated curvature, and `w` the current parameter value. [`threshold_t`]
//! solves this in closed form.

use crate::error::{Error, Result};

/// Loss function selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `(y_hat - y)^2`, for regression.
    Square,
    /// `y*ln(1 + e^-y_hat) + (1-y)*ln(1 + e^y_hat)`, for classification
    /// with labels in `[0, 1]`.
    Logistic,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Square => "square",
            LossKind::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        match s {
            "square" => Some(LossKind::Square),
            "logistic" => Some(LossKind::Logistic),
            _ => None,
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Regularization weights and latent dimension shared by all trainers.
#[derive(Debug, Clone, Copy)]
pub struct Hyperparameters {
    /// l1 weight, `>= 0`.
    pub alpha: f64,
    /// l2 weight, `>= 0`.
    pub lambda: f64,
    /// Latent dimension, `>= 1`.
    pub dim: usize,
}

impl Hyperparameters {
    pub fn new(alpha: f64, lambda: f64, dim: usize) -> Self {
        assert!(alpha.is_finite() && alpha >= 0.0, "alpha must be finite and >= 0");
        assert!(lambda.is_finite() && lambda >= 0.0, "lambda must be finite and >= 0");
        assert!(dim >= 1, "dim must be >= 1");
        Hyperparameters { alpha, lambda, dim }
    }
}

/// Numerically stable `ln(1 + e^t)`.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Loss of a single prediction. Non-finite inputs propagate to the result
/// so divergence surfaces in the recomputed objective.
pub fn loss_value(kind: LossKind, y_hat: f64, y: f64) -> f64 {
    match kind {
        LossKind::Square => {
            let d = y_hat - y;
            d * d
        }
        LossKind::Logistic => y * softplus(-y_hat) + (1.0 - y) * softplus(y_hat),
    }
}

/// `d/d(y_hat)` of [`loss_value`].
pub fn loss_gradient(kind: LossKind, y_hat: f64, y: f64) -> f64 {
    match kind {
        LossKind::Square => 2.0 * (y_hat - y),
        LossKind::Logistic => sigmoid(y_hat) - y,
    }
}

/// Upper bound `beta` on the second derivative of the loss, so that
/// `l(y + dy) <= l(y) + l'(y)*dy + (beta/2)*dy^2` for all `y`, `dy`.
pub fn curvature_bound(kind: LossKind) -> f64 {
    match kind {
        LossKind::Square => 2.0,
        LossKind::Logistic => 0.25,
    }
}

/// Closed-form minimizer of the elastic-net coordinate subproblem.
///
/// Returns the step `delta` minimizing
/// `x*delta + (y/2)*delta^2 + alpha*|w + delta| + (lambda/2)*(w + delta)^2`.
/// Requires `y >= 0` and `y + lambda > 0`.
pub fn threshold_t(x: f64, y: f64, w: f64, alpha: f64, lambda: f64) -> Result<f64> {
    if y + lambda <= 0.0 {
        return Err(Error::DegenerateCurvature);
    }
    Ok(threshold_t_unchecked(x, y, w, alpha, lambda))
}

/// [`threshold_t`] without the curvature check; callers guarantee
/// `y + lambda > 0`.
#[inline]
pub(crate) fn threshold_t_unchecked(x: f64, y: f64, w: f64, alpha: f64, lambda: f64) -> f64 {
    debug_assert!(y + lambda > 0.0);
    let denom = y + lambda;
    let ridge_grad = x + lambda * w;
    if w - ridge_grad / denom >= 0.0 {
        (-(ridge_grad + alpha) / denom).max(-w)
    } else {
        (-(ridge_grad - alpha) / denom).min(-w)
    }
}

/// Elastic-net penalty `alpha*||m||_1 + (lambda/2)*||m||_2^2` of a flat
/// coefficient slice.
pub fn elastic_net_penalty(entries: &[f64], alpha: f64, lambda: f64) -> f64 {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for &v in entries {
        l1 += v.abs();
        l2 += v * v;
    }
    alpha * l1 + 0.5 * lambda * l2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The objective the thresholding rule must minimize.
    pub(crate) fn phi(delta: f64, x: f64, y: f64, w: f64, alpha: f64, lambda: f64) -> f64 {
        x * delta + 0.5 * y * delta * delta
            + alpha * (w + delta).abs()
            + 0.5 * lambda * (w + delta) * (w + delta)
    }

    /// Brute-force minimum of phi over a grid; independent check of
    /// `threshold_t`.
    pub(crate) fn grid_min_phi(x: f64, y: f64, w: f64, alpha: f64, lambda: f64) -> f64 {
        let mut best = f64::INFINITY;
        let steps = 200_000;
        for i in 0..=steps {
            let delta = -10.0 + i as f64 * 1e-4;
            let v = phi(delta, x, y, w, alpha, lambda);
            if v < best {
                best = v;
            }
        }
        best
    }

    #[test]
    fn square_loss_values() {
        assert_eq!(loss_value(LossKind::Square, 3.0, 1.0), 4.0);
        assert_eq!(loss_value(LossKind::Square, 0.7, 0.7), 0.0);
    }

    #[test]
    fn logistic_loss_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((loss_value(LossKind::Logistic, 0.0, 1.0) - ln2).abs() < 1e-12);
        // large magnitudes stay finite
        assert!(loss_value(LossKind::Logistic, 800.0, 0.0).is_finite());
        assert!(loss_value(LossKind::Logistic, -800.0, 1.0).is_finite());
    }

    #[test]
    fn gradients_match_analytic_values() {
        assert_eq!(loss_gradient(LossKind::Square, 3.0, 1.0), 4.0);
        assert_eq!(loss_gradient(LossKind::Logistic, 0.0, 0.5), 0.0);
        assert!((loss_gradient(LossKind::Logistic, 0.0, 1.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..1000 {
            let (kind, y_hat, y) = if rng.random_bool(0.5) {
                (
                    LossKind::Square,
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            } else {
                (
                    LossKind::Logistic,
                    rng.random_range(-8.0..8.0),
                    rng.random_range(0.0..=1.0),
                )
            };
            let g = loss_gradient(kind, y_hat, y);
            let fd = (loss_value(kind, y_hat + h, y) - loss_value(kind, y_hat - h, y)) / (2.0 * h);
            assert!(
                (g - fd).abs() <= 1e-5 * (1.0 + g.abs()),
                "{kind:?} at ({y_hat}, {y}): grad {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn curvature_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for &kind in &[LossKind::Square, LossKind::Logistic] {
            let beta = curvature_bound(kind);
            for _ in 0..10_000 {
                let y = match kind {
                    LossKind::Square => rng.random_range(-4.0..4.0),
                    LossKind::Logistic => rng.random_range(0.0..=1.0),
                };
                let y_hat = rng.random_range(-4.0..4.0);
                let dy = rng.random_range(-4.0..4.0);
                let lhs = loss_value(kind, y_hat + dy, y);
                let rhs = loss_value(kind, y_hat, y)
                    + loss_gradient(kind, y_hat, y) * dy
                    + 0.5 * beta * dy * dy;
                assert!(
                    lhs <= rhs + 1e-12,
                    "{kind:?} bound violated at ({y_hat}, {y}, {dy}): {lhs} > {rhs}"
                );
            }
        }
    }

    #[test]
    fn square_curvature_bound_is_tight() {
        // y_hat = 0, y = 1, dy = 1: both sides evaluate to 0.
        let lhs = loss_value(LossKind::Square, 1.0, 1.0);
        let rhs = loss_value(LossKind::Square, 0.0, 1.0)
            + loss_gradient(LossKind::Square, 0.0, 1.0)
            + 0.5 * curvature_bound(LossKind::Square);
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn threshold_hand_cases() {
        assert_eq!(threshold_t(0.0, 1.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!((threshold_t(-6.0, 10.0, 0.0, 0.0, 0.0).unwrap() - 0.6).abs() < 1e-15);
        assert!((threshold_t(-6.0, 10.0, 0.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(threshold_t(2.0, 1.0, 0.0, 3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn threshold_degenerate_curvature_is_rejected() {
        assert!(matches!(
            threshold_t(1.0, 0.0, 0.5, 0.1, 0.0),
            Err(Error::DegenerateCurvature)
        ));
    }

    #[test]
    fn threshold_without_l1_is_exact_ridge_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let x = rng.random_range(-5.0..5.0);
            let y = rng.random_range(0.1..5.0);
            let w = rng.random_range(-3.0..3.0);
            let lambda = rng.random_range(0.0..2.0);
            let got = threshold_t(x, y, w, 0.0, lambda).unwrap();
            let want = -(x + lambda * w) / (y + lambda);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn threshold_beats_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..1000 {
            let x = rng.random_range(-5.0..5.0);
            let w = rng.random_range(-3.0..3.0);
            let alpha = rng.random_range(0.0..2.0);
            let lambda = rng.random_range(0.0..2.0);
            let y = loop {
                let y = rng.random_range(0.0..5.0);
                if y + lambda >= 0.1 {
                    break y;
                }
            };
            let delta = threshold_t(x, y, w, alpha, lambda).unwrap();
            let ours = phi(delta, x, y, w, alpha, lambda);
            let grid = grid_min_phi(x, y, w, alpha, lambda);
            assert!(
                ours <= grid + 1e-6,
                "phi(T)={ours} exceeds grid minimum {grid} at (x={x}, y={y}, w={w}, a={alpha}, l={lambda})"
            );
        }
    }

    #[test]
    fn elastic_net_hand_cases() {
        assert_eq!(elastic_net_penalty(&[3.0], 1.0, 2.0), 12.0);
        assert_eq!(elastic_net_penalty(&[0.0, 0.0], 1.0, 2.0), 0.0);
        assert_eq!(elastic_net_penalty(&[1.0, 2.0], 0.0, 2.0), 5.0);
    }
}
