//! Finite-difference oracle for validating analytic gradients.
//!
//! Deliberately independent of the tape: it only evaluates a closure over a
//! flat coordinate vector, so it can check any differentiable pipeline.

/// Central-difference gradient of `f` at `x` with step `h`, one coordinate at
/// a time.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst-case relative disagreement between two gradient vectors. The
/// denominator is floored so that coordinates whose true gradient is zero do
/// not blow the ratio up on rounding noise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = central_difference(&f, &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floors_small_gradients() {
        assert!(max_relative_error(&[0.0], &[1e-10]) < 1e-5);
        assert!(max_relative_error(&[1.0], &[1.1]) > 0.05);
    }
}
