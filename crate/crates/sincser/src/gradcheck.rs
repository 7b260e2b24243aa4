//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays
//! independent of whatever analytic backward it is used to verify.

/// Central difference gradient of `loss` at `point`.
///
/// `point` is restored to its original values before returning.
pub fn central_diff<F>(mut loss: F, point: &mut [f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; point.len()];
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = loss(point);
        point[i] = orig - h;
        let minus = loss(point);
        point[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Largest elementwise relative error between two gradient vectors.
///
/// Entries where both magnitudes fall below `floor` compare as equal, so
/// zero gradients do not blow the ratio up.
pub fn max_rel_error_floored(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0_f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs());
        if denom < floor {
            continue;
        }
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

/// [`max_rel_error_floored`] with the floor used throughout the test suites.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_rel_error_floored(analytic, numeric, 1e-8)
}
