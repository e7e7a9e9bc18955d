//! Central finite differences, used as an independent oracle for the
//! analytic gradients in this crate.

use crate::embedding::FINITE_DIFF_STEP;

/// Gradient norms below this are compared in absolute rather than relative terms.
pub const GRAD_NORM_FLOOR: f64 = 1e-3;

/// Central-difference gradient of `f` at `point` with step `h`.
pub fn central_diff<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = point.to_vec();
    (0..point.len())
        .map(|i| {
            p[i] = point[i] + h;
            let fp = f(&p);
            p[i] = point[i] - h;
            let fm = f(&p);
            p[i] = point[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference vector-Jacobian product `Jᵀ c` of a vector map.
pub fn central_diff_vjp<F>(f: F, point: &[f64], cotangent: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    central_diff(
        |x| f(x).iter().zip(cotangent).map(|(a, b)| a * b).sum(),
        point,
        h,
    )
}

/// `|a - b| / max(|a|, |b|, floor)` measured in the Euclidean norm.
///
/// The floor keeps near-zero gradients from turning rounding noise into a
/// huge relative error.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Convenience: relative error of `grad` against central differences of `f`
/// at the default step.
pub fn check<F>(f: F, grad: &[f64], point: &[f64]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let numeric = central_diff(f, point, FINITE_DIFF_STEP);
    relative_error(grad, &numeric, GRAD_NORM_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let f = |v: &[f64]| v[0] * v[0] + 2.0 * v[0] * v[1] + v[1] * v[1];
        let g = central_diff(f, &[1.0, 2.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert!((g[1] - 6.0).abs() < 1e-6);
    }
}
