//! Numerical gradient checking against central finite differences.
//!
//! The forward closure is re-evaluated while a leaf tensor is perturbed in
//! place, so the analytic gradient (from [`backward`](super::backward)) can
//! be compared element by element with `(f(x+h) - f(x-h)) / 2h`.

use super::Tensor;

/// Central finite-difference gradient of `loss_fn` w.r.t. every element of
/// `x`. The closure must rebuild the forward pass from the current tensor
/// contents; `x` is restored afterwards.
pub fn finite_diff_grad(x: &Tensor, h: f64, mut loss_fn: impl FnMut() -> f64) -> Vec<f64> {
    let n = x.numel();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let original = x.data()[i];
        x.update_data(|d| d[i] = original + h);
        let plus = loss_fn();
        x.update_data(|d| d[i] = original - h);
        let minus = loss_fn();
        x.update_data(|d| d[i] = original);
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative error between two gradient vectors:
/// `||a - b|| / max(||a||, ||b||, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
