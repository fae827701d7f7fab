//! Finite-difference gradient checking.
//!
//! These helpers never touch the tape: they re-evaluate a scalar function at
//! perturbed inputs, so agreement between [`numerical_gradient`] and
//! [`crate::Graph::backward`] is evidence that two independent computations
//! of the same derivative coincide.

use alloc::vec::Vec;

use crate::fmath;

/// Central-difference gradient of `f` at `x`: `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h`
/// for every coordinate. `f` must be deterministic.
pub fn numerical_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

fn l2(v: &[f64]) -> f64 {
    fmath::sqrt(v.iter().map(|a| a * a).sum())
}

/// Relative error `‖a − b‖₂ / max(‖b‖₂, tiny)`, with `b` the reference.
/// When both vectors are (near) zero the error is reported as zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    const TINY: f64 = 1e-12;
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let mut diff = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
    }
    let diff = fmath::sqrt(diff);
    let denom = l2(b);
    if denom < TINY && diff < TINY {
        return 0.0;
    }
    diff / denom.max(TINY)
}
