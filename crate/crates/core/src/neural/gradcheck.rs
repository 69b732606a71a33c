//! Finite-difference helpers for double-precision gradient checks.

use rand::Rng;

/// Default central-difference step for `f64` checks.
pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const FLOOR: f64 = 1e-3;

/// Uniform values in `[-1, 1)`.
pub fn random_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Largest relative error between `grad` and central differences of `f` at `x`.
pub fn max_rel_error(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) -> f64 {
    max_rel_error_with(f, x, grad, STEP, FLOOR)
}

pub fn max_rel_error_with(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], h: f64, floor: f64) -> f64 {
    assert_eq!(x.len(), grad.len(), "gradient length mismatch");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}
