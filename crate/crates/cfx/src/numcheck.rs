//! Finite-difference gradient oracle.
//!
//! Independent of the tape's backward pass: it only re-evaluates the forward
//! function at perturbed points. Parameters are f32, so the divisor uses the
//! actually representable step, not the nominal one.

/// Central finite differences: (f(x+h) - f(x-h)) / (actual step) per
/// coordinate.
pub fn finite_difference_grad(
    mut f: impl FnMut(&[f32]) -> f64,
    x: &[f32],
    h: f32,
) -> Vec<f64> {
    let mut grad = vec![0.0f64; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        let up = orig + h;
        let down = orig - h;
        probe[i] = up;
        let fp = f(&probe);
        probe[i] = down;
        let fm = f(&probe);
        probe[i] = orig;
        let step = up as f64 - down as f64;
        grad[i] = (fp - fm) / step;
    }
    grad
}

/// Norm-relative error between two gradient vectors:
/// ||a - b|| / max(||b||, 1e-8).
pub fn grad_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut diff = 0.0f64;
    let mut norm = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        diff += (x - y).powi(2);
        norm += y.powi(2);
    }
    diff.sqrt() / norm.sqrt().max(1e-8)
}
