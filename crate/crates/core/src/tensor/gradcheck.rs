//! Finite-difference gradient verification.
//!
//! The checker perturbs one coordinate at a time with a central difference,
//! so it is an oracle that shares no code with the tape's backward pass.

use crate::error::Result;

/// Default perturbation for central differences on f64 losses.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error floor. Components whose analytic and numeric magnitudes
/// both sit below this are compared on an absolute scale where
/// finite-difference roundoff would otherwise dominate.
pub const REL_FLOOR: f64 = 1e-3;

/// Central-difference gradient of `f` at `x0`: (f(x+h e_i) - f(x-h e_i)) / 2h.
pub fn central_difference<F>(mut f: F, x0: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = x0.to_vec();
    let mut grad = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x)?;
        x[i] = orig - step;
        let down = f(&x)?;
        x[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest per-component relative error between two gradients, with the
/// denominator floored at [`REL_FLOOR`].
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn central_difference_on_square() {
        // d/dx x^2 at 3 is 6.
        let g = central_difference(|x| Ok(x[0] * x[0]), &[3.0], DEFAULT_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let analytic = [6.0];
        let sabotaged = [5.9];
        assert!(max_rel_error(&analytic, &sabotaged) > 1e-2);
    }

    #[test]
    fn tape_loss_matches_finite_differences() {
        let x0 = [0.4, -1.3, 0.9, 0.2];
        let f = |x: &[f64]| {
            let mut tape = Tape::new();
            let v = tape.leaf(Tensor::matrix(1, 4, x.to_vec())?)?;
            let t = tape.tanh(v)?;
            let u = tape.bilinear_upsample(t, 2, 2, 3, 3)?;
            let l = tape.mse_masked(u, &[0.1; 9], None)?;
            tape.value(l).item()
        };
        let numeric = central_difference(f, &x0, DEFAULT_STEP).unwrap();

        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::matrix(1, 4, x0.to_vec()).unwrap()).unwrap();
        let t = tape.tanh(v).unwrap();
        let u = tape.bilinear_upsample(t, 2, 2, 3, 3).unwrap();
        let l = tape.mse_masked(u, &[0.1; 9], None).unwrap();
        tape.backward(l).unwrap();
        let analytic = tape.grad_or_zeros(v);

        assert!(max_rel_error(&analytic, &numeric) < 1e-6);
    }
}
