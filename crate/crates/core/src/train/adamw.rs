//! AdamW: Adam moment estimation with decoupled weight decay.

use crate::error::{LabError, Result};

/// Optimizer state for one flat parameter vector.
///
/// Weight decay is decoupled: parameters are first shrunk by
/// `1 - lr * weight_decay`, then moved by the bias-corrected Adam update.
/// Coefficients follow the common defaults β = (0.9, 0.999), ε = 1e-8.
#[derive(Debug, Clone)]
pub struct AdamW {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps_taken: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamW {
    pub fn new(len: usize) -> Self {
        AdamW {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            steps_taken: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One optimizer step in place. Gradient length must match the state.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(LabError::Shape(format!(
                "optimizer state for {} values got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.steps_taken += 1;
        let bias1 = 1.0 - self.beta1.powi(self.steps_taken as i32);
        let bias2 = 1.0 - self.beta2.powi(self.steps_taken as i32);
        for i in 0..params.len() {
            params[i] *= 1.0 - lr * weight_decay;
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * grads[i];
            *v = self.beta2 * *v + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            if !params[i].is_finite() {
                return Err(LabError::NonFinite { op: "adamw_step" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_leaves_params_bitwise_unchanged() {
        let mut opt = AdamW::new(3);
        let mut params = vec![1.5, -0.25, 1e-12];
        let before = params.clone();
        for _ in 0..5 {
            opt.step(&mut params, &[0.0, 0.0, 0.0], 0.1, 0.0).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn single_step_matches_hand_computed_recurrence() {
        let mut opt = AdamW::new(1);
        let mut params = vec![1.0];
        let (g, lr) = (0.5, 0.1);
        opt.step(&mut params, &[g], lr, 0.0).unwrap();
        // First-step closed form: m̂ = g, v̂ = g², update = lr·g/(|g|+ε).
        let m_hat = (0.1 * g) / (1.0 - 0.9);
        let v_hat = (0.001 * g * g) / (1.0 - 0.999);
        let expected = 1.0 - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn decay_without_gradient_shrinks_by_the_decoupled_factor() {
        let mut opt = AdamW::new(1);
        let mut params = vec![2.0];
        let (lr, wd) = (0.1, 0.05);
        opt.step(&mut params, &[0.0], lr, wd).unwrap();
        assert!((params[0] - 2.0 * (1.0 - lr * wd)).abs() < 1e-15);
        opt.step(&mut params, &[0.0], lr, wd).unwrap();
        assert!((params[0] - 2.0 * (1.0 - lr * wd).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let mut opt = AdamW::new(2);
        let mut params = vec![0.0, 0.0];
        assert!(opt.step(&mut params, &[1.0], 0.1, 0.0).is_err());
        let mut short = vec![0.0];
        assert!(opt.step(&mut short, &[1.0, 1.0], 0.1, 0.0).is_err());
    }

    #[test]
    fn repeated_steps_are_deterministic() {
        let run = || {
            let mut opt = AdamW::new(2);
            let mut params = vec![0.3, -0.7];
            for t in 0..20 {
                let g = [(t as f64).sin(), (t as f64).cos()];
                opt.step(&mut params, &g, 1e-2, 0.05).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }
}
