//! Learning-rate schedule: linear warmup to the peak rate, then cosine
//! annealing down to the floor rate.

/// Step-indexed learning-rate schedule over a fixed training horizon.
///
/// Steps `0..warmup_steps` warm up linearly, with the convention that the
/// first update already moves: `lr(s) = max_lr * (s+1) / warmup_steps`, so
/// the last warmup step reaches `max_lr` exactly. The remaining steps
/// follow a half-cosine from `max_lr` down to `min_lr`, and the final step
/// of the horizon lands on `min_lr` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub max_lr: f64,
    pub min_lr: f64,
}

impl Schedule {
    pub fn new(warmup_steps: usize, total_steps: usize, max_lr: f64, min_lr: f64) -> Self {
        assert!(total_steps > 0, "schedule needs at least one step");
        assert!(warmup_steps < total_steps, "warmup must end before the horizon");
        Schedule {
            warmup_steps,
            total_steps,
            max_lr,
            min_lr,
        }
    }

    /// Learning rate for a 0-based global step. Steps past the horizon
    /// (which a well-formed training loop never produces) stay at the floor.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.max_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let last = self.total_steps - 1;
        if step >= last {
            // Exact floor on the final step, no trigonometric rounding.
            return self.min_lr;
        }
        let span = (last - self.warmup_steps) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        self.min_lr
            + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
