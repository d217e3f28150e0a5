/// Linear warmup followed by cosine annealing to zero.
///
/// The first `ceil(warmup_fraction * total)` steps ramp linearly from 0;
/// afterwards the rate follows `peak * (1 + cos(pi * progress)) / 2`,
/// reaching 0 on the final step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let warmup_steps = (warmup_fraction * total_steps as f64).ceil() as usize;
        CosineSchedule {
            peak,
            warmup_steps: warmup_steps.min(total_steps.saturating_sub(1)),
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let span = self
            .total_steps
            .saturating_sub(1)
            .saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.peak;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Learning rate at `step` of `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, peak: f64, warmup_fraction: f64) -> f64 {
    CosineSchedule::new(peak, warmup_fraction, total_steps).lr(step)
}
