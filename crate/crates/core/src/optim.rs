//! Adam with a linear warm-up / linear decay learning-rate schedule.

use crate::model::ModelParams;

/// Linear warm-up to `peak` over the first `warmup_steps` updates, then linear
/// decay to zero at `total_steps`. Steps are 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            peak,
            warmup_steps: (warmup_fraction * total_steps as f64) as usize,
            total_steps,
        }
    }

    pub fn rate(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps.max(1) as f64;
        }
        let remaining = self.total_steps.saturating_sub(step) as f64;
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        self.peak * (remaining / span).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `θ ← θ − lr·wd·θ`.
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.slots().iter().map(|(_, s)| vec![0.0; s.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let grad_slots = grads.slots();
        for (k, theta) in params.slots_mut().into_iter().enumerate() {
            let g = grad_slots[k].1;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..theta.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                theta[i] -= lr * (update + self.weight_decay * theta[i]);
            }
        }
    }
}

pub fn global_norm(grads: &ModelParams) -> f64 {
    grads
        .slots()
        .iter()
        .flat_map(|(_, s)| s.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for slot in grads.slots_mut() {
            slot.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = Schedule::new(1.0, 0.1, 100);
        assert_eq!(s.warmup_steps, 10);
        assert_eq!(s.rate(0), 0.0);
        assert!((s.rate(5) - 0.5).abs() < 1e-12);
        assert_eq!(s.rate(10), 1.0);
        assert!((s.rate(55) - 0.5).abs() < 1e-12);
        assert_eq!(s.rate(100), 0.0);
        assert_eq!(s.rate(150), 0.0);
        let rates: Vec<f64> = (10..=100).map(|t| s.rate(t)).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        let s = Schedule::new(2.0, 0.0, 4);
        assert_eq!(s.rate(0), 2.0);
        assert_eq!(s.rate(2), 1.0);
    }
}
