use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. `step` returns the update to subtract.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        grad.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                lr * (*m / c1) / ((*v / c2).sqrt() + epsilon)
            })
            .collect()
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineAnnealing {
    pub lr_max: f64,
    pub lr_min: f64,
    pub t_max: usize,
}

impl CosineAnnealing {
    pub fn lr(&self, t: usize) -> f64 {
        if self.t_max == 0 {
            return self.lr_max;
        }
        let t = t.min(self.t_max) as f64;
        self.lr_min + (self.lr_max - self.lr_min) * 0.5 * (1.0 + (PI * t / self.t_max as f64).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_monotone() {
        let s = CosineAnnealing {
            lr_max: 1e-3,
            lr_min: 0.0,
            t_max: 100,
        };
        assert_eq!(s.lr(0), 1e-3);
        assert!(s.lr(100).abs() < 1e-18);
        for t in 0..100 {
            assert!(s.lr(t + 1) <= s.lr(t));
        }
        let mid = CosineAnnealing { lr_min: 1e-4, ..s };
        assert!((mid.lr(100) - 1e-4).abs() < 1e-18);
        assert!((mid.lr(50) - 5.5e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = Adam::new(4, AdamConfig::default());
        for _ in 0..5 {
            assert!(adam.step(&[0.0; 4], 1e-3).iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut adam = Adam::new(3, AdamConfig::default());
        let d = adam.step(&[0.5, -2.0, 1e-3], 0.01);
        for (x, sign) in d.iter().zip([1.0, -1.0, 1.0]) {
            assert!((x - sign * 0.01).abs() < 1e-7, "{x}");
        }
    }
}
