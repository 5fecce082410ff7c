//! AdamW with decoupled weight decay, plus a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: first and second moment estimates per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &[Tensor<T>]) -> Self {
        let zeros = |p: &Tensor<T>| vec![T::zero(); p.numel()];
        Self {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    /// Restores a saved state; `m` and `v` hold one buffer per parameter.
    pub fn from_parts(config: AdamWConfig, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Self {
        assert_eq!(m.len(), v.len(), "moment buffers differ in length");
        Self { config, step, m, v }
    }

    /// First and second moment buffers.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one update. Parameters without a gradient only receive the
    /// weight decay.
    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different parameter set");
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let decay = T::of(1.0 - lr * c.weight_decay);
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let data = p.data_mut();
            data.iter_mut().for_each(|w| *w *= decay);
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in data.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *w -= step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Cosine annealing from `base` to zero over `total` steps, no restarts.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total)) as f64 / total as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}
