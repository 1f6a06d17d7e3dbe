//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{MarError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(MarError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(MarError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(MarError::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Moment estimates for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape)).collect(),
        }
    }

    /// One update of every parameter.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(MarError::shape(&[self.m.len()], &[params.len().min(grads.len())]));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape != m.shape || g.shape != m.shape {
                return Err(MarError::shape(&m.shape, &g.shape));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr_t = c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        let eps_t = c.eps * (1.0 - c.beta2.powi(t)).sqrt();
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (lr_t, eps_t) = (T::from_f64(lr_t), T::from_f64(eps_t));
        let one = T::one();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *w -= lr_t * *mi / (vi.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}
