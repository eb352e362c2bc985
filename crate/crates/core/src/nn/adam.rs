use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(model: &Mlp, config: AdamConfig) -> Self {
        let n = model.num_params();
        Self {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Apply one update with learning rate `lr` (overriding the configured one).
    pub fn step_with_lr(&mut self, model: &mut Mlp, grads: &Gradients, lr: f64) -> Result<()> {
        let n = model.num_params();
        if grads.len() != n || self.m.len() != n {
            return Err(Error::Dimension {
                context: "adam step",
                expected: n,
                got: grads.len(),
            });
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let g = grads.as_slice();
        let params = model.params_mut();
        for i in 0..n {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(model, grads, lr)
    }
}

/// Pure form: returns the updated parameters and state.
pub fn adam_step(model: &Mlp, grads: &Gradients, state: &AdamState) -> Result<(Mlp, AdamState)> {
    let mut m = model.clone();
    let mut s = state.clone();
    s.step(&mut m, grads)?;
    Ok((m, s))
}
