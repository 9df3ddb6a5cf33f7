use alloc::vec::Vec;

use super::{Gradients, ParamStore};
use crate::error::bail;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of a flat parameter slice; `t` is the
/// 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let bc1 = 1.0 - libm::pow(beta1, t as f64);
    let bc2 = 1.0 - libm::pow(beta2, t as f64);
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
}

/// Adam optimizer state for every tensor of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| alloc::vec![0.0; t.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            bail!(Shape, "optimizer state covers {} tensors, store has {}", self.m.len(), store.len());
        }
        self.step += 1;
        let c = self.config;
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            if p.len() != g.len() {
                bail!(Shape, "gradient for {} has {} values, expected {}", id.0, g.len(), p.len());
            }
            adam_step(p.data_mut(), g.data(), &mut self.m[id.0], &mut self.v[id.0], c.lr, c.beta1, c.beta2, c.eps, self.step);
        }
        Ok(())
    }
}
