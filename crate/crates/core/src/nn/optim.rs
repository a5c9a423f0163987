use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, TensorId};
use serde::{Deserialize, Serialize};

use super::params::Param;
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

/// `lr₀·½(1 + cos(π·t/T))`, reaching zero at `t = T`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = step.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

impl Schedule {
    pub fn lr(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Cosine => cosine_lr(base, step, total),
            Schedule::Constant => base,
        }
    }
}

/// Rescales the gradients of `params` so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &[Param], grads: &mut GradStore, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    for p in params {
        if let Some(g) = grads.get(p.var().as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / (norm + 1e-12);
        for p in params {
            if let Some(g) = grads.remove(p.var().as_tensor()) {
                grads.insert(p.var().as_tensor(), (g * k)?);
            }
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moments are keyed by parameter identity, so
/// parameters of several stores can share one optimizer.
pub struct Adam {
    cfg: AdamConfig,
    moments: HashMap<TensorId, (Tensor, Tensor)>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            moments: HashMap::new(),
            step: 0,
        }
    }

    /// Updates every trainable parameter in `params` that has a gradient.
    pub fn step(&mut self, params: &[Param], grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for p in params.iter().filter(|p| p.is_trainable()) {
            let Some(g) = grads.get(p.var().as_tensor()) else {
                continue;
            };
            let id = p.var().as_tensor().id();
            let (m, v) = match self.moments.remove(&id) {
                Some(mv) => mv,
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let m = ((m * beta1)? + (g * (1.0 - beta1))?)?;
            let v = ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + eps)?)?;
            let next = (p.var().as_tensor() - (update * lr)?)?;
            p.var().set(&next)?;
            self.moments.insert(id, (m, v));
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}
