use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::model::ViTFc;
use crate::tensor::Tensor;

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

/// Moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `param` at step `t` (1-based).
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamMoments, cfg: &AdamConfig, t: u64) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() {
        return dim_err(format!(
            "parameter of {} values, gradient of {}, moments of {}",
            param.len(),
            grad.len(),
            state.m.len()
        ));
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every tensor of a model. Frozen tensors are skipped whatever
/// gradient is offered for them.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    state: Vec<AdamMoments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, model: &ViTFc) -> Self {
        Self {
            cfg,
            t: 0,
            state: model.params().iter().map(|p| AdamMoments::new(p.value.len())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `grads[i]` belongs to the i-th model tensor.
    pub fn step(&mut self, model: &mut ViTFc, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != self.state.len() {
            return dim_err(format!("{} gradients for {} tensors", grads.len(), self.state.len()));
        }
        self.t += 1;
        for ((p, g), s) in model.params_mut().iter_mut().zip(grads).zip(&mut self.state) {
            if p.frozen {
                continue;
            }
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return dim_err(format!("gradient {:?} for {} {:?}", g.shape(), p.name, p.value.shape()));
                }
                adam_step(p.value.data_mut(), g.data(), s, &self.cfg, self.t)?;
            }
        }
        Ok(())
    }
}
