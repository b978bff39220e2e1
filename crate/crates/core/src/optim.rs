//! Adam with bias correction.
//!
//! For step `t` (starting at 1), gradient `g` and parameter `p`, in `f32`:
//!
//! ```text
//! m = beta1 * m + (1 - beta1) * g
//! v = beta2 * v + (1 - beta2) * g * g
//! m_hat = m / (1 - beta1^t)
//! v_hat = v / (1 - beta2^t)
//! p = p - lr * m_hat / (sqrt(v_hat) + eps)
//! ```

use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("bad optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments for one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// Applies one Adam update to `params` in place. `step` is the 1-based step
/// number used for bias correction.
pub fn optimizer_update(
    params: &mut [f32],
    grads: &[f32],
    state: &mut Moments,
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if step == 0 {
        return Err(Error::StateError("Adam steps are numbered from 1".into()));
    }
    let t = step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam state for every parameter buffer of one network.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    weights: Vec<Moments>,
    biases: Vec<Moments>,
}

impl Adam {
    pub fn new(net: &Network, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            step: 0,
            weights: net.params().iter().map(|p| Moments::zeros(p.conv.weight.len())).collect(),
            biases: net.params().iter().map(|p| Moments::zeros(p.conv.bias.len())).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Updates every parameter of `net` from its gradient store.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        if net.params().len() != self.weights.len() {
            return Err(Error::ShapeMismatch("optimizer built for a different network".into()));
        }
        self.step += 1;
        let (params, grads) = net.params_and_grads_mut();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            optimizer_update(p.conv.weight.data_mut(), g.weight.data(), &mut self.weights[i], self.step, &self.cfg)?;
            optimizer_update(&mut p.conv.bias, &g.bias, &mut self.biases[i], self.step, &self.cfg)?;
        }
        Ok(())
    }
}
