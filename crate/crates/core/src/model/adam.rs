use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(num_params: usize, cfg: &AdamConfig) -> Result<Self> {
        let ok_beta = |b: f64| (0.0..1.0).contains(&b);
        if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) || !ok_beta(cfg.beta1) || !ok_beta(cfg.beta2) || !(cfg.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid Adam settings {cfg:?}")));
        }
        Ok(Self {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        })
    }
}

/// One bias-corrected Adam update of `theta` in place.
pub fn adam_step(state: &mut OptimizerState, theta: &mut [f64], grads: &[f64]) -> Result<()> {
    if theta.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "Adam state of {} for {} parameters and {} gradients",
            state.m.len(),
            theta.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    for (((p, g), m), v) in theta.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}
