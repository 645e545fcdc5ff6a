use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam hyperparameters.
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
            lr: 9e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `param` in place. `t` is the 1-based
/// step count.
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig, t: u64) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(Error::shape(format!(
            "adam_step: param {}, grad {}, state {}/{}",
            param.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(Error::Autodiff("adam step count starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        param[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam optimiser over a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            states: sizes.iter().map(|&n| AdamState::new(n)).collect(),
        }
    }

    /// Updates every buffer; a `None` gradient counts as zero.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::shape(format!(
                "Adam tracks {} buffers, got {} params and {} grads",
                self.states.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            match g {
                Some(g) => adam_step(p, g, s, &self.config, self.t)?,
                None => {
                    let zero = vec![0.0; p.len()];
                    adam_step(p, &zero, s, &self.config, self.t)?;
                }
            }
        }
        Ok(())
    }
}
