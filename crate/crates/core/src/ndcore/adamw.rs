use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub config: AdamWConfig,
}

impl AdamWState {
    pub fn new(len: usize, config: AdamWConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            config,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
pub fn adamw_step(param: &mut [f64], grad: &[f64], state: &mut AdamWState) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() || param.len() != state.v.len() {
        return Err(Error::contract(format!(
            "adamw shapes disagree: param {}, grad {}, state {}",
            param.len(),
            grad.len(),
            state.m.len()
        )));
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * param[i]);
    }
    Ok(())
}

/// AdamW over every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    states: BTreeMap<String, AdamWState>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    /// Parameters without an entry in `grads` receive a zero gradient, so
    /// weight decay and momentum still apply to them.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, array) in params.iter_mut() {
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamWState::new(array.len(), self.config));
            match grads.get(name) {
                Some(g) => adamw_step(array.data_mut(), g, state)?,
                None => {
                    let zeros = vec![0.0; array.len()];
                    adamw_step(array.data_mut(), &zeros, state)?
                }
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.values().map(|s| s.step).max().unwrap_or(0)
    }
}
