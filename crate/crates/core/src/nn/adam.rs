//! Bias-corrected Adam.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::nn::net::Gradients;
use crate::nn::params::ParamStore;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn moments(&self, name: &str) -> Option<(&[f32], &[f32])> {
        match (self.m.get(name), self.v.get(name)) {
            (Some(m), Some(v)) => Some((m.as_slice(), v.as_slice())),
            _ => None,
        }
    }
}

/// One Adam update over every parameter that has an accumulated gradient.
///
/// Parameters without a gradient entry are left untouched; the step counter
/// still advances. A non-finite gradient aborts with the parameter name.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for (name, g) in grads.iter() {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of '{name}'")));
        }
        let p = params.get(name)?;
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} elements", p.len()),
                got: format!("{}", g.len()),
                context: format!("adam update of '{name}'"),
            });
        }
    }

    state.step += 1;
    let t = state.step;
    let cfg = state.config;
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(t as i32);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(t as i32);

    for (name, g) in grads.iter() {
        let p = params.get_mut(name)?;
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] as f64 / bc1;
            let v_hat = v[i] as f64 / bc2;
            p.data[i] -= (cfg.lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
        }
    }
    Ok(())
}
