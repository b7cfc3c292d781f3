use serde::{Deserialize, Serialize};

use super::{apply_delta, norm, StepReport};
use crate::error::{Error, Result};
use crate::nn::{Batch, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::config(format!("invalid Adam config {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            u: vec![0.0; num_params],
            t: 0,
        }
    }

    /// Updates the moments with `grad` and returns the bias-corrected step
    /// `-lr * m_hat / (sqrt(u_hat) + eps)`.
    pub fn direction(&mut self, grad: &[f64], cfg: &AdamConfig) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powf(self.t as f64);
        let c2 = 1.0 - cfg.beta2.powf(self.t as f64);
        self.m
            .iter_mut()
            .zip(self.u.iter_mut())
            .zip(grad)
            .map(|((m, u), &g)| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *u = cfg.beta2 * *u + (1.0 - cfg.beta2) * g * g;
                -cfg.lr * (*m / c1) / ((*u / c2).sqrt() + cfg.eps)
            })
            .collect()
    }
}

pub fn adam_step(net: &mut Network, batch: &Batch, cfg: &AdamConfig, state: &mut AdamState) -> Result<StepReport> {
    let before = net.passes().total();
    let (loss, grad) = net.loss_and_grad(batch)?;
    let delta = state.direction(&grad, cfg);
    apply_delta(net.params_mut(), &delta);
    Ok(StepReport {
        loss,
        penalty: 0.0,
        passes: net.passes().total() - before,
        step_norm: norm(&delta),
    })
}
