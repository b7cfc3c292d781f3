//! Hilbert-constrained gradient descent.
//!
//! Each outer step proposes `dtheta_0` with SGD-with-momentum (or Adam) and
//! then corrects it by gradient descent on
//! `lambda * sqrt(mean_i |f_theta(x_i) - f_{theta + dtheta}(x_i)|^2)`
//! over validation batches drawn from the training distribution:
//!
//! ```text
//! J          <- grad C0(train batch)          (+ weight decay * theta)
//! v          <- beta v + lr J;  dtheta_0 = -v
//! for j in 1..=n:
//!     g      <- grad_dtheta penalty(dtheta_{j-1})   (+ J when j > 1)
//!     dtheta_j = dtheta_{j-1} - inner_lr g
//!     v      <- v + inner_lr g
//! theta      <- theta + dtheta_n
//! ```
//!
//! With a fresh validation batch per correction a step costs `2 + 3n`
//! network passes: forward and backward on the training batch, then per
//! correction one forward at `theta` for the reference outputs, one forward
//! at `theta + dtheta` and one backward.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::source::BatchSource;
use super::{norm, StepReport};
use crate::error::{Error, Result};
use crate::nn::{Batch, FunctionDistancePenalty, GradientVector, Network};

/// Added under the square root so the penalty gradient exists at `dtheta = 0`.
pub const PENALTY_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proposal {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HcgdConfig {
    /// Overall learning rate (also the Adam rate for Adam proposals).
    pub lr: f64,
    /// Learning rate of the corrective steps.
    pub inner_lr: f64,
    pub lambda: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "one")]
    pub n_corrections: usize,
    #[serde(default = "default_val_batch")]
    pub val_batch_size: usize,
    #[serde(default = "yes")]
    pub fresh_val_per_correction: bool,
    #[serde(default = "default_proposal")]
    pub proposal: Proposal,
}

fn one() -> usize {
    1
}
fn default_val_batch() -> usize {
    256
}
fn yes() -> bool {
    true
}
fn default_proposal() -> Proposal {
    Proposal::Sgd
}

impl Default for HcgdConfig {
    fn default() -> Self {
        HcgdConfig {
            lr: 0.1,
            inner_lr: 0.02,
            lambda: 0.5,
            momentum: 0.9,
            weight_decay: 0.0,
            n_corrections: 1,
            val_batch_size: 256,
            fresh_val_per_correction: true,
            proposal: Proposal::Sgd,
        }
    }
}

impl HcgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.inner_lr >= 0.0
            && self.lambda >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.n_corrections >= 1
            && self.val_batch_size >= 1;
        if !ok {
            return Err(Error::config(format!("invalid HCGD config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HcgdState {
    pub velocity: Vec<f64>,
    pub adam: AdamState,
}

impl HcgdState {
    pub fn new(num_params: usize) -> Self {
        HcgdState {
            velocity: vec![0.0; num_params],
            adam: AdamState::new(num_params),
        }
    }
}

/// Value and gradient of `lambda * sqrt(mean_sq + eps)` between the outputs
/// of `net_at_proposal` on `val_batch` and the constant `ref_outputs`.
///
/// The gradient is taken through the proposal network only, so it is the
/// gradient with respect to `dtheta`.
pub fn l2_penalty_grad(
    net_at_proposal: &Network,
    ref_outputs: ArrayView2<'_, f64>,
    val_batch: &Batch,
    lambda: f64,
) -> Result<(f64, GradientVector)> {
    let penalty = FunctionDistancePenalty {
        reference: ref_outputs,
        scale: lambda,
        eps: PENALTY_EPS,
        squared: false,
    };
    net_at_proposal.custom_loss_grad(val_batch.inputs(), &penalty)
}

pub fn hcgd_step(
    net: &mut Network,
    train_batch: &Batch,
    val_source: &mut dyn BatchSource,
    cfg: &HcgdConfig,
    state: &mut HcgdState,
) -> Result<StepReport> {
    let before = net.passes().total();
    let (loss, mut grad) = net.loss_and_grad(train_batch)?;
    if cfg.weight_decay > 0.0 {
        grad.add_scaled(cfg.weight_decay, net.params());
    }

    let mut delta: Vec<f64> = match cfg.proposal {
        Proposal::Sgd => {
            for (v, g) in state.velocity.iter_mut().zip(grad.iter()) {
                *v = cfg.momentum * *v + cfg.lr * g;
            }
            state.velocity.iter().map(|v| -v).collect()
        }
        Proposal::Adam => {
            let adam = AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            };
            state.adam.direction(&grad, &adam)
        }
    };

    let theta = net.params().to_vec();
    let mut reference: Option<(Batch, Array2<f64>)> = None;
    let mut penalty = 0.0;
    for j in 1..=cfg.n_corrections {
        if cfg.fresh_val_per_correction || reference.is_none() {
            let val = val_source.next_batch()?;
            let outputs = net.forward(&val)?;
            reference = Some((val, outputs));
        }
        let (val, ref_out) = reference.as_ref().expect("drawn above");

        for ((p, t), d) in net.params_mut().iter_mut().zip(&theta).zip(&delta) {
            *p = t + d;
        }
        let evaluated = l2_penalty_grad(net, ref_out.view(), val, cfg.lambda);
        net.params_mut().copy_from_slice(&theta);
        let (value, mut correction) = evaluated?;
        penalty = value;

        if j > 1 {
            correction.add_scaled(1.0, &grad);
        }
        for (d, c) in delta.iter_mut().zip(correction.iter()) {
            *d -= cfg.inner_lr * c;
        }
        if cfg.proposal == Proposal::Sgd {
            for (v, c) in state.velocity.iter_mut().zip(correction.iter()) {
                *v += cfg.inner_lr * c;
            }
        }
    }

    for (p, d) in net.params_mut().iter_mut().zip(&delta) {
        *p += d;
    }
    Ok(StepReport {
        loss,
        penalty,
        passes: net.passes().total() - before,
        step_norm: norm(&delta),
    })
}
