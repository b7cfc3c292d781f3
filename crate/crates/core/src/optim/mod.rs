//! Optimizers: SGD with momentum and weight decay, Adam, Hilbert-constrained
//! gradient descent (HCGD), and a natural-gradient corrector that reaches
//! `-(1/lambda) F^-1 J` by an inner loop of gradient descent.

mod adam;
mod fisher;
mod hcgd;
mod ngd;
mod sgd;
mod source;

use serde::Serialize;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fisher::{FisherOperator, FisherProduct};
pub use hcgd::{hcgd_step, l2_penalty_grad, HcgdConfig, HcgdState, Proposal, PENALTY_EPS};
pub use ngd::{ngd_by_gd_step, ngd_correct, NgdConfig, NgdState, Proposer, RmspropConfig};
pub use sgd::{sgd_step, SgdConfig, SgdState};
pub use source::{BatchSource, FixedSource, ShuffledSource};

/// What one optimizer step did.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepReport {
    /// Training loss at the parameters before the step.
    pub loss: f64,
    /// Functional penalty at the final correction (0 for plain optimizers).
    pub penalty: f64,
    /// Forward plus backward passes spent on this step.
    pub passes: u64,
    /// Euclidean norm of the applied parameter change.
    pub step_norm: f64,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn apply_delta(params: &mut [f64], delta: &[f64]) {
    for (p, d) in params.iter_mut().zip(delta) {
        *p += d;
    }
}
