use crate::error::{Error, Result};
use crate::nn::{Batch, FisherMode, GradientVector, Network};

/// Anchor of one finished task: `(lambda/2) sum_i F_i (theta_i - theta_A_i)^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct EwcState {
    pub theta_a: Vec<f64>,
    pub fisher_diag: Vec<f64>,
    pub lambda: f64,
}

impl EwcState {
    pub fn new(theta_a: Vec<f64>, fisher_diag: Vec<f64>, lambda: f64) -> Result<Self> {
        if theta_a.len() != fisher_diag.len() {
            return Err(Error::shape(format!(
                "{} anchor parameters but {} Fisher entries",
                theta_a.len(),
                fisher_diag.len()
            )));
        }
        if fisher_diag.iter().any(|&f| !(f >= 0.0)) {
            return Err(Error::Validation("Fisher diagonal must be nonnegative".into()));
        }
        Ok(EwcState {
            theta_a,
            fisher_diag,
            lambda,
        })
    }
}

/// Diagonal of the empirical Fisher on `data`: the coordinate-wise mean of
/// squared per-example cross-entropy gradients.
pub fn ewc_diag_fisher(net: &Network, data: &Batch) -> Result<Vec<f64>> {
    net.mean_squared_example_grads(data, FisherMode::Empirical, None)
}

/// Sum of the anchoring penalties and their gradient `lambda F (theta - theta_A)`.
pub fn ewc_loss(params: &[f64], states: &[EwcState]) -> Result<(f64, GradientVector)> {
    let mut grad = GradientVector::zeros(params.len());
    let mut loss = 0.0;
    for s in states {
        if s.theta_a.len() != params.len() {
            return Err(Error::shape(format!(
                "EWC anchor of length {} for {} parameters",
                s.theta_a.len(),
                params.len()
            )));
        }
        for (((g, &p), &a), &f) in grad.as_mut_slice().iter_mut().zip(params).zip(&s.theta_a).zip(&s.fisher_diag) {
            let d = p - a;
            loss += 0.5 * s.lambda * f * d * d;
            *g += s.lambda * f * d;
        }
    }
    Ok((loss, grad))
}
