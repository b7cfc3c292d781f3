use serde::{Deserialize, Serialize};

use super::{norm, StepReport};
use crate::error::{Error, Result};
use crate::nn::{Batch, Network};

/// SGD hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("invalid SGD config {self:?}")));
        }
        Ok(())
    }
}

/// Velocity buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(num_params: usize) -> Self {
        SgdState {
            velocity: vec![0.0; num_params],
        }
    }

    /// `v <- beta v + lr (grad + wd theta)`, `theta <- theta - v`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], cfg: &SgdConfig) {
        for ((v, p), g) in self.velocity.iter_mut().zip(params.iter_mut()).zip(grad) {
            *v = cfg.momentum * *v + cfg.lr * (g + cfg.weight_decay * *p);
            *p -= *v;
        }
    }
}

pub fn sgd_step(net: &mut Network, batch: &Batch, cfg: &SgdConfig, state: &mut SgdState) -> Result<StepReport> {
    let before = net.passes().total();
    let (loss, grad) = net.loss_and_grad(batch)?;
    state.apply(net.params_mut(), &grad, cfg);
    Ok(StepReport {
        loss,
        penalty: 0.0,
        passes: net.passes().total() - before,
        step_norm: norm(&state.velocity),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, OutputMode};
    use crate::rng::{self, Stream};
    use ndarray::Array2;
    use rand::Rng as _;

    fn setup() -> (Network, Batch) {
        let net = Network::init(&[3, 5, 3], &[Activation::Relu, Activation::Identity], OutputMode::Softmax, 1).unwrap();
        let mut r = rng::stream(1, Stream::Synth);
        let x = Array2::from_shape_fn((8, 3), |_| r.random::<f64>());
        (net, Batch::new(x, (0..8).map(|i| i % 3).collect()).unwrap())
    }

    #[test]
    fn zero_lr_leaves_params() {
        let (mut net, batch) = setup();
        let before = net.params().to_vec();
        let cfg = SgdConfig { lr: 0.0, momentum: 0.9, weight_decay: 1e-4 };
        let mut st = SgdState::new(net.num_params());
        for _ in 0..3 {
            sgd_step(&mut net, &batch, &cfg, &mut st).unwrap();
        }
        assert_eq!(net.params(), before.as_slice());
    }

    #[test]
    fn plain_step_is_theta_minus_lr_grad() {
        let (mut net, batch) = setup();
        let before = net.params().to_vec();
        let (_, g) = net.loss_and_grad(&batch).unwrap();
        let cfg = SgdConfig { lr: 0.3, momentum: 0.0, weight_decay: 0.0 };
        let report = sgd_step(&mut net, &batch, &cfg, &mut SgdState::new(before.len())).unwrap();
        for ((p, b), gi) in net.params().iter().zip(&before).zip(g.iter()) {
            assert_eq!(*p, b - 0.3 * gi);
        }
        assert_eq!(report.passes, 2);
    }

    #[test]
    fn quadratic_matches_reference_loop() {
        // loss = 1/2 theta^T A theta - b^T theta with A diagonal
        let a = [1.0, 2.5, 0.3, 4.0];
        let b = [0.5, -1.0, 2.0, 0.1];
        let cfg = SgdConfig { lr: 0.05, momentum: 0.9, weight_decay: 1e-3 };
        let mut theta = vec![1.0, -2.0, 0.5, 3.0];
        let mut st = SgdState::new(4);

        let mut ref_theta = theta.clone();
        let mut ref_v = [0.0; 4];
        for _ in 0..100 {
            let grad: Vec<f64> = (0..4).map(|i| a[i] * theta[i] - b[i]).collect();
            st.apply(&mut theta, &grad, &cfg);
            for i in 0..4 {
                let g = a[i] * ref_theta[i] - b[i] + 1e-3 * ref_theta[i];
                ref_v[i] = 0.9 * ref_v[i] + 0.05 * g;
                ref_theta[i] -= ref_v[i];
            }
        }
        for (x, y) in theta.iter().zip(&ref_theta) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SgdConfig { lr: 0.1, momentum: 1.0, weight_decay: 0.0 }.validate().is_err());
        assert!(SgdConfig { lr: -0.1, momentum: 0.0, weight_decay: 0.0 }.validate().is_err());
        assert!(SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 1e-4 }.validate().is_ok());
    }
}
