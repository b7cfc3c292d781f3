//! Natural gradient by gradient descent.
//!
//! A base optimizer proposes `dtheta_0`; `n` corrective iterations
//! `dtheta <- dtheta - eta (J + lambda F dtheta)` then move it towards the
//! minimizer of `J^T dtheta + lambda/2 dtheta^T F dtheta`, which is
//! `-(1/lambda) F^-1 J`. Each iteration costs one Fisher-vector product.

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::fisher::{FisherOperator, FisherProduct};
use super::{apply_delta, norm, StepReport};
use crate::error::{Error, Result};
use crate::nn::{Batch, FisherMode, Network};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmspropConfig {
    pub lr: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_decay() -> f64 {
    0.9
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Proposer {
    Rmsprop(RmspropConfig),
    Adam(AdamConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgdConfig {
    /// Corrective learning rate.
    pub eta: f64,
    pub lambda: f64,
    pub n_corrections: usize,
    pub proposer: Proposer,
    #[serde(default = "default_fisher")]
    pub fisher_mode: FisherMode,
}

fn default_fisher() -> FisherMode {
    FisherMode::Empirical
}

impl NgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !(self.lambda > 0.0) {
            return Err(Error::config(format!("invalid natural-gradient config {self:?}")));
        }
        match self.proposer {
            Proposer::Adam(a) => a.validate(),
            Proposer::Rmsprop(r) if r.lr >= 0.0 && (0.0..1.0).contains(&r.decay) && r.eps > 0.0 => Ok(()),
            Proposer::Rmsprop(r) => Err(Error::config(format!("invalid RMSprop config {r:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgdState {
    pub sq_avg: Vec<f64>,
    pub adam: AdamState,
}

impl NgdState {
    pub fn new(num_params: usize) -> Self {
        NgdState {
            sq_avg: vec![0.0; num_params],
            adam: AdamState::new(num_params),
        }
    }

    fn propose(&mut self, grad: &[f64], proposer: &Proposer) -> Vec<f64> {
        match proposer {
            Proposer::Adam(cfg) => self.adam.direction(grad, cfg),
            Proposer::Rmsprop(cfg) => self
                .sq_avg
                .iter_mut()
                .zip(grad)
                .map(|(s, &g)| {
                    *s = cfg.decay * *s + (1.0 - cfg.decay) * g * g;
                    -cfg.lr * g / (s.sqrt() + cfg.eps)
                })
                .collect(),
        }
    }
}

/// Growth of the residual `J + lambda F dtheta` beyond this factor is
/// reported as divergence.
const DIVERGENCE_FACTOR: f64 = 1e3;

/// Runs `n` corrective iterations from `dtheta0`.
///
/// Fails with [`Error::Divergence`] once the residual grows by more than
/// three orders of magnitude or stops being finite, which happens when
/// `eta > 2 / (lambda * max eig F)`.
pub fn ngd_correct(
    fisher: &dyn FisherProduct,
    grad: &[f64],
    dtheta0: &[f64],
    eta: f64,
    lambda: f64,
    n: usize,
) -> Result<Vec<f64>> {
    if grad.len() != fisher.dim() || dtheta0.len() != fisher.dim() {
        return Err(Error::shape(format!(
            "gradient ({}) and proposal ({}) must match the {}-parameter Fisher operator",
            grad.len(),
            dtheta0.len(),
            fisher.dim()
        )));
    }
    let mut delta = dtheta0.to_vec();
    let mut start_residual = None;
    for i in 0..n {
        let fd = fisher.apply(&delta)?;
        let residual: Vec<f64> = grad.iter().zip(&fd).map(|(g, f)| g + lambda * f).collect();
        let r = norm(&residual);
        let r0 = *start_residual.get_or_insert(r);
        if !r.is_finite() || r > DIVERGENCE_FACTOR * r0.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence {
                iterations: i,
                norm: norm(&delta),
            });
        }
        for (d, res) in delta.iter_mut().zip(&residual) {
            *d -= eta * res;
        }
    }
    Ok(delta)
}

pub fn ngd_by_gd_step(
    net: &mut Network,
    batch: &Batch,
    cfg: &NgdConfig,
    state: &mut NgdState,
    rng: Option<&mut Rng>,
) -> Result<StepReport> {
    let before = net.passes().total();
    let (loss, grad) = net.loss_and_grad(batch)?;
    let proposal = state.propose(&grad, &cfg.proposer);
    let delta = if cfg.n_corrections == 0 {
        proposal
    } else {
        let fisher = FisherOperator::from_network(net, batch, cfg.fisher_mode, rng)?;
        ngd_correct(&fisher, &grad, &proposal, cfg.eta, cfg.lambda, cfg.n_corrections)?
    };
    apply_delta(net.params_mut(), &delta);
    Ok(StepReport {
        loss,
        penalty: 0.0,
        passes: net.passes().total() - before,
        step_norm: norm(&delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, OutputMode};
    use crate::rng::{self, Stream};
    use crate::trajectory::symmetric_eigen;
    use ndarray::Array2;
    use rand::Rng as _;

    /// Solves `a x = b` by Gaussian elimination with partial pivoting.
    fn dense_solve(a: &Array2<f64>, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m = a.clone();
        let mut rhs = b.to_vec();
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
            for k in 0..n {
                m.swap([c, k], [piv, k]);
            }
            rhs.swap(c, piv);
            for r in (c + 1)..n {
                let f = m[[r, c]] / m[[c, c]];
                for k in c..n {
                    m[[r, k]] -= f * m[[c, k]];
                }
                rhs[r] -= f * rhs[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = ((r + 1)..n).map(|k| m[[r, k]] * x[k]).sum();
            x[r] = (rhs[r] - s) / m[[r, r]];
        }
        x
    }

    fn tiny_problem() -> (FisherOperator, Vec<f64>) {
        let mut r = rng::stream(11, Stream::Synth);
        let g = Array2::from_shape_fn((5, 9), |_| r.random::<f64>() * 2.0 - 1.0);
        let f = FisherOperator::from_columns(g.view(), FisherMode::Empirical).unwrap();
        let j: Vec<f64> = g.mean_axis(ndarray::Axis(1)).unwrap().to_vec();
        (f, j)
    }

    #[test]
    fn converges_to_dense_natural_gradient() {
        let (f, j) = tiny_problem();
        let lambda = 2.0;
        let dense = f.to_dense();
        let solved = dense_solve(&(dense.clone() * lambda), &j);
        let target: Vec<f64> = solved.iter().map(|x| -x).collect();
        let (eig, _) = symmetric_eigen(&dense);
        let eta = 1.0 / (lambda * eig[0]);
        let out = ngd_correct(&f, &j, &[0.0; 5], eta, lambda, 20_000).unwrap();
        for (a, b) in out.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let fd = f.apply(&out).unwrap();
        let residual: f64 = j.iter().zip(&fd).map(|(g, x)| (g + lambda * x).powi(2)).sum::<f64>().sqrt();
        assert!(residual < 1e-8);
    }

    #[test]
    fn step_size_above_spectral_bound_diverges() {
        let (f, j) = tiny_problem();
        let lambda = 1.0;
        let (eig, _) = symmetric_eigen(&f.to_dense());
        let eta = 2.2 / (lambda * eig[0]);
        let err = ngd_correct(&f, &j, &[0.0; 5], eta, lambda, 500).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert!(ngd_correct(&f, &j, &[0.0; 5], 1.9 / (lambda * eig[0]), lambda, 500).is_ok());
    }

    #[test]
    fn zero_corrections_is_the_proposer() {
        let mut r = rng::stream(2, Stream::Synth);
        let x = Array2::from_shape_fn((12, 3), |_| r.random::<f64>());
        let batch = Batch::new(x, (0..12).map(|i| i % 2).collect()).unwrap();
        let mut net = Network::init(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], OutputMode::Softmax, 5).unwrap();
        let before = net.params().to_vec();
        let (_, g) = net.loss_and_grad(&batch).unwrap();
        let adam = AdamConfig::default();
        let expected = AdamState::new(before.len()).direction(&g, &adam);
        let cfg = NgdConfig {
            eta: 0.1,
            lambda: 1.0,
            n_corrections: 0,
            proposer: Proposer::Adam(adam),
            fisher_mode: FisherMode::Empirical,
        };
        ngd_by_gd_step(&mut net, &batch, &cfg, &mut NgdState::new(before.len()), None).unwrap();
        for ((p, b), e) in net.params().iter().zip(&before).zip(&expected) {
            assert_eq!(*p, b + e);
        }
    }

    #[test]
    fn corrected_steps_train_a_small_net() {
        let mut r = rng::stream(3, Stream::Synth);
        let x = Array2::from_shape_fn((40, 2), |_| r.random::<f64>() * 2.0 - 1.0);
        let y: Vec<usize> = x.rows().into_iter().map(|row| usize::from(row[0] + row[1] > 0.0)).collect();
        let batch = Batch::new(x, y).unwrap();
        let mut net = Network::init(&[2, 6, 2], &[Activation::Tanh, Activation::Identity], OutputMode::Softmax, 1).unwrap();
        let cfg = NgdConfig {
            eta: 0.05,
            lambda: 1.0,
            n_corrections: 5,
            proposer: Proposer::Rmsprop(RmspropConfig { lr: 0.01, decay: 0.9, eps: 1e-8 }),
            fisher_mode: FisherMode::Sampled,
        };
        let mut st = NgdState::new(net.num_params());
        let mut fr = rng::stream(3, Stream::FisherSampling);
        let first = net.loss(&batch).unwrap();
        for _ in 0..100 {
            ngd_by_gd_step(&mut net, &batch, &cfg, &mut st, Some(&mut fr)).unwrap();
        }
        assert!(net.params().iter().all(|p| p.is_finite()));
        assert!(net.loss(&batch).unwrap() < first);
    }
}
