use ndarray::Array2;

use super::config::{OptimizerSpec, TrainingSpec};
use super::runlog::{EpochRecord, StepRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{l2_distance, param_l2_distance, PathLength};
use crate::nn::{softmax_rows, Batch, Network, OutputMode};
use crate::optim::{
    adam_step, hcgd_step, ngd_by_gd_step, sgd_step, AdamConfig, AdamState, BatchSource, HcgdConfig, HcgdState, NgdConfig,
    NgdState, SgdConfig, SgdState, ShuffledSource, StepReport,
};
use crate::rng::{self, Rng, Stream};
use crate::trajectory::{record_snapshot, Snapshot};

enum Stepper<'a> {
    Sgd(SgdConfig, SgdState),
    Hcgd(HcgdConfig, HcgdState, ShuffledSource<'a>),
    Adam(AdamConfig, AdamState),
    Ngd(NgdConfig, NgdState, Rng),
}

impl<'a> Stepper<'a> {
    fn new(spec: &OptimizerSpec, net: &Network, train: &'a Dataset, seed: u64) -> Result<Self> {
        let p = net.num_params();
        Ok(match *spec {
            OptimizerSpec::Sgd(c) => Stepper::Sgd(c, SgdState::new(p)),
            OptimizerSpec::Adam(c) => Stepper::Adam(c, AdamState::new(p)),
            OptimizerSpec::Hcgd(c) => {
                // validation batches come from the training set on their own stream
                let src = ShuffledSource::new(
                    train.inputs.view(),
                    &train.labels,
                    c.val_batch_size,
                    rng::stream(seed, Stream::Validation),
                )?;
                Stepper::Hcgd(c, HcgdState::new(p), src)
            }
            OptimizerSpec::Ngd(c) => Stepper::Ngd(c, NgdState::new(p), rng::stream(seed, Stream::FisherSampling)),
        })
    }

    fn step(&mut self, net: &mut Network, batch: &Batch) -> Result<StepReport> {
        match self {
            Stepper::Sgd(c, s) => sgd_step(net, batch, c, s),
            Stepper::Adam(c, s) => adam_step(net, batch, c, s),
            Stepper::Hcgd(c, s, src) => hcgd_step(net, batch, src as &mut dyn BatchSource, c, s),
            Stepper::Ngd(c, s, r) => ngd_by_gd_step(net, batch, c, s, Some(r)),
        }
    }
}

/// Outputs on the probe batch as probabilities.
pub fn probe_outputs(net: &Network, probe: &Batch) -> Result<Array2<f64>> {
    let out = net.forward(probe)?;
    Ok(match net.output_mode() {
        OutputMode::Softmax => out,
        OutputMode::Raw => softmax_rows(out.view()),
    })
}

pub struct TrainOutcome {
    pub net: Network,
    /// Initialization, every `snapshot_every` steps, and every epoch end.
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Trains `net` for `spec.epochs` epochs of `len / batch_size` steps each.
#[allow(clippy::too_many_arguments)]
pub fn train_network(
    mut net: Network,
    optimizer: &OptimizerSpec,
    train: &Dataset,
    test: &Dataset,
    probe: &Batch,
    spec: &TrainingSpec,
    seed: u64,
    run: &str,
) -> Result<TrainOutcome> {
    if spec.batch_size == 0 || spec.batch_size > train.len() {
        return Err(Error::config(format!(
            "batch size {} invalid for {} training examples",
            spec.batch_size,
            train.len()
        )));
    }
    let mut stepper = Stepper::new(optimizer, &net, train, seed)?;
    let mut source = ShuffledSource::new(train.inputs.view(), &train.labels, spec.batch_size, rng::stream(seed, Stream::DataOrder))?;
    let test_batch = test.batch();
    let steps_per_epoch = train.len() / spec.batch_size;

    let init = record_snapshot(&net, probe, 0, 0)?;
    let mut path = PathLength::default();
    if spec.track_path {
        path.push(init.probe_outputs.view())?;
    }
    let mut snapshots = vec![init];
    let mut steps = Vec::with_capacity(spec.epochs * steps_per_epoch);
    let mut epochs = Vec::with_capacity(spec.epochs);
    let mut step = 0;

    for epoch in 1..=spec.epochs {
        let mut loss_sum = 0.0;
        for i in 0..steps_per_epoch {
            step += 1;
            let batch = source.next_batch()?;
            let report = stepper.step(&mut net, &batch)?;
            if !report.loss.is_finite() || !net.params().iter().all(|p| p.is_finite()) {
                return Err(Error::Divergence {
                    iterations: step,
                    norm: report.step_norm,
                });
            }
            loss_sum += report.loss;
            let path_length = if spec.track_path {
                path.push(probe_outputs(&net, probe)?.view())?
            } else {
                None
            };
            steps.push(StepRecord {
                run: run.to_string(),
                epoch,
                step,
                loss: report.loss,
                penalty: report.penalty,
                passes: Some(report.passes),
                step_norm: Some(report.step_norm),
                path_length,
            });
            let last_of_epoch = i + 1 == steps_per_epoch;
            if last_of_epoch || (spec.snapshot_every > 0 && step % spec.snapshot_every == 0) {
                snapshots.push(record_snapshot(&net, probe, step, epoch)?);
            }
        }
        let end = snapshots.last().expect("pushed at epoch end");
        epochs.push(EpochRecord {
            run: run.to_string(),
            epoch,
            train_loss: loss_sum / steps_per_epoch.max(1) as f64,
            test_accuracy: net.accuracy(&test_batch)?,
            path_length: spec.track_path.then(|| path.total()),
            l2_from_init: l2_distance(end.probe_outputs.view(), snapshots[0].probe_outputs.view())?.distance,
            param_from_init: param_l2_distance(&end.params, &snapshots[0].params)?,
        });
    }
    Ok(TrainOutcome {
        net,
        snapshots,
        steps,
        epochs,
    })
}
