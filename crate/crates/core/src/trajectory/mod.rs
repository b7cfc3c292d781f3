//! Checkpoints along a training run, pairwise distance matrices between
//! them, and low-dimensional embeddings of those matrices.

mod fsnp;
mod mds;

use std::hash::{Hash, Hasher};
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{l2_distance, param_l2_distance};
use crate::nn::{softmax_rows, Batch, Network, OutputMode};

pub use fsnp::{read_snapshot, write_snapshot, SnapshotPayload, FSNP_MAGIC, FSNP_VERSION};
pub use mds::{classical_mds, symmetric_eigen, Embedding};

/// Network state at one checkpoint: parameters plus outputs on the probe batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub epoch: usize,
    pub params: Vec<f64>,
    pub probe_outputs: Array2<f64>,
    /// Hash of the probe inputs, when known. Function distances are only
    /// meaningful between snapshots taken on the same probe batch.
    pub probe_fingerprint: Option<u64>,
    pub wall_note: Option<String>,
}

impl Snapshot {
    pub fn new(step: usize, epoch: usize, params: Vec<f64>, probe_outputs: Array2<f64>) -> Self {
        Snapshot {
            step,
            epoch,
            params,
            probe_outputs,
            probe_fingerprint: None,
            wall_note: None,
        }
    }
}

/// Stable (within a build) hash of a batch of inputs.
pub fn probe_fingerprint(inputs: ArrayView2<'_, f64>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    inputs.dim().hash(&mut h);
    for v in inputs.iter() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Copies the parameters and records softmax outputs on `probe`.
pub fn record_snapshot(net: &Network, probe: &Batch, step: usize, epoch: usize) -> Result<Snapshot> {
    let out = net.forward(probe)?;
    let probe_outputs = match net.output_mode() {
        OutputMode::Softmax => out,
        OutputMode::Raw => softmax_rows(out.view()),
    };
    Ok(Snapshot {
        step,
        epoch,
        params: net.params().to_vec(),
        probe_outputs,
        probe_fingerprint: Some(probe_fingerprint(probe.inputs())),
        wall_note: None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SnapshotLabel {
    pub run: usize,
    pub epoch: usize,
    pub step: usize,
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub labels: Vec<SnapshotLabel>,
    pub values: Array2<f64>,
}

impl DistanceMatrix {
    pub fn from_values(labels: Vec<SnapshotLabel>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} labels for a {:?} distance matrix",
                labels.len(),
                values.dim()
            )));
        }
        Ok(DistanceMatrix { labels, values })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes `run,epoch,step,d_0,...,d_{M-1}` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["run".to_string(), "epoch".to_string(), "step".to_string()];
        header.extend((0..self.len()).map(|j| format!("d{j}")));
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(self.values.rows()) {
            let mut rec = vec![label.run.to_string(), label.epoch.to_string(), label.step.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parameter (l2) and function (L2) distance matrices across the snapshots
/// of one or more runs, in run-major order.
pub fn build_distance_matrices(runs: &[&[Snapshot]]) -> Result<(DistanceMatrix, DistanceMatrix)> {
    let all: Vec<(usize, &Snapshot)> = runs
        .iter()
        .enumerate()
        .flat_map(|(r, snaps)| snaps.iter().map(move |s| (r, s)))
        .collect();
    let Some(&(_, first)) = all.first() else {
        return Err(Error::shape("no snapshots to compare"));
    };
    for &(r, s) in &all {
        if s.params.len() != first.params.len() {
            return Err(Error::shape(format!(
                "run {r} step {} has {} parameters, expected {}",
                s.step,
                s.params.len(),
                first.params.len()
            )));
        }
        if s.probe_outputs.dim() != first.probe_outputs.dim() {
            return Err(Error::Validation(format!(
                "run {r} step {} recorded probe outputs of shape {:?}, expected {:?}; refusing cross-run function distances",
                s.step,
                s.probe_outputs.dim(),
                first.probe_outputs.dim()
            )));
        }
        if let (Some(a), Some(b)) = (s.probe_fingerprint, first.probe_fingerprint) {
            if a != b {
                return Err(Error::Validation(format!(
                    "run {r} step {} used a different probe batch; refusing cross-run function distances",
                    s.step
                )));
            }
        }
    }
    let m = all.len();
    let mut param = Array2::<f64>::zeros((m, m));
    let mut func = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in (i + 1)..m {
            let (a, b) = (all[i].1, all[j].1);
            let p = param_l2_distance(&a.params, &b.params)?;
            let f = l2_distance(a.probe_outputs.view(), b.probe_outputs.view())?.distance;
            param[[i, j]] = p;
            param[[j, i]] = p;
            func[[i, j]] = f;
            func[[j, i]] = f;
        }
    }
    let labels: Vec<SnapshotLabel> = all
        .iter()
        .map(|&(run, s)| SnapshotLabel {
            run,
            epoch: s.epoch,
            step: s.step,
        })
        .collect();
    Ok((
        DistanceMatrix {
            labels: labels.clone(),
            values: param,
        },
        DistanceMatrix { labels, values: func },
    ))
}
