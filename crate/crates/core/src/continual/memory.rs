use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Batch, FunctionDistancePenalty, GradientVector, Network};
use crate::optim::PENALTY_EPS;
use crate::rng::Rng;
use crate::trajectory::{read_snapshot, write_snapshot};

/// A balanced cache of examples from finished tasks together with the
/// outputs the network produced on them when their task ended.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkingMemory {
    capacity: usize,
    inputs: Array2<f64>,
    labels: Vec<usize>,
    recorded_outputs: Array2<f64>,
    task_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    capacity: usize,
    input_dim: usize,
    task_ids: Vec<usize>,
    labels: Vec<usize>,
}

impl WorkingMemory {
    pub fn new(capacity: usize, input_dim: usize, outputs: usize) -> Self {
        WorkingMemory {
            capacity,
            inputs: Array2::zeros((0, input_dim)),
            labels: Vec::new(),
            recorded_outputs: Array2::zeros((0, outputs)),
            task_ids: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn recorded_outputs(&self) -> &Array2<f64> {
        &self.recorded_outputs
    }

    pub fn task_ids(&self) -> &[usize] {
        &self.task_ids
    }

    /// Number of cached examples per task id.
    pub fn counts(&self) -> BTreeMap<usize, usize> {
        let mut c = BTreeMap::new();
        for &t in &self.task_ids {
            *c.entry(t).or_insert(0) += 1;
        }
        c
    }

    /// The cache as a labeled batch.
    pub fn batch(&self) -> Batch {
        Batch::new(self.inputs.clone(), self.labels.clone()).expect("kept in sync")
    }

    /// Adds examples from the task that just finished, recording `net`'s
    /// outputs on them, after evicting uniformly at random from older tasks
    /// until every task holds `capacity / tasks` examples (the first
    /// `capacity % tasks` tasks in id order hold one more).
    pub fn update(&mut self, task: &Dataset, net: &Network, task_id: usize, rng: &mut Rng) -> Result<()> {
        if task.dim() != self.inputs.ncols() || net.output_dim() != self.recorded_outputs.ncols() {
            return Err(Error::shape("task or network does not match the memory layout"));
        }
        let mut counts = self.counts();
        if counts.contains_key(&task_id) {
            return Err(Error::Validation(format!("task {task_id} is already in memory")));
        }
        counts.insert(task_id, 0);
        let tasks = counts.len();
        if self.capacity < tasks {
            return Err(Error::config(format!(
                "memory capacity {} cannot hold one example from each of {tasks} tasks",
                self.capacity
            )));
        }
        let quota: BTreeMap<usize, usize> = counts
            .keys()
            .enumerate()
            .map(|(rank, &t)| (t, self.capacity / tasks + usize::from(rank < self.capacity % tasks)))
            .collect();

        let mut keep = Vec::with_capacity(self.capacity);
        for (&t, &q) in &quota {
            if t == task_id {
                continue;
            }
            let rows: Vec<usize> = (0..self.len()).filter(|&i| self.task_ids[i] == t).collect();
            if rows.len() <= q {
                keep.extend(rows);
            } else {
                let mut chosen: Vec<usize> = rand::seq::index::sample(rng, rows.len(), q).into_iter().map(|i| rows[i]).collect();
                chosen.sort_unstable();
                keep.extend(chosen);
            }
        }
        keep.sort_unstable();

        let fresh_n = quota[&task_id].min(task.len());
        let mut fresh: Vec<usize> = rand::seq::index::sample(rng, task.len(), fresh_n).into_vec();
        fresh.sort_unstable();
        let new_inputs = task.inputs.select(Axis(0), &fresh);
        let new_outputs = net.forward_inputs(new_inputs.view())?;

        self.inputs = ndarray::concatenate![Axis(0), self.inputs.select(Axis(0), &keep), new_inputs];
        self.recorded_outputs = ndarray::concatenate![Axis(0), self.recorded_outputs.select(Axis(0), &keep), new_outputs];
        self.labels = keep.iter().map(|&i| self.labels[i]).chain(fresh.iter().map(|&i| task.labels[i])).collect();
        self.task_ids = keep.iter().map(|&i| self.task_ids[i]).chain(std::iter::repeat_n(task_id, fresh_n)).collect();
        Ok(())
    }

    /// Saves the cache as an FSNP container (inputs in the parameter block,
    /// recorded outputs in the output block) plus a JSON sidecar with task
    /// ids and labels.
    pub fn save<W: Write, S: Write>(&self, container: W, sidecar: S) -> Result<()> {
        let flat: Vec<f64> = self.inputs.iter().copied().collect();
        write_snapshot(container, &flat, &self.recorded_outputs)?;
        let meta = Sidecar {
            capacity: self.capacity,
            input_dim: self.inputs.ncols(),
            task_ids: self.task_ids.clone(),
            labels: self.labels.clone(),
        };
        serde_json::to_writer_pretty(sidecar, &meta)?;
        Ok(())
    }

    pub fn load<R: Read, S: Read>(container: R, sidecar: S) -> Result<Self> {
        let payload = read_snapshot(container)?;
        let meta: Sidecar = serde_json::from_reader(sidecar)?;
        let n = meta.task_ids.len();
        if meta.labels.len() != n || payload.probe_outputs.nrows() != n || payload.params.len() != n * meta.input_dim {
            return Err(Error::Validation("memory container and sidecar disagree".into()));
        }
        let inputs = Array2::from_shape_vec((n, meta.input_dim), payload.params).expect("length checked");
        Ok(WorkingMemory {
            capacity: meta.capacity,
            inputs,
            labels: meta.labels,
            recorded_outputs: payload.probe_outputs,
            task_ids: meta.task_ids,
        })
    }
}

/// The working-memory regularizer `(lambda/2) sqrt(mean |f(x) - recorded(x)|^2 + eps)`
/// over the whole cache, with the recorded outputs held constant.
/// `squared` replaces the root by the plain mean square.
pub fn l2_memory_loss(net: &Network, mem: &WorkingMemory, lambda: f64, squared: bool) -> Result<(f64, GradientVector)> {
    if mem.is_empty() {
        return Ok((0.0, GradientVector::zeros(net.num_params())));
    }
    let penalty = FunctionDistancePenalty {
        reference: mem.recorded_outputs.view(),
        scale: lambda / 2.0,
        eps: PENALTY_EPS,
        squared,
    };
    net.custom_loss_grad(mem.inputs.view(), &penalty)
}
