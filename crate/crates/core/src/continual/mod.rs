//! Learning a sequence of permuted tasks without forgetting the first ones.

mod ewc;
mod memory;

pub use ewc::{ewc_diag_fisher, ewc_loss, EwcState};
pub use memory::{l2_memory_loss, WorkingMemory};

use std::io::Write;

use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Network, OutputMode};
use crate::optim::{apply_delta, AdamConfig, AdamState, BatchSource, ShuffledSource};
use crate::rng::{self, Stream};

/// A uniformly random permutation of `0..d` (Fisher-Yates).
pub fn random_permutation(d: usize, seed: u64, task: u32) -> Vec<usize> {
    let mut p: Vec<usize> = (0..d).collect();
    p.shuffle(&mut rng::indexed(seed, Stream::Permutation, task));
    p
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
}

/// Reorders input coordinates so that column `j` of the result is column
/// `perm[j]` of `base`. Labels are untouched.
pub fn make_permuted_task(base: &Dataset, perm: &[usize]) -> Result<Dataset> {
    if perm.len() != base.dim() || !is_permutation(perm) {
        return Err(Error::Validation(format!("not a permutation of {} inputs", base.dim())));
    }
    Ok(Dataset {
        inputs: base.inputs.select(Axis(1), perm),
        ..base.clone()
    })
}

/// Train/test pair with one input permutation per task.
#[derive(Clone, Debug)]
pub struct TaskSequence {
    pub train: Dataset,
    pub test: Dataset,
    pub permutations: Vec<Vec<usize>>,
    pub epochs_per_task: usize,
}

impl TaskSequence {
    /// `tasks` seeded permutations; every task, the first included, is permuted.
    pub fn new(train: Dataset, test: Dataset, tasks: usize, epochs_per_task: usize, seed: u64) -> Result<Self> {
        let d = train.dim();
        let permutations = (0..tasks).map(|t| random_permutation(d, seed, t as u32)).collect();
        Self::with_permutations(train, test, permutations, epochs_per_task)
    }

    pub fn with_permutations(train: Dataset, test: Dataset, permutations: Vec<Vec<usize>>, epochs_per_task: usize) -> Result<Self> {
        if train.dim() != test.dim() || train.classes != test.classes {
            return Err(Error::shape("train and test splits differ in shape"));
        }
        if permutations.is_empty() || epochs_per_task == 0 {
            return Err(Error::config("a task sequence needs at least one task and one epoch"));
        }
        if let Some(bad) = permutations.iter().position(|p| p.len() != train.dim() || !is_permutation(p)) {
            return Err(Error::Validation(format!("permutation {bad} is not a bijection")));
        }
        Ok(TaskSequence {
            train,
            test,
            permutations,
            epochs_per_task,
        })
    }

    pub fn tasks(&self) -> usize {
        self.permutations.len()
    }

    pub fn task(&self, k: usize) -> Result<(Dataset, Dataset)> {
        let perm = &self.permutations[k];
        Ok((make_permuted_task(&self.train, perm)?, make_permuted_task(&self.test, perm)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adam,
    AdamRetrain,
    L2Memory,
    Ewc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Adam, Method::AdamRetrain, Method::L2Memory, Method::Ewc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Adam => "adam",
            Method::AdamRetrain => "adam_retrain",
            Method::L2Memory => "l2_memory",
            Method::Ewc => "ewc",
        }
    }

    fn uses_memory(self) -> bool {
        matches!(self, Method::AdamRetrain | Method::L2Memory)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown continual method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinualConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub memory_capacity: usize,
    pub l2_lambda: f64,
    /// Penalize the mean squared output change instead of its root.
    pub l2_squared: bool,
    pub ewc_lambda: f64,
    /// Examples of each finished task used for its Fisher diagonal.
    pub ewc_samples: usize,
    pub retrain_every: usize,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        ContinualConfig {
            hidden: vec![400, 400],
            activation: Activation::Relu,
            batch_size: 128,
            adam: AdamConfig::default(),
            memory_capacity: 1024,
            l2_lambda: 1.3,
            l2_squared: false,
            ewc_lambda: 500.0,
            ewc_samples: 1024,
            retrain_every: 10,
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self, tasks: usize) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.retrain_every == 0 || self.ewc_samples == 0 {
            return Err(Error::config("batch_size, retrain_every and ewc_samples must be positive"));
        }
        if self.memory_capacity < tasks {
            return Err(Error::config(format!(
                "memory capacity {} is smaller than the {tasks} tasks",
                self.memory_capacity
            )));
        }
        if !(self.l2_lambda >= 0.0) || !(self.ewc_lambda >= 0.0) {
            return Err(Error::config("regularization strengths must be nonnegative"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layers must be non-empty"));
        }
        Ok(())
    }

    pub fn network(&self, input_dim: usize, classes: usize, seed: u64) -> Result<Network> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(classes);
        let mut acts = vec![self.activation; self.hidden.len()];
        acts.push(Activation::Identity);
        Network::init(&dims, &acts, OutputMode::Softmax, seed)
    }
}

/// `values[t][k]`: test accuracy on task `k` after training on task `t`, for `k <= t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub values: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    /// Accuracy on the first task after each task.
    pub fn first_task(&self) -> Vec<f64> {
        self.values.iter().map(|row| row[0]).collect()
    }

    /// Rows are tasks trained so far, columns the evaluated task; cells above
    /// the diagonal are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let t = self.values.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["after_task".to_string()];
        header.extend((0..t).map(|k| format!("task_{k}")));
        w.write_record(&header)?;
        for (i, row) in self.values.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend((0..t).map(|k| row.get(k).map_or_else(String::new, |a| format!("{a}"))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinualStep {
    pub task: usize,
    /// Epoch within the task, from 1.
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub regularizer: f64,
}

#[derive(Clone, Debug)]
pub struct ContinualRun {
    pub method: Method,
    pub accuracy: AccuracyMatrix,
    pub steps: Vec<ContinualStep>,
    pub memory: Option<WorkingMemory>,
    pub retrain_steps: usize,
}

/// Trains one network through every task of `seq` with `method`.
///
/// The base optimizer is Adam throughout. `adam_retrain` takes an extra Adam
/// step on the cross-entropy of the whole cache every `retrain_every` steps;
/// `l2_memory` adds the working-memory regularizer to every step; `ewc` adds
/// one quadratic anchor per finished task.
pub fn run_continual(seq: &TaskSequence, method: Method, cfg: &ContinualConfig, seed: u64) -> Result<ContinualRun> {
    cfg.validate(seq.tasks())?;
    if cfg.batch_size > seq.train.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds the {} training examples",
            cfg.batch_size,
            seq.train.len()
        )));
    }
    let mut net = cfg.network(seq.train.dim(), seq.train.classes, seed)?;
    let mut adam = AdamState::new(net.num_params());
    let mut memory = WorkingMemory::new(cfg.memory_capacity, seq.train.dim(), seq.train.classes);
    let mut memory_rng = rng::stream(seed, Stream::Memory);
    let mut anchors: Vec<EwcState> = Vec::new();
    let mut accuracy = Vec::with_capacity(seq.tasks());
    let mut steps = Vec::new();
    let mut step = 0usize;
    let mut retrain_steps = 0usize;
    let steps_per_epoch = seq.train.len() / cfg.batch_size;
    let mut tests: Vec<Dataset> = Vec::with_capacity(seq.tasks());

    for task in 0..seq.tasks() {
        let (train, test) = seq.task(task)?;
        tests.push(test);
        let mut source = ShuffledSource::new(
            train.inputs.view(),
            &train.labels,
            cfg.batch_size,
            rng::indexed(seed, Stream::DataOrder, task as u32),
        )?;
        for i in 0..seq.epochs_per_task * steps_per_epoch {
            step += 1;
            let batch = source.next_batch()?;
            let (loss, mut grad) = net.loss_and_grad(&batch)?;
            let mut regularizer = 0.0;
            match method {
                Method::L2Memory if !memory.is_empty() => {
                    let (r, g) = l2_memory_loss(&net, &memory, cfg.l2_lambda, cfg.l2_squared)?;
                    regularizer = r;
                    grad.add_scaled(1.0, &g);
                }
                Method::Ewc if !anchors.is_empty() => {
                    let (r, g) = ewc_loss(net.params(), &anchors)?;
                    regularizer = r;
                    grad.add_scaled(1.0, &g);
                }
                _ => {}
            }
            apply_delta(net.params_mut(), &adam.direction(&grad, &cfg.adam));
            if !grad.is_finite() {
                return Err(Error::Divergence {
                    iterations: step,
                    norm: grad.norm(),
                });
            }
            if method == Method::AdamRetrain && !memory.is_empty() && step % cfg.retrain_every == 0 {
                let (_, g) = net.loss_and_grad(&memory.batch())?;
                apply_delta(net.params_mut(), &adam.direction(&g, &cfg.adam));
                retrain_steps += 1;
            }
            steps.push(ContinualStep {
                task,
                epoch: i / steps_per_epoch + 1,
                step,
                loss,
                regularizer,
            });
        }

        accuracy.push(tests.iter().map(|t| net.accuracy(&t.batch())).collect::<Result<Vec<f64>>>()?);

        if method.uses_memory() {
            memory.update(&train, &net, task, &mut memory_rng)?;
        }
        if method == Method::Ewc {
            let idx: Vec<usize> = rand::seq::index::sample(
                &mut rng::indexed(seed, Stream::FisherSampling, task as u32),
                train.len(),
                cfg.ewc_samples.min(train.len()),
            )
            .into_vec();
            let fisher = ewc_diag_fisher(&net, &train.gather(&idx))?;
            anchors.push(EwcState::new(net.params().to_vec(), fisher, cfg.ewc_lambda)?);
        }
    }

    Ok(ContinualRun {
        method,
        accuracy: AccuracyMatrix { values: accuracy },
        steps,
        memory: method.uses_memory().then_some(memory),
        retrain_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, Split, SynthKind};

    fn grid(n: usize, seed: u64, split: Split) -> Dataset {
        let mut d = synth_dataset(SynthKind::PermutableGrid, n, 4, seed).unwrap();
        d.split = split;
        d
    }

    #[test]
    fn permutations_are_bijections() {
        let base = grid(50, 0, Split::Train);
        let identity: Vec<usize> = (0..64).collect();
        assert_eq!(make_permuted_task(&base, &identity).unwrap(), base);
        let p = random_permutation(64, 7, 0);
        let q = random_permutation(64, 7, 1);
        assert_ne!(p, q);
        let permuted = make_permuted_task(&base, &p).unwrap();
        assert_eq!(permuted.class_histogram(), base.class_histogram());
        assert_ne!(permuted.inputs, base.inputs);
        let back = make_permuted_task(&permuted, &invert_permutation(&p)).unwrap();
        assert_eq!(back, base);
        assert!(make_permuted_task(&base, &[0; 64]).is_err());
        assert!(make_permuted_task(&base, &identity[..63]).is_err());
    }

    fn tiny_cfg() -> ContinualConfig {
        ContinualConfig {
            hidden: vec![32],
            batch_size: 20,
            memory_capacity: 60,
            ewc_samples: 100,
            adam: AdamConfig { lr: 0.01, ..AdamConfig::default() },
            ..ContinualConfig::default()
        }
    }

    #[test]
    fn single_task_is_method_independent() {
        let seq = TaskSequence::new(grid(200, 1, Split::Train), grid(100, 2, Split::Test), 1, 2, 3).unwrap();
        let runs: Vec<ContinualRun> = Method::ALL.iter().map(|&m| run_continual(&seq, m, &tiny_cfg(), 5).unwrap()).collect();
        for r in &runs {
            assert_eq!(r.accuracy.values.len(), 1);
            assert_eq!(r.accuracy, runs[0].accuracy);
            assert_eq!(r.retrain_steps, 0);
        }
    }

    #[test]
    fn accuracy_matrix_is_lower_triangular() {
        let seq = TaskSequence::new(grid(200, 1, Split::Train), grid(100, 2, Split::Test), 3, 1, 3).unwrap();
        for m in Method::ALL {
            let run = run_continual(&seq, m, &tiny_cfg(), 5).unwrap();
            for (t, row) in run.accuracy.values.iter().enumerate() {
                assert_eq!(row.len(), t + 1);
            }
            let mut csv = Vec::new();
            run.accuracy.write_csv(&mut csv).unwrap();
            let text = String::from_utf8(csv).unwrap();
            assert!(text.starts_with("after_task,task_0,task_1,task_2\n"));
            assert!(text.lines().nth(1).unwrap().ends_with(",,"));
            if m.uses_memory() {
                assert_eq!(run.memory.as_ref().unwrap().counts().values().copied().collect::<Vec<_>>(), vec![20, 20, 20]);
            }
        }
    }

    #[test]
    fn retrain_runs_every_n_steps_once_memory_exists() {
        // 200 / 20 = 10 steps per task; tasks 1 and 2 retrain at steps 20 and 30
        let seq = TaskSequence::new(grid(200, 1, Split::Train), grid(100, 2, Split::Test), 3, 1, 3).unwrap();
        let run = run_continual(&seq, Method::AdamRetrain, &tiny_cfg(), 5).unwrap();
        assert_eq!(run.retrain_steps, 2);
        let cfg = ContinualConfig { retrain_every: 1, ..tiny_cfg() };
        assert_eq!(run_continual(&seq, Method::AdamRetrain, &cfg, 5).unwrap().retrain_steps, 20);
    }

    #[test]
    fn misconfiguration_is_caught_before_training() {
        let seq = TaskSequence::new(grid(200, 1, Split::Train), grid(100, 2, Split::Test), 3, 1, 3).unwrap();
        let bad = [
            ContinualConfig { memory_capacity: 2, ..tiny_cfg() },
            ContinualConfig { batch_size: 0, ..tiny_cfg() },
            ContinualConfig { batch_size: 500, ..tiny_cfg() },
            ContinualConfig { retrain_every: 0, ..tiny_cfg() },
        ];
        for cfg in bad {
            assert!(matches!(run_continual(&seq, Method::Ewc, &cfg, 0), Err(Error::Config(_))));
        }
        assert!("si".parse::<Method>().is_err());
        assert_eq!("l2_memory".parse::<Method>().unwrap(), Method::L2Memory);
    }

    #[test]
    fn runs_are_deterministic() {
        let seq = TaskSequence::new(grid(200, 1, Split::Train), grid(100, 2, Split::Test), 2, 1, 3).unwrap();
        let a = run_continual(&seq, Method::L2Memory, &tiny_cfg(), 9).unwrap();
        let b = run_continual(&seq, Method::L2Memory, &tiny_cfg(), 9).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.steps, b.steps);
    }
}
