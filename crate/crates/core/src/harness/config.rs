use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continual::{ContinualConfig, Method};
use crate::data::SynthKind;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::optim::{AdamConfig, HcgdConfig, NgdConfig, SgdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    Distances,
    Embed,
    Forget,
    CompareOptimizers,
    EstimatorConvergence,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Train,
        ExperimentKind::Distances,
        ExperimentKind::Embed,
        ExperimentKind::Forget,
        ExperimentKind::CompareOptimizers,
        ExperimentKind::EstimatorConvergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Distances => "distances",
            ExperimentKind::Embed => "embed",
            ExperimentKind::Forget => "forget",
            ExperimentKind::CompareOptimizers => "compare-optimizers",
            ExperimentKind::EstimatorConvergence => "estimator-convergence",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// IDX files with the standard MNIST names, looked up in `root`, then
    /// `root/mnist`. Without `root` the dataset root given to the run is used.
    Mnist {
        #[serde(default)]
        root: Option<PathBuf>,
        #[serde(default)]
        n_train: Option<usize>,
        #[serde(default)]
        n_test: Option<usize>,
    },
    Synth {
        kind: SynthKind,
        n_train: usize,
        n_test: usize,
        classes: usize,
        /// Seed of the data itself, kept apart from the experiment seed so
        /// that runs with different seeds share one dataset.
        #[serde(default)]
        data_seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    #[serde(default = "relu")]
    pub activation: Activation,
}

fn relu() -> Activation {
    Activation::Relu
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden: vec![100],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerSpec {
    Sgd(SgdConfig),
    Hcgd(HcgdConfig),
    Adam(AdamConfig),
    Ngd(NgdConfig),
}

impl OptimizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerSpec::Sgd(_) => "sgd",
            OptimizerSpec::Hcgd(_) => "hcgd",
            OptimizerSpec::Adam(_) => "adam",
            OptimizerSpec::Ngd(_) => "ngd",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerSpec::Sgd(c) => c.validate(),
            OptimizerSpec::Hcgd(c) => c.validate(),
            OptimizerSpec::Adam(c) => c.validate(),
            OptimizerSpec::Ngd(c) => c.validate(),
        }
    }
}

/// An optimizer with a label for comparison tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedOptimizer {
    pub name: String,
    pub optimizer: OptimizerSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    /// Also checkpoint every this many steps; 0 keeps epoch boundaries only.
    pub snapshot_every: usize,
    /// Record probe outputs after every step for the cumulative path length.
    pub track_path: bool,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        TrainingSpec {
            epochs: 5,
            batch_size: 64,
            snapshot_every: 0,
            track_path: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeSource {
    /// Held-out test examples.
    Test,
    /// Train and test examples together.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub source: ProbeSource,
    /// Number of examples; 0 takes every example of the source.
    pub size: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            source: ProbeSource::Test,
            size: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgetSpec {
    pub tasks: usize,
    pub epochs_per_task: usize,
    pub methods: Vec<Method>,
    #[serde(flatten)]
    pub continual: ContinualConfig,
}

impl Default for ForgetSpec {
    fn default() -> Self {
        ForgetSpec {
            tasks: 8,
            epochs_per_task: 10,
            methods: Method::ALL.to_vec(),
            continual: ContinualConfig::default(),
        }
    }
}

/// One experiment, read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub optimizer: Option<OptimizerSpec>,
    /// Optimizers for `compare-optimizers`.
    #[serde(default)]
    pub optimizers: Vec<NamedOptimizer>,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub probe: ProbeSpec,
    /// Independent runs (seeds `seed`, `seed + 1`, ...).
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    #[serde(default)]
    pub forget: ForgetSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Settles the experiment kind against the one requested on the command line.
    pub fn resolve_kind(&mut self, requested: ExperimentKind) -> Result<()> {
        match self.kind {
            Some(k) if k != requested => Err(Error::config(format!(
                "config is for {} but {} was requested",
                k.name(),
                requested.name()
            ))),
            _ => {
                self.kind = Some(requested);
                Ok(())
            }
        }
    }

    pub fn validate(&self, data_root: Option<&Path>) -> Result<()> {
        let kind = self.kind.ok_or_else(|| Error::config("experiment kind missing"))?;
        if self.runs == 0 {
            return Err(Error::config("runs must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("hidden layers must be non-empty"));
        }
        match &self.dataset {
            DatasetSpec::Mnist { root, .. } => {
                resolve_mnist_root(root.as_deref(), data_root)?;
            }
            DatasetSpec::Synth { n_train, n_test, classes, .. } => {
                if *n_train < *classes || *n_test < *classes {
                    return Err(Error::config("synthetic splits need at least one example per class"));
                }
            }
        }
        let t = &self.training;
        if kind != ExperimentKind::Forget && (t.epochs == 0 || t.batch_size == 0) {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        match kind {
            ExperimentKind::CompareOptimizers => {
                if self.optimizers.is_empty() {
                    return Err(Error::config("compare-optimizers needs a non-empty `optimizers` list"));
                }
                for o in &self.optimizers {
                    o.optimizer.validate()?;
                }
            }
            ExperimentKind::Forget => {
                if self.forget.methods.is_empty() || self.forget.tasks == 0 || self.forget.epochs_per_task == 0 {
                    return Err(Error::config("forget needs methods, tasks and epochs_per_task"));
                }
                self.forget.continual.validate(self.forget.tasks)?;
            }
            _ => {
                self.optimizer
                    .as_ref()
                    .ok_or_else(|| Error::config(format!("{} needs an `optimizer`", kind.name())))?
                    .validate()?;
            }
        }
        if kind == ExperimentKind::EstimatorConvergence
            && (self.sample_sizes.is_empty() || self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) || self.sample_sizes[0] == 0)
        {
            return Err(Error::config("sample_sizes must be positive and strictly increasing"));
        }
        if kind == ExperimentKind::Embed && self.training.epochs + 1 < 3 && self.runs == 1 {
            return Err(Error::config("an embedding needs at least three checkpoints"));
        }
        Ok(())
    }
}

/// Directory holding the MNIST IDX files.
pub fn resolve_mnist_root(configured: Option<&Path>, data_root: Option<&Path>) -> Result<PathBuf> {
    let base = configured
        .or(data_root)
        .ok_or_else(|| Error::config("no dataset root: set FUNCSPACE_DATA or dataset.root"))?;
    for dir in [base.to_path_buf(), base.join("mnist")] {
        let names = [crate::data::MNIST_TRAIN, crate::data::MNIST_TEST];
        if names.iter().all(|(i, l)| dir.join(i).is_file() && dir.join(l).is_file()) {
            return Ok(dir);
        }
    }
    Err(Error::config(format!("MNIST IDX files not found under {}", base.display())))
}
