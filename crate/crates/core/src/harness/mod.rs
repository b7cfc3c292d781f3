//! Experiment orchestration: configuration, data loading, dispatch to the
//! pipelines, and result files.

mod config;
mod runlog;
mod train;

pub use config::{
    resolve_mnist_root, DatasetSpec, ExperimentConfig, ExperimentKind, ForgetSpec, ModelSpec, NamedOptimizer, OptimizerSpec,
    ProbeSource, ProbeSpec, TrainingSpec,
};
pub use runlog::{write_atomic, EpochRecord, OutputDir, RunLog, RunStatus, StepRecord};
pub use train::{probe_outputs, train_network, TrainOutcome};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::continual::{run_continual, TaskSequence};
use crate::data::{load_mnist_dir, synth_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{convergence_curve, epoch_average, l2_distance, ratio_series, write_distance_series, RatioScale};
use crate::nn::{Activation, Batch, Network, OutputMode};
use crate::rng::{self, Stream};
use crate::trajectory::{build_distance_matrices, classical_mds, write_snapshot, DistanceMatrix, Snapshot};

/// Fixed seed for subsampling MNIST, so every experiment sees the same subset.
const MNIST_SUBSET_SEED: u64 = 0;

pub fn load_datasets(spec: &DatasetSpec, data_root: Option<&Path>) -> Result<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::Mnist { root, n_train, n_test } => {
            let dir = resolve_mnist_root(root.as_deref(), data_root)?;
            let (train, test) = load_mnist_dir(&dir)?;
            let train = n_train.map_or(train.clone(), |n| train.subsample(n, MNIST_SUBSET_SEED));
            let test = n_test.map_or(test.clone(), |n| test.subsample(n, MNIST_SUBSET_SEED));
            Ok((train, test))
        }
        DatasetSpec::Synth {
            kind,
            n_train,
            n_test,
            classes,
            data_seed,
        } => {
            let train = synth_dataset(*kind, *n_train, *classes, *data_seed)?;
            let mut test = synth_dataset(*kind, *n_test, *classes, data_seed.wrapping_add(1) ^ 0x7e57)?;
            test.split = Split::Test;
            Ok((train, test))
        }
    }
}

/// Probe batch fixed at run start, shared by every run of the experiment.
pub fn select_probe(spec: &ProbeSpec, train: &Dataset, test: &Dataset, seed: u64) -> Result<Batch> {
    let pool = match spec.source {
        ProbeSource::Test => test.clone(),
        ProbeSource::All => train.concat(test)?,
    };
    let n = if spec.size == 0 { pool.len() } else { spec.size.min(pool.len()) };
    let mut idx: Vec<usize> = if n == pool.len() {
        (0..n).collect()
    } else {
        rand::seq::index::sample(&mut rng::stream(seed, Stream::Probe), pool.len(), n).into_vec()
    };
    idx.sort_unstable();
    Ok(pool.gather(&idx))
}

pub fn build_network(model: &ModelSpec, input_dim: usize, classes: usize, seed: u64) -> Result<Network> {
    let mut dims = vec![input_dim];
    dims.extend(&model.hidden);
    dims.push(classes);
    let mut acts = vec![model.activation; model.hidden.len()];
    acts.push(Activation::Identity);
    Network::init(&dims, &acts, OutputMode::Softmax, seed)
}

/// Validates `config`, runs it, and writes every output plus `run.json`
/// under `out_dir`. Configuration problems are reported before anything is
/// written; a failing experiment still leaves `run.json` with status
/// `failed` and the list of partial outputs.
pub fn run(config: ExperimentConfig, data_root: Option<&Path>, out_dir: &Path) -> Result<RunLog> {
    config.validate(data_root)?;
    let started = Instant::now();
    let mut out = OutputDir::create(out_dir)?;
    let mut log = RunLog::new(config);
    let result = execute(&mut log, data_root, &mut out);
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    log.outputs = out.written().to_vec();
    match &result {
        Ok(()) => log.status = RunStatus::Ok,
        Err(e) => {
            log.status = RunStatus::Failed;
            log.error = Some(e.to_string());
        }
    }
    let json = serde_json::to_vec_pretty(&log)?;
    write_atomic(&out.root().join("run.json"), &json)?;
    result.map(|()| log)
}

fn execute(log: &mut RunLog, data_root: Option<&Path>, out: &mut OutputDir) -> Result<()> {
    let cfg = log.config.clone();
    let (train, test) = load_datasets(&cfg.dataset, data_root)?;
    match cfg.kind.expect("validated") {
        ExperimentKind::Train => run_train(&cfg, &train, &test, log, out),
        ExperimentKind::Distances => run_distances(&cfg, &train, &test, log, out, false),
        ExperimentKind::Embed => run_distances(&cfg, &train, &test, log, out, true),
        ExperimentKind::CompareOptimizers => run_compare(&cfg, &train, &test, log, out),
        ExperimentKind::EstimatorConvergence => run_estimator(&cfg, &train, &test, log, out),
        ExperimentKind::Forget => run_forget(&cfg, train, test, log, out),
    }
}

fn run_seeds(cfg: &ExperimentConfig) -> impl Iterator<Item = u64> + '_ {
    (0..cfg.runs as u64).map(move |r| cfg.seed.wrapping_add(r))
}

fn train_one(cfg: &ExperimentConfig, opt: &OptimizerSpec, train: &Dataset, test: &Dataset, probe: &Batch, seed: u64, run: &str) -> Result<TrainOutcome> {
    let net = build_network(&cfg.model, train.dim(), train.classes, seed)?;
    train_network(net, opt, train, test, probe, &cfg.training, seed, run)
}

fn finish_records(log: &mut RunLog, outcome: &TrainOutcome) {
    log.steps.extend(outcome.steps.iter().cloned());
    log.epochs.extend(outcome.epochs.iter().cloned());
}

fn write_step_files(log: &RunLog, out: &mut OutputDir) -> Result<()> {
    out.write_records("metrics.csv", &log.steps)?;
    out.write_records("epochs.csv", &log.epochs)
}

fn run_train(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, log: &mut RunLog, out: &mut OutputDir) -> Result<()> {
    let probe = select_probe(&cfg.probe, train, test, cfg.seed)?;
    let opt = cfg.optimizer.expect("validated");
    for seed in run_seeds(cfg) {
        let run = format!("seed{seed}");
        let outcome = train_one(cfg, &opt, train, test, &probe, seed, &run)?;
        finish_records(log, &outcome);
        let series = RatioScale::ALL
            .iter()
            .map(|&s| Ok((s, ratio_series(&outcome.snapshots, s)?)))
            .collect::<Result<Vec<_>>>()?;
        out.write_with(&format!("ratios_{run}.csv"), |b| write_distance_series(b, &series))?;
        let averaged: Vec<_> = series.iter().map(|(s, p)| (*s, epoch_average(p))).collect();
        out.write_with(&format!("ratios_epoch_avg_{run}.csv"), |b| write_distance_series(b, &averaged))?;
        let last = outcome.snapshots.last().expect("at least the initial snapshot");
        out.write_with(&format!("final_{run}.fsnp"), |b| write_snapshot(b, &last.params, &last.probe_outputs))?;
        let end = outcome.epochs.last().expect("at least one epoch");
        log.final_metrics.insert(format!("test_accuracy_{run}"), end.test_accuracy);
        log.final_metrics.insert(format!("l2_from_init_{run}"), end.l2_from_init);
    }
    write_step_files(log, out)
}

/// Function and parameter distances between the first and last checkpoints of each run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OriginSummary {
    pub max_init_init_function: f64,
    pub min_init_final_function: f64,
    /// Smallest ratio of an init-to-init parameter distance to the
    /// init-to-final parameter distance of either run in the pair.
    pub min_init_param_ratio: f64,
}

pub fn origin_summary(runs: &[Vec<Snapshot>]) -> Result<OriginSummary> {
    if runs.len() < 2 {
        return Err(Error::config("origin summary needs at least two runs"));
    }
    let first = |r: &Vec<Snapshot>| r.first().cloned().ok_or_else(|| Error::shape("empty run"));
    let last = |r: &Vec<Snapshot>| r.last().cloned().ok_or_else(|| Error::shape("empty run"));
    let mut max_ii = 0.0f64;
    let mut min_if = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut travel = Vec::new();
    for r in runs {
        let (a, b) = (first(r)?, last(r)?);
        min_if = min_if.min(l2_distance(a.probe_outputs.view(), b.probe_outputs.view())?.distance);
        travel.push(crate::metrics::param_l2_distance(&a.params, &b.params)?);
    }
    for i in 0..runs.len() {
        for j in (i + 1)..runs.len() {
            let (a, b) = (first(&runs[i])?, first(&runs[j])?);
            max_ii = max_ii.max(l2_distance(a.probe_outputs.view(), b.probe_outputs.view())?.distance);
            let p = crate::metrics::param_l2_distance(&a.params, &b.params)?;
            min_ratio = min_ratio.min(p / travel[i].max(travel[j]));
        }
    }
    Ok(OriginSummary {
        max_init_init_function: max_ii,
        min_init_final_function: min_if,
        min_init_param_ratio: min_ratio,
    })
}

fn run_distances(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, log: &mut RunLog, out: &mut OutputDir, embed: bool) -> Result<()> {
    let probe = select_probe(&cfg.probe, train, test, cfg.seed)?;
    let opt = cfg.optimizer.expect("validated");
    let mut runs = Vec::new();
    for seed in run_seeds(cfg) {
        let outcome = train_one(cfg, &opt, train, test, &probe, seed, &format!("seed{seed}"))?;
        finish_records(log, &outcome);
        runs.push(outcome.snapshots);
    }
    write_step_files(log, out)?;
    let views: Vec<&[Snapshot]> = runs.iter().map(Vec::as_slice).collect();
    let (param, function) = build_distance_matrices(&views)?;
    out.write_with("param_distances.csv", |b| param.write_csv(b))?;
    out.write_with("function_distances.csv", |b| function.write_csv(b))?;
    if runs.len() > 1 {
        let s = origin_summary(&runs)?;
        log.final_metrics.insert("max_init_init_function".into(), s.max_init_init_function);
        log.final_metrics.insert("min_init_final_function".into(), s.min_init_final_function);
        log.final_metrics.insert("min_init_param_ratio".into(), s.min_init_param_ratio);
    }
    if embed {
        for (name, m) in [("param", &param), ("function", &function)] {
            write_embedding(name, m, log, out)?;
        }
    }
    Ok(())
}

fn write_embedding(name: &str, m: &DistanceMatrix, log: &mut RunLog, out: &mut OutputDir) -> Result<()> {
    let e = classical_mds(m, 2)?;
    out.write_with(&format!("{name}_embedding.csv"), |b| e.write_csv(&m.labels, b))?;
    log.final_metrics.insert(format!("{name}_embedding_stress"), e.stress);
    Ok(())
}

fn run_compare(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, log: &mut RunLog, out: &mut OutputDir) -> Result<()> {
    let probe = select_probe(&cfg.probe, train, test, cfg.seed)?;
    for seed in run_seeds(cfg) {
        for named in &cfg.optimizers {
            let run = if cfg.runs > 1 { format!("{}_seed{seed}", named.name) } else { named.name.clone() };
            let outcome = train_one(cfg, &named.optimizer, train, test, &probe, seed, &run)?;
            finish_records(log, &outcome);
            let end = outcome.epochs.last().expect("at least one epoch");
            log.final_metrics.insert(format!("test_accuracy_{run}"), end.test_accuracy);
            if let Some(p) = end.path_length {
                log.final_metrics.insert(format!("path_length_{run}"), p);
            }
        }
    }
    write_step_files(log, out)
}

#[derive(Serialize)]
struct ConvergenceRow {
    run: String,
    sample_size: usize,
    estimate: f64,
    reference: f64,
    relative_error: f64,
}

fn run_estimator(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, log: &mut RunLog, out: &mut OutputDir) -> Result<()> {
    let probe = select_probe(&cfg.probe, train, test, cfg.seed)?;
    let opt = cfg.optimizer.expect("validated");
    let mut rows = Vec::new();
    for seed in run_seeds(cfg) {
        let run = format!("seed{seed}");
        let outcome = train_one(cfg, &opt, train, test, &probe, seed, &run)?;
        finish_records(log, &outcome);
        let (a, b) = (&outcome.snapshots[0], outcome.snapshots.last().expect("snapshots"));
        let sizes: Vec<usize> = cfg.sample_sizes.iter().copied().filter(|&s| s <= probe.len()).collect();
        let curve = convergence_curve(a.probe_outputs.view(), b.probe_outputs.view(), &sizes, seed)?;
        for ((&n, &e), r) in curve.sample_sizes.iter().zip(&curve.estimates).zip(curve.relative_errors()) {
            rows.push(ConvergenceRow {
                run: run.clone(),
                sample_size: n,
                estimate: e,
                reference: curve.reference,
                relative_error: r,
            });
            log.final_metrics.insert(format!("relative_error_{run}_n{n}"), r);
        }
        log.final_metrics.insert(format!("reference_{run}"), curve.reference);
    }
    write_step_files(log, out)?;
    out.write_records("convergence.csv", &rows)
}

#[derive(Serialize)]
struct FirstTaskRow<'a> {
    method: &'a str,
    after_task: usize,
    accuracy: f64,
}

fn run_forget(cfg: &ExperimentConfig, train: Dataset, test: Dataset, log: &mut RunLog, out: &mut OutputDir) -> Result<()> {
    let f = &cfg.forget;
    let seq = TaskSequence::new(train, test, f.tasks, f.epochs_per_task, cfg.seed)?;
    let mut first = Vec::new();
    for &method in &f.methods {
        let result = run_continual(&seq, method, &f.continual, cfg.seed)?;
        let name = method.name();
        out.write_with(&format!("accuracy_{name}.csv"), |b| result.accuracy.write_csv(b))?;
        if let Some(mem) = &result.memory {
            let mut sidecar = Vec::new();
            out.write_with(&format!("memory_{name}.fsnp"), |b| mem.save(b, &mut sidecar))?;
            out.write_with(&format!("memory_{name}.json"), |b| Ok(b.write_all(&sidecar)?))?;
        }
        let curve = result.accuracy.first_task();
        for (t, &a) in curve.iter().enumerate() {
            first.push((name, t, a));
        }
        log.final_metrics.insert(format!("first_task_final_{name}"), *curve.last().expect("tasks >= 1"));
        log.final_metrics.insert(format!("first_task_initial_{name}"), curve[0]);
        log.steps.extend(result.steps.iter().map(|s| StepRecord {
            run: format!("{name}/task{}", s.task),
            epoch: s.epoch,
            step: s.step,
            loss: s.loss,
            penalty: s.regularizer,
            passes: None,
            step_norm: None,
            path_length: None,
        }));
    }
    let rows: Vec<FirstTaskRow> = first
        .iter()
        .map(|&(method, after_task, accuracy)| FirstTaskRow { method, after_task, accuracy })
        .collect();
    out.write_records("first_task.csv", &rows)?;
    out.write_records("metrics.csv", &log.steps)
}
