//! Empirical L2 function distances and l2 parameter distances.
//!
//! The function distance between `f` and `g` over a batch is
//! `sqrt((1/N) * sum_i |f(x_i) - g(x_i)|^2)`, where `|.|` is the Euclidean
//! norm over output coordinates. The squared form (`mean_sq`) is what path
//! lengths accumulate.

use std::io::Write;

use ndarray::ArrayView2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::trajectory::Snapshot;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// An empirical L2 distance with per-example statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2Estimate {
    pub distance: f64,
    pub mean_sq: f64,
    pub per_example_sq: Vec<f64>,
    /// Sample standard deviation of `per_example_sq`.
    pub std_single: f64,
    pub n: usize,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl L2Estimate {
    fn from_per_example(per_example_sq: Vec<f64>) -> Self {
        let n = per_example_sq.len();
        let mean_sq = per_example_sq.iter().sum::<f64>() / n as f64;
        let std_single = if n > 1 {
            let ss = per_example_sq.iter().map(|v| (v - mean_sq).powi(2)).sum::<f64>();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        // Normal interval on mean_sq, mapped through sqrt.
        let half = Z95 * std_single / (n as f64).sqrt();
        L2Estimate {
            distance: mean_sq.sqrt(),
            mean_sq,
            per_example_sq,
            std_single,
            n,
            ci95_low: (mean_sq - half).max(0.0).sqrt(),
            ci95_high: (mean_sq + half).sqrt(),
        }
    }
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("output matrices {:?} and {:?} differ", a.dim(), b.dim())));
    }
    if a.nrows() == 0 {
        return Err(Error::shape("function distance needs at least one example"));
    }
    Ok(())
}

fn row_sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, i: usize) -> f64 {
    a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Empirical L2 distance between two functions given their outputs on the
/// same N examples.
pub fn l2_distance(outputs_a: ArrayView2<'_, f64>, outputs_b: ArrayView2<'_, f64>) -> Result<L2Estimate> {
    check_pair(outputs_a, outputs_b)?;
    let per = (0..outputs_a.nrows()).map(|i| row_sq(outputs_a, outputs_b, i)).collect();
    Ok(L2Estimate::from_per_example(per))
}

/// `(1/N) sum_i |a_i - b_i|^2` without keeping per-example values.
pub fn mean_sq_distance(outputs_a: ArrayView2<'_, f64>, outputs_b: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(outputs_a, outputs_b)?;
    let n = outputs_a.nrows();
    Ok((0..n).map(|i| row_sq(outputs_a, outputs_b, i)).sum::<f64>() / n as f64)
}

/// Euclidean distance between two flat parameter vectors.
pub fn param_l2_distance(params_a: &[f64], params_b: &[f64]) -> Result<f64> {
    if params_a.len() != params_b.len() {
        return Err(Error::shape(format!(
            "parameter vectors of length {} and {}",
            params_a.len(),
            params_b.len()
        )));
    }
    Ok(params_a.iter().zip(params_b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// Distance estimates on growing random subsamples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub sample_sizes: Vec<usize>,
    pub estimates: Vec<f64>,
    /// Estimate on every available example.
    pub reference: f64,
}

impl ConvergenceCurve {
    /// `|estimate / reference - 1|` for each sample size.
    pub fn relative_errors(&self) -> Vec<f64> {
        self.estimates
            .iter()
            .map(|e| if self.reference == 0.0 { e.abs() } else { (e / self.reference - 1.0).abs() })
            .collect()
    }
}

/// Estimates the distance on seeded subsamples (without replacement) of each
/// requested size.
pub fn convergence_curve(
    outputs_a: ArrayView2<'_, f64>,
    outputs_b: ArrayView2<'_, f64>,
    sample_sizes: &[usize],
    seed: u64,
) -> Result<ConvergenceCurve> {
    check_pair(outputs_a, outputs_b)?;
    let n = outputs_a.nrows();
    if sample_sizes.is_empty() || sample_sizes[0] == 0 || sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "sample sizes must be positive and strictly increasing: {sample_sizes:?}"
        )));
    }
    if let Some(&too_big) = sample_sizes.iter().find(|&&s| s > n) {
        return Err(Error::config(format!("sample size {too_big} exceeds the {n} available examples")));
    }
    let per: Vec<f64> = (0..n).map(|i| row_sq(outputs_a, outputs_b, i)).collect();
    let reference = L2Estimate::from_per_example(per.clone()).distance;
    let mut rng = rng::stream(seed, Stream::Subsample);
    let estimates = sample_sizes
        .iter()
        .map(|&size| {
            if size == n {
                return reference;
            }
            let idx = index::sample(&mut rng, n, size);
            (idx.iter().map(|i| per[i]).sum::<f64>() / size as f64).sqrt()
        })
        .collect();
    Ok(ConvergenceCurve {
        sample_sizes: sample_sizes.to_vec(),
        estimates,
        reference,
    })
}

/// Running sum of squared L2 distances between consecutive checkpoints.
///
/// Entry `t` is `sum_{s=1..=t} mean_sq(outputs[s], outputs[s-1])`, so the
/// result has one entry fewer than the input.
pub fn cumulative_path_length(probe_outputs: &[ArrayView2<'_, f64>]) -> Result<Vec<f64>> {
    if probe_outputs.len() < 2 {
        return Err(Error::shape("path length needs at least two checkpoints"));
    }
    let mut acc = PathLength::default();
    let mut out = Vec::with_capacity(probe_outputs.len() - 1);
    for o in probe_outputs {
        if let Some(total) = acc.push(*o)? {
            out.push(total);
        }
    }
    Ok(out)
}

/// Streaming form of [`cumulative_path_length`] for use inside training loops.
#[derive(Clone, Debug, Default)]
pub struct PathLength {
    last: Option<ndarray::Array2<f64>>,
    total: f64,
    last_increment: f64,
}

impl PathLength {
    /// Adds a checkpoint; returns the running total once there is a predecessor.
    pub fn push(&mut self, outputs: ArrayView2<'_, f64>) -> Result<Option<f64>> {
        let result = match &self.last {
            None => None,
            Some(prev) => {
                if prev.dim() != outputs.dim() {
                    return Err(Error::shape(format!(
                        "probe outputs changed shape from {:?} to {:?}",
                        prev.dim(),
                        outputs.dim()
                    )));
                }
                self.last_increment = mean_sq_distance(prev.view(), outputs)?;
                self.total += self.last_increment;
                Some(self.total)
            }
        };
        self.last = Some(outputs.to_owned());
        Ok(result)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn last_increment(&self) -> f64 {
        self.last_increment
    }
}

/// Reference point for comparing parameter and function distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioScale {
    /// Each checkpoint against the one before it.
    BetweenUpdates,
    /// Each checkpoint against the last checkpoint of the previous epoch.
    BetweenEpochs,
    /// Each checkpoint against the first one.
    FromInit,
}

impl RatioScale {
    pub fn name(self) -> &'static str {
        match self {
            RatioScale::BetweenUpdates => "between_updates",
            RatioScale::BetweenEpochs => "between_epochs",
            RatioScale::FromInit => "from_init",
        }
    }

    pub const ALL: [RatioScale; 3] = [RatioScale::BetweenUpdates, RatioScale::BetweenEpochs, RatioScale::FromInit];
}

/// One (parameter distance, function distance) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub step: usize,
    pub epoch: usize,
    pub l2_param: f64,
    pub l2_function: f64,
    pub std_single: f64,
    pub n: usize,
}

/// Parameter and function distances of each snapshot against the reference
/// implied by `scale`. Snapshots without a reference (the first one for
/// between-update distances, the first epoch for between-epoch distances)
/// are skipped.
pub fn ratio_series(snapshots: &[Snapshot], scale: RatioScale) -> Result<Vec<RatioPoint>> {
    if snapshots.len() < 2 {
        return Err(Error::shape("ratio series needs at least two snapshots"));
    }
    let pair = |s: &Snapshot, r: &Snapshot| -> Result<RatioPoint> {
        let f = l2_distance(s.probe_outputs.view(), r.probe_outputs.view())?;
        Ok(RatioPoint {
            step: s.step,
            epoch: s.epoch,
            l2_param: param_l2_distance(&s.params, &r.params)?,
            l2_function: f.distance,
            std_single: f.std_single,
            n: f.n,
        })
    };
    let mut out = Vec::with_capacity(snapshots.len());
    match scale {
        RatioScale::FromInit => {
            for s in snapshots {
                out.push(pair(s, &snapshots[0])?);
            }
        }
        RatioScale::BetweenUpdates => {
            for w in snapshots.windows(2) {
                out.push(pair(&w[1], &w[0])?);
            }
        }
        RatioScale::BetweenEpochs => {
            // last snapshot seen for each epoch so far
            let mut epoch_end: Vec<(usize, usize)> = Vec::new();
            for (i, s) in snapshots.iter().enumerate() {
                if s.epoch > 0 {
                    if let Some(&(_, r)) = epoch_end.iter().rev().find(|(e, _)| *e + 1 == s.epoch) {
                        out.push(pair(s, &snapshots[r])?);
                    }
                }
                match epoch_end.last_mut() {
                    Some(last) if last.0 == s.epoch => last.1 = i,
                    _ => epoch_end.push((s.epoch, i)),
                }
            }
        }
    }
    Ok(out)
}

/// Averages all points that share an epoch.
pub fn epoch_average(points: &[RatioPoint]) -> Vec<RatioPoint> {
    let mut out: Vec<(RatioPoint, usize)> = Vec::new();
    for p in points {
        match out.last_mut() {
            Some((acc, count)) if acc.epoch == p.epoch => {
                acc.step = p.step;
                acc.l2_param += p.l2_param;
                acc.l2_function += p.l2_function;
                acc.std_single += p.std_single;
                *count += 1;
            }
            _ => out.push((p.clone(), 1)),
        }
    }
    out.into_iter()
        .map(|(mut p, c)| {
            let c = c as f64;
            p.l2_param /= c;
            p.l2_function /= c;
            p.std_single /= c;
            p
        })
        .collect()
}

/// Writes `(step, scale, l2_param, L2_function, std_single, n)` rows.
pub fn write_distance_series<W: Write>(out: W, series: &[(RatioScale, Vec<RatioPoint>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "scale", "l2_param", "L2_function", "std_single", "n"])?;
    for (scale, points) in series {
        for p in points {
            w.write_record([
                p.step.to_string(),
                scale.name().to_string(),
                p.l2_param.to_string(),
                p.l2_function.to_string(),
                p.std_single.to_string(),
                p.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
