//! Dense feedforward networks with exact backpropagation.
//!
//! Parameters live in one flat `Vec<f64>` in canonical order: for each layer,
//! the weight matrix (shape `in x out`, row-major) followed by its bias. Every
//! distance between parameter vectors in this crate relies on that layout.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `delta` by the derivative, expressed through the activation output.
    fn backprop(self, delta: &mut Array2<f64>, out: &Array2<f64>) {
        match self {
            Activation::Relu => delta.zip_mut_with(out, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Tanh => delta.zip_mut_with(out, |d, &a| *d *= 1.0 - a * a),
            Activation::Identity => {}
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Softmax,
    Raw,
}

/// Labels for per-example gradients: the true targets, or labels drawn from
/// the network's own predictive distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FisherMode {
    Empirical,
    Sampled,
}

/// Count of forward and backward passes through a network.
#[derive(Debug, Default)]
pub struct PassCounter {
    forward: AtomicU64,
    backward: AtomicU64,
}

impl PassCounter {
    pub fn forward(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn backward(&self) -> u64 {
        self.backward.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.forward() + self.backward()
    }

    pub fn reset(&self) {
        self.forward.store(0, Ordering::Relaxed);
        self.backward.store(0, Ordering::Relaxed);
    }

    fn bump_forward(&self) {
        self.forward.fetch_add(1, Ordering::Relaxed);
    }

    fn bump_backward(&self) {
        self.backward.fetch_add(1, Ordering::Relaxed);
    }
}

impl Clone for PassCounter {
    fn clone(&self) -> Self {
        PassCounter {
            forward: AtomicU64::new(self.forward()),
            backward: AtomicU64::new(self.backward()),
        }
    }
}

/// Flat gradient with the same length and ordering as [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        GradientVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }
}

impl std::ops::Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Inputs with optional integer class targets.
#[derive(Clone, Debug)]
pub struct Batch {
    inputs: Array2<f64>,
    targets: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Vec<usize>) -> Result<Self> {
        if targets.len() != inputs.nrows() {
            return Err(Error::shape(format!(
                "{} targets for {} inputs",
                targets.len(),
                inputs.nrows()
            )));
        }
        Ok(Batch {
            inputs,
            targets: Some(targets),
        })
    }

    pub fn unlabeled(inputs: Array2<f64>) -> Self {
        Batch {
            inputs,
            targets: None,
        }
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn targets(&self) -> Option<&[usize]> {
        self.targets.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// The same batch with every example repeated `times` times in place.
    pub fn repeated(&self, times: usize) -> Batch {
        let n = self.len();
        let idx: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, times)).collect();
        Batch {
            inputs: self.inputs.select(Axis(0), &idx),
            targets: self.targets.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// Activations saved by a forward pass, needed for backpropagation.
pub struct Trace {
    /// Post-activation output of every layer; the last entry is the logits.
    layer_outputs: Vec<Array2<f64>>,
    /// Network outputs (softmax of the logits in softmax mode).
    pub outputs: Array2<f64>,
}

/// A differentiable scalar function of the network outputs on one batch.
///
/// Anything the loss compares against (recorded outputs, targets) is a
/// constant: gradients flow only through `outputs`.
pub trait OutputLoss {
    /// Returns the loss value and its gradient with respect to `outputs`.
    fn evaluate(&self, outputs: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)>;
}

/// `sum(weights * outputs)`.
pub struct LinearOutputs<'a> {
    pub weights: ArrayView2<'a, f64>,
}

impl OutputLoss for LinearOutputs<'_> {
    fn evaluate(&self, outputs: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
        check_same_shape(outputs, self.weights)?;
        Ok(((&outputs * &self.weights).sum(), self.weights.to_owned()))
    }
}

/// `1/2 * ||outputs - target||^2`, summed over the batch.
pub struct HalfSquaredError<'a> {
    pub target: ArrayView2<'a, f64>,
}

impl OutputLoss for HalfSquaredError<'_> {
    fn evaluate(&self, outputs: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
        check_same_shape(outputs, self.target)?;
        let diff = &outputs - &self.target;
        Ok((0.5 * diff.mapv(|d| d * d).sum(), diff))
    }
}

/// Empirical function-space penalty against recorded reference outputs.
///
/// With `mean_sq = (1/N) sum_i |f(x_i) - r_i|^2` the loss is
/// `scale * sqrt(mean_sq + eps)`, or `scale * mean_sq` when `squared` is set.
/// `eps` keeps the gradient defined where the two functions coincide.
pub struct FunctionDistancePenalty<'a> {
    pub reference: ArrayView2<'a, f64>,
    pub scale: f64,
    pub eps: f64,
    pub squared: bool,
}

impl OutputLoss for FunctionDistancePenalty<'_> {
    fn evaluate(&self, outputs: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
        check_same_shape(outputs, self.reference)?;
        let n = outputs.nrows().max(1) as f64;
        let diff = &outputs - &self.reference;
        let mean_sq = diff.iter().map(|d| d * d).sum::<f64>() / n;
        if self.squared {
            let grad = diff * (2.0 * self.scale / n);
            Ok((self.scale * mean_sq, grad))
        } else {
            let root = (mean_sq + self.eps).sqrt();
            let grad = diff * (self.scale / (n * root));
            Ok((self.scale * root, grad))
        }
    }
}

fn check_same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "outputs {:?} vs reference {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// A dense feedforward network `f_theta`.
#[derive(Clone, Debug)]
pub struct Network {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    output_mode: OutputMode,
    params: Vec<f64>,
    slots: Vec<LayerSlot>,
    passes: PassCounter,
}

/// Number of parameters of a dense network with the given widths.
pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Network {
    /// Builds a network with uniform fan-in/fan-out initialization
    /// (`bound = sqrt(6 / (fan_in + fan_out))`) and zero biases.
    pub fn init(
        layer_dims: &[usize],
        activations: &[Activation],
        output_mode: OutputMode,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activations, output_mode)?;
        let mut rng = rng::stream(seed, Stream::Init);
        for slot in net.slots.clone() {
            let bound = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let end = slot.weight_offset + slot.fan_in * slot.fan_out;
            for w in &mut net.params[slot.weight_offset..end] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_dims: &[usize], activations: &[Activation], output_mode: OutputMode) -> Result<Self> {
        let n = param_count_checked(layer_dims, activations)?;
        Self::from_params(layer_dims, activations, output_mode, vec![0.0; n])
    }

    pub fn from_params(
        layer_dims: &[usize],
        activations: &[Activation],
        output_mode: OutputMode,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = param_count_checked(layer_dims, activations)?;
        if params.len() != expected {
            return Err(Error::shape(format!(
                "{} parameters supplied, architecture {:?} needs {}",
                params.len(),
                layer_dims,
                expected
            )));
        }
        let mut slots = Vec::with_capacity(layer_dims.len() - 1);
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            slots.push(LayerSlot {
                fan_in: w[0],
                fan_out: w[1],
                weight_offset: offset,
                bias_offset: offset + w[0] * w[1],
            });
            offset += w[0] * w[1] + w[1];
        }
        Ok(Network {
            layer_dims: layer_dims.to_vec(),
            activations: activations.to_vec(),
            output_mode,
            params,
            slots,
            passes: PassCounter::default(),
        })
    }

    /// Same architecture, different parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        let mut net = self.clone();
        net.params = params;
        net.passes = PassCounter::default();
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn output_mode(&self) -> OutputMode {
        self.output_mode
    }

    pub fn set_output_mode(&mut self, mode: OutputMode) {
        self.output_mode = mode;
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two layer widths")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn passes(&self) -> &PassCounter {
        &self.passes
    }

    fn weights(&self, slot: &LayerSlot) -> ArrayView2<'_, f64> {
        let end = slot.weight_offset + slot.fan_in * slot.fan_out;
        ArrayView2::from_shape((slot.fan_in, slot.fan_out), &self.params[slot.weight_offset..end])
            .expect("slot shape matches parameter layout")
    }

    fn bias(&self, slot: &LayerSlot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[slot.bias_offset..slot.bias_offset + slot.fan_out])
    }

    fn check_inputs(&self, inputs: ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input width {} does not match network input width {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Outputs on a batch (N x K).
    pub fn forward(&self, batch: &Batch) -> Result<Array2<f64>> {
        self.forward_inputs(batch.inputs())
    }

    pub fn forward_inputs(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_trace(inputs)?.outputs)
    }

    /// Forward pass keeping the intermediate activations.
    pub fn forward_trace(&self, inputs: ArrayView2<'_, f64>) -> Result<Trace> {
        self.check_inputs(inputs)?;
        self.passes.bump_forward();
        let n = inputs.nrows();
        let mut layer_outputs: Vec<Array2<f64>> = Vec::with_capacity(self.slots.len());
        for (l, slot) in self.slots.iter().enumerate() {
            let mut z = Array2::<f64>::zeros((n, slot.fan_out));
            z += &self.bias(slot);
            let prev = if l == 0 { inputs } else { layer_outputs[l - 1].view() };
            general_mat_mul(1.0, &prev, &self.weights(slot), 1.0, &mut z);
            self.activations[l].apply(&mut z);
            layer_outputs.push(z);
        }
        let logits = layer_outputs.last().expect("at least one layer");
        let outputs = match self.output_mode {
            OutputMode::Softmax => softmax_rows(logits.view()),
            OutputMode::Raw => logits.clone(),
        };
        Ok(Trace {
            layer_outputs,
            outputs,
        })
    }

    /// Backpropagates `d_logits` (gradient w.r.t. the final layer output)
    /// and hands each layer's input activations and pre-activation deltas to
    /// `sink`, from the last layer to the first.
    fn backprop_layers<F>(&self, inputs: ArrayView2<'_, f64>, trace: &Trace, d_logits: Array2<f64>, mut sink: F)
    where
        F: FnMut(usize, ArrayView2<'_, f64>, ArrayView2<'_, f64>),
    {
        self.passes.bump_backward();
        let last = self.slots.len() - 1;
        let mut delta = d_logits;
        self.activations[last].backprop(&mut delta, &trace.layer_outputs[last]);
        for l in (0..self.slots.len()).rev() {
            let layer_in = if l == 0 { inputs } else { trace.layer_outputs[l - 1].view() };
            sink(l, layer_in, delta.view());
            if l > 0 {
                let mut next = delta.dot(&self.weights(&self.slots[l]).t());
                self.activations[l - 1].backprop(&mut next, &trace.layer_outputs[l - 1]);
                delta = next;
            }
        }
    }

    /// Parameter gradient of a loss whose gradient w.r.t. the logits is `d_logits`.
    fn gradient_from_logits(&self, inputs: ArrayView2<'_, f64>, trace: &Trace, d_logits: Array2<f64>) -> GradientVector {
        let mut grad = vec![0.0; self.params.len()];
        let slots = &self.slots;
        self.backprop_layers(inputs, trace, d_logits, |l, layer_in, delta| {
            let slot = &slots[l];
            let (wpart, rest) = grad[slot.weight_offset..].split_at_mut(slot.fan_in * slot.fan_out);
            let mut gw = ArrayViewMut2::from_shape((slot.fan_in, slot.fan_out), wpart).expect("layout");
            general_mat_mul(1.0, &layer_in.t(), &delta, 0.0, &mut gw);
            let mut gb = ArrayViewMut1::from(&mut rest[..slot.fan_out]);
            gb.assign(&delta.sum_axis(Axis(0)));
        });
        GradientVector(grad)
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, GradientVector)> {
        let targets = batch
            .targets()
            .ok_or_else(|| Error::Usage("cross-entropy needs targets".into()))?;
        self.check_targets(targets)?;
        let inputs = batch.inputs();
        let trace = self.forward_trace(inputs)?;
        let (loss, probs) = cross_entropy(trace.layer_outputs.last().expect("layer").view(), targets);
        let n = targets.len() as f64;
        let mut d_logits = probs;
        for (i, &y) in targets.iter().enumerate() {
            d_logits[[i, y]] -= 1.0;
        }
        d_logits /= n;
        Ok((loss, self.gradient_from_logits(inputs, &trace, d_logits)))
    }

    /// Mean cross-entropy without a backward pass.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let targets = batch
            .targets()
            .ok_or_else(|| Error::Usage("cross-entropy needs targets".into()))?;
        self.check_targets(targets)?;
        let trace = self.forward_trace(batch.inputs())?;
        Ok(cross_entropy(trace.layer_outputs.last().expect("layer").view(), targets).0)
    }

    /// Exact gradient of an arbitrary differentiable function of the outputs.
    pub fn custom_loss_grad(&self, inputs: ArrayView2<'_, f64>, loss: &dyn OutputLoss) -> Result<(f64, GradientVector)> {
        let trace = self.forward_trace(inputs)?;
        self.custom_loss_grad_with_trace(inputs, &trace, loss)
    }

    /// As [`Network::custom_loss_grad`], reusing an existing forward trace.
    pub fn custom_loss_grad_with_trace(
        &self,
        inputs: ArrayView2<'_, f64>,
        trace: &Trace,
        loss: &dyn OutputLoss,
    ) -> Result<(f64, GradientVector)> {
        let (value, d_out) = loss.evaluate(trace.outputs.view())?;
        let d_logits = match self.output_mode {
            OutputMode::Softmax => softmax_backward(trace.outputs.view(), d_out.view()),
            OutputMode::Raw => d_out,
        };
        Ok((value, self.gradient_from_logits(inputs, trace, d_logits)))
    }

    /// Per-example cross-entropy gradients as a P x N matrix: column `i` is
    /// the gradient of example `i`'s loss alone.
    ///
    /// In sampled mode each example is relabelled with one draw from the
    /// network's predictive distribution; `rng` is required then.
    pub fn per_example_grads(&self, batch: &Batch, mode: FisherMode, rng: Option<&mut Rng>) -> Result<Array2<f64>> {
        Ok(self.per_example_grad_rows(batch, mode, rng)?.reversed_axes())
    }

    /// Per-example gradients stored one example per row (N x P).
    pub fn per_example_grad_rows(&self, batch: &Batch, mode: FisherMode, rng: Option<&mut Rng>) -> Result<Array2<f64>> {
        let inputs = batch.inputs();
        let trace = self.forward_trace(inputs)?;
        let d_logits = self.per_example_logit_grads(batch, &trace, mode, rng)?;
        let n = batch.len();
        let mut rows = Array2::<f64>::zeros((n, self.params.len()));
        let slots = &self.slots;
        self.backprop_layers(inputs, &trace, d_logits, |l, layer_in, delta| {
            let slot = &slots[l];
            for i in 0..n {
                let mut row = rows.row_mut(i);
                let row = row.as_slice_mut().expect("standard layout");
                let d = delta.row(i);
                for r in 0..slot.fan_in {
                    let a = layer_in[[i, r]];
                    let start = slot.weight_offset + r * slot.fan_out;
                    for (dst, &dv) in row[start..start + slot.fan_out].iter_mut().zip(d.iter()) {
                        *dst = a * dv;
                    }
                }
                for (dst, &dv) in row[slot.bias_offset..slot.bias_offset + slot.fan_out].iter_mut().zip(d.iter()) {
                    *dst = dv;
                }
            }
        });
        Ok(rows)
    }

    /// Coordinate-wise mean of squared per-example gradients, computed without
    /// materializing the per-example matrix.
    pub fn mean_squared_example_grads(&self, batch: &Batch, mode: FisherMode, rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        let inputs = batch.inputs();
        let trace = self.forward_trace(inputs)?;
        let d_logits = self.per_example_logit_grads(batch, &trace, mode, rng)?;
        let n = batch.len().max(1) as f64;
        let mut out = vec![0.0; self.params.len()];
        let slots = &self.slots;
        self.backprop_layers(inputs, &trace, d_logits, |l, layer_in, delta| {
            let slot = &slots[l];
            let a2 = layer_in.mapv(|v| v * v);
            let d2 = delta.mapv(|v| v * v);
            let (wpart, rest) = out[slot.weight_offset..].split_at_mut(slot.fan_in * slot.fan_out);
            let mut gw = ArrayViewMut2::from_shape((slot.fan_in, slot.fan_out), wpart).expect("layout");
            general_mat_mul(1.0 / n, &a2.t(), &d2, 0.0, &mut gw);
            let mut gb = ArrayViewMut1::from(&mut rest[..slot.fan_out]);
            gb.assign(&(d2.sum_axis(Axis(0)) / n));
        });
        Ok(out)
    }

    fn per_example_logit_grads(
        &self,
        batch: &Batch,
        trace: &Trace,
        mode: FisherMode,
        rng: Option<&mut Rng>,
    ) -> Result<Array2<f64>> {
        let probs = softmax_rows(trace.layer_outputs.last().expect("layer").view());
        let labels: Vec<usize> = match mode {
            FisherMode::Empirical => {
                let t = batch
                    .targets()
                    .ok_or_else(|| Error::Usage("empirical per-example gradients need targets".into()))?;
                self.check_targets(t)?;
                t.to_vec()
            }
            FisherMode::Sampled => {
                let rng = rng.ok_or_else(|| Error::Usage("sampled per-example gradients need an rng".into()))?;
                probs.rows().into_iter().map(|p| sample_categorical(p, rng)).collect()
            }
        };
        let mut d_logits = probs;
        for (i, &y) in labels.iter().enumerate() {
            d_logits[[i, y]] -= 1.0;
        }
        Ok(d_logits)
    }

    fn check_targets(&self, targets: &[usize]) -> Result<()> {
        let k = self.output_dim();
        if let Some(&bad) = targets.iter().find(|&&y| y >= k) {
            return Err(Error::shape(format!("label {bad} outside [0, {k})")));
        }
        Ok(())
    }

    /// Fraction of examples whose arg-max output equals the target.
    pub fn accuracy(&self, batch: &Batch) -> Result<f64> {
        let targets = batch
            .targets()
            .ok_or_else(|| Error::Usage("accuracy needs targets".into()))?;
        let out = self.forward(batch)?;
        let hits = out
            .rows()
            .into_iter()
            .zip(targets)
            .filter(|(row, &y)| argmax(*row) == y)
            .count();
        Ok(hits as f64 / targets.len().max(1) as f64)
    }
}

fn param_count_checked(layer_dims: &[usize], activations: &[Activation]) -> Result<usize> {
    if layer_dims.len() < 2 {
        return Err(Error::config("a network needs at least an input and an output width"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::config(format!("layer widths must be positive: {layer_dims:?}")));
    }
    if activations.len() != layer_dims.len() - 1 {
        return Err(Error::config(format!(
            "{} activations given for {} layers",
            activations.len(),
            layer_dims.len() - 1
        )));
    }
    Ok(param_count(layer_dims))
}

pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(p: ArrayView1<'_, f64>, rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Given `p = softmax(z)` and `g = dL/dp`, returns `dL/dz`.
fn softmax_backward(p: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(p.raw_dim());
    for ((pr, gr), mut or) in p.rows().into_iter().zip(g.rows()).zip(out.rows_mut()) {
        let dot = pr.dot(&gr);
        or.assign(&(&pr * &(&gr - dot)));
    }
    out
}

/// Mean cross-entropy of `targets` under softmax(`logits`), plus the
/// softmax probabilities.
fn cross_entropy(logits: ArrayView2<'_, f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(targets) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    (total / targets.len().max(1) as f64, softmax_rows(logits))
}

/// Copies the rows `idx` of `inputs` (and the matching labels) into a batch.
pub fn gather_batch(inputs: ArrayView2<'_, f64>, labels: &[usize], idx: &[usize]) -> Batch {
    let x = inputs.select(Axis(0), idx);
    let y = idx.iter().map(|&i| labels[i]).collect();
    Batch {
        inputs: x,
        targets: Some(y),
    }
}
