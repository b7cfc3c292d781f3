//! Fixtures shared by the benchmarks.

use funcspace_core::rng::{self, Stream};
use funcspace_core::{Activation, Batch, Network, OutputMode};
use rand::Rng as _;

/// Uniform inputs in `[0, 1)` with cycling labels.
pub fn random_batch(n: usize, d: usize, classes: usize, seed: u64) -> Batch {
    let mut r = rng::stream(seed, Stream::Synth);
    let x = ndarray::Array2::from_shape_fn((n, d), |_| r.random::<f64>());
    Batch::new(x, (0..n).map(|i| i % classes).collect()).expect("matching lengths")
}

/// ReLU MLP with the given layer widths.
pub fn mlp(dims: &[usize], seed: u64) -> Network {
    let mut acts = vec![Activation::Relu; dims.len() - 2];
    acts.push(Activation::Identity);
    Network::init(dims, &acts, OutputMode::Softmax, seed).expect("valid architecture")
}
