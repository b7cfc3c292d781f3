//! Training small dense networks while measuring and constraining how far
//! they move in L2 function space.

// `!(x >= 0.0)` is how validation rejects NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continual;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod trajectory;

pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use nn::{Activation, Batch, FisherMode, GradientVector, Network, OutputMode};
