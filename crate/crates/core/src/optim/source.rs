use ndarray::ArrayView2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{gather_batch, Batch};
use crate::rng::Rng;

/// Supplies batches drawn from a data distribution, e.g. the validation
/// batches used by HCGD.
pub trait BatchSource {
    fn next_batch(&mut self) -> Result<Batch>;
}

/// Always returns the same batch.
pub struct FixedSource(pub Batch);

impl BatchSource for FixedSource {
    fn next_batch(&mut self) -> Result<Batch> {
        Ok(self.0.clone())
    }
}

/// Walks a shuffled copy of a dataset in fixed-size batches and reshuffles
/// whenever it runs out.
pub struct ShuffledSource<'a> {
    inputs: ArrayView2<'a, f64>,
    labels: &'a [usize],
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl<'a> ShuffledSource<'a> {
    pub fn new(inputs: ArrayView2<'a, f64>, labels: &'a [usize], batch_size: usize, rng: Rng) -> Result<Self> {
        if batch_size == 0 || batch_size > inputs.nrows() {
            return Err(Error::config(format!(
                "batch size {batch_size} invalid for {} examples",
                inputs.nrows()
            )));
        }
        let mut src = ShuffledSource {
            inputs,
            labels,
            batch_size,
            order: (0..inputs.nrows()).collect(),
            cursor: 0,
            rng,
        };
        src.order.shuffle(&mut src.rng);
        Ok(src)
    }
}

impl BatchSource for ShuffledSource<'_> {
    fn next_batch(&mut self) -> Result<Batch> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let idx = &self.order[self.cursor..self.cursor + self.batch_size];
        self.cursor += self.batch_size;
        Ok(gather_batch(self.inputs, self.labels, idx))
    }
}
