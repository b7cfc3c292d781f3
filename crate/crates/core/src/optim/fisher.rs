use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{Batch, FisherMode, Network};
use crate::rng::Rng;

/// Anything that can multiply a parameter-space vector by a Fisher matrix.
pub trait FisherProduct {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

/// Fisher information from per-example gradients, applied matrix-free as
/// `F v = G (G^T v) / N`. `G` (P x N) is stored transposed, one example per
/// row; `G G^T` is never formed.
#[derive(Clone, Debug)]
pub struct FisherOperator {
    rows: Array2<f64>,
    mode: FisherMode,
}

impl FisherOperator {
    /// From a P x N matrix whose columns are per-example gradients.
    pub fn from_columns(g: ArrayView2<'_, f64>, mode: FisherMode) -> Result<Self> {
        if g.ncols() == 0 {
            return Err(Error::shape("Fisher operator needs at least one example"));
        }
        Ok(FisherOperator {
            rows: g.t().to_owned(),
            mode,
        })
    }

    pub fn from_network(net: &Network, batch: &Batch, mode: FisherMode, rng: Option<&mut Rng>) -> Result<Self> {
        let rows = net.per_example_grad_rows(batch, mode, rng)?;
        if rows.nrows() == 0 {
            return Err(Error::shape("Fisher operator needs at least one example"));
        }
        Ok(FisherOperator { rows, mode })
    }

    pub fn mode(&self) -> FisherMode {
        self.mode
    }

    pub fn num_examples(&self) -> usize {
        self.rows.nrows()
    }

    /// The per-example gradient matrix `G` (P x N).
    pub fn g(&self) -> ArrayView2<'_, f64> {
        self.rows.t()
    }

    /// `G G^T / N` as a dense matrix. Only for small problems and tests.
    pub fn to_dense(&self) -> Array2<f64> {
        self.rows.t().dot(&self.rows) / self.num_examples() as f64
    }
}

impl FisherProduct for FisherOperator {
    fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(format!(
                "vector of length {} for a {}-parameter Fisher operator",
                v.len(),
                self.dim()
            )));
        }
        let projected: Array1<f64> = self.rows.dot(&ArrayView1::from(v));
        let out = self.rows.t().dot(&projected) / self.num_examples() as f64;
        Ok(out.to_vec())
    }
}
