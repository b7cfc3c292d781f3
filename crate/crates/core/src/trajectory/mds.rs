use ndarray::{Array1, Array2, Axis};

use super::DistanceMatrix;
use crate::error::{Error, Result};

/// Coordinates recovered from a distance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// M x dims, centered at the origin.
    pub points: Array2<f64>,
    /// The eigenvalues used, largest first, after clamping at zero.
    pub eigenvalues: Vec<f64>,
    /// Kruskal stress-1 of the embedded distances against the input.
    pub stress: f64,
}

impl Embedding {
    /// Euclidean distances between the embedded points.
    pub fn pairwise_distances(&self) -> Array2<f64> {
        let m = self.points.nrows();
        Array2::from_shape_fn((m, m), |(i, j)| {
            let d = &self.points.row(i) - &self.points.row(j);
            d.dot(&d).sqrt()
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, labels: &[super::SnapshotLabel], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["run".to_string(), "epoch".to_string(), "step".to_string()];
        header.extend((0..self.points.ncols()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (label, row) in labels.iter().zip(self.points.rows()) {
            let mut rec = vec![label.run.to_string(), label.epoch.to_string(), label.step.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns. Each eigenvector's largest-magnitude component is
/// made positive so the result is deterministic.
pub fn symmetric_eigen(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                a[[p, p]] -= t * apq;
                a[[q, q]] += t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[[r, p]];
                        let arq = a[[r, q]];
                        let new_rp = arp - s * (arq + tau * arp);
                        let new_rq = arq + s * (arp - tau * arq);
                        a[[r, p]] = new_rp;
                        a[[p, r]] = new_rp;
                        a[[r, q]] = new_rq;
                        a[[q, r]] = new_rq;
                    }
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = vrp - s * (vrq + tau * vrp);
                    v[[r, q]] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = v.select(Axis(1), &order);
    for mut col in vectors.columns_mut() {
        let lead = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    (values, vectors)
}

fn validate(d: &DistanceMatrix) -> Result<()> {
    let m = d.values.nrows();
    if d.values.ncols() != m {
        return Err(Error::Validation(format!("distance matrix is {:?}, not square", d.values.dim())));
    }
    let scale = d.values.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..m {
        if d.values[[i, i]].abs() > 1e-12 * scale {
            return Err(Error::Validation(format!("nonzero diagonal entry at {i}")));
        }
        for j in (i + 1)..m {
            let (a, b) = (d.values[[i, j]], d.values[[j, i]]);
            if !a.is_finite() || a < 0.0 {
                return Err(Error::Validation(format!("invalid distance {a} at ({i}, {j})")));
            }
            if (a - b).abs() > 1e-12 * scale {
                return Err(Error::Validation(format!("matrix not symmetric at ({i}, {j}): {a} vs {b}")));
            }
        }
    }
    Ok(())
}

/// Classical (Torgerson) multidimensional scaling.
///
/// Double-centers the squared distances, `B = -1/2 J D^2 J`, and uses the top
/// `dims` eigenpairs of `B` (negative eigenvalues clamped to zero) as
/// coordinates.
pub fn classical_mds(d: &DistanceMatrix, dims: usize) -> Result<Embedding> {
    validate(d)?;
    let m = d.values.nrows();
    if dims == 0 || m < dims + 1 {
        return Err(Error::shape(format!("{m} points cannot be embedded in {dims} dimensions")));
    }
    let sq = d.values.mapv(|x| x * x);
    let row_mean: Array1<f64> = sq.mean_axis(Axis(1)).expect("nonempty");
    let col_mean: Array1<f64> = sq.mean_axis(Axis(0)).expect("nonempty");
    let grand = sq.mean().expect("nonempty");
    let mut b = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            b[[i, j]] = -0.5 * (sq[[i, j]] - row_mean[i] - col_mean[j] + grand);
        }
    }
    // symmetrize away rounding from the centering
    let b = (&b + &b.t()) * 0.5;

    let (values, vectors) = symmetric_eigen(&b);
    let eigenvalues: Vec<f64> = values.iter().take(dims).map(|&l| l.max(0.0)).collect();
    let mut points = Array2::<f64>::zeros((m, dims));
    for (c, &lambda) in eigenvalues.iter().enumerate() {
        let root = lambda.sqrt();
        for i in 0..m {
            points[[i, c]] = vectors[[i, c]] * root;
        }
    }
    let centroid = points.mean_axis(Axis(0)).expect("nonempty");
    points -= &centroid;

    let mut emb = Embedding {
        points,
        eigenvalues,
        stress: 0.0,
    };
    let recovered = emb.pairwise_distances();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..m {
        for j in (i + 1)..m {
            num += (d.values[[i, j]] - recovered[[i, j]]).powi(2);
            den += d.values[[i, j]].powi(2);
        }
    }
    emb.stress = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    Ok(emb)
}
