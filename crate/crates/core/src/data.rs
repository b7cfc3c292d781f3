//! Datasets: IDX ingestion and small synthetic substitutes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gather_batch, Batch};
use crate::rng::{self, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard MNIST file names below a dataset root.
pub const MNIST_TRAIN: (&str, &str) = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
pub const MNIST_TEST: (&str, &str) = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: Split, inputs: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(format!("{} inputs but {} labels", inputs.nrows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Validation(format!("label {bad} outside {classes} classes")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite input value".into()));
        }
        Ok(Dataset {
            name: name.into(),
            split,
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn batch(&self) -> Batch {
        Batch::new(self.inputs.clone(), self.labels.clone()).expect("lengths checked at construction")
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        gather_batch(self.inputs.view(), &self.labels, idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let b = self.gather(idx);
        Dataset {
            name: self.name.clone(),
            split: self.split,
            inputs: b.inputs().to_owned(),
            labels: b.targets().expect("labeled").to_vec(),
            classes: self.classes,
        }
    }

    /// The first `n` examples of a seeded shuffle (all of them if `n >= len`).
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut r = rng::stream(seed, Stream::Subsample);
        let idx: Vec<usize> = rand::seq::index::sample(&mut r, self.len(), n).into_vec();
        self.subset(&idx)
    }

    /// Concatenates two datasets with the same input width and classes.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() || self.classes != other.classes {
            return Err(Error::shape("cannot concatenate datasets of different shape"));
        }
        let inputs = ndarray::concatenate(ndarray::Axis(0), &[self.inputs.view(), other.inputs.view()])
            .map_err(|e| Error::shape(e.to_string()))?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(self.name.clone(), self.split, inputs, labels, self.classes)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    let b = bytes.get(offset..offset + 4).ok_or(Error::Truncated {
        what,
        needed: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(b.try_into().expect("four bytes")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &'static str) -> Result<()> {
    let found = read_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::BadMagic { what, expected, found });
    }
    Ok(())
}

/// Parses an IDX image file: `u8` pixels in `[N, rows, cols]`, flattened row-major and divided by 255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>> {
    const WHAT: &str = "IDX image file";
    check_magic(bytes, IDX_IMAGES_MAGIC, WHAT)?;
    let n = read_u32(bytes, 4, WHAT)? as usize;
    let rows = read_u32(bytes, 8, WHAT)? as usize;
    let cols = read_u32(bytes, 12, WHAT)? as usize;
    let d = rows * cols;
    let needed = 16 + n * d;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: WHAT,
            needed,
            found: bytes.len(),
        });
    }
    let pixels = bytes[16..needed].iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(Array2::from_shape_vec((n, d), pixels).expect("size computed above"))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    const WHAT: &str = "IDX label file";
    check_magic(bytes, IDX_LABELS_MAGIC, WHAT)?;
    let n = read_u32(bytes, 4, WHAT)? as usize;
    let needed = 8 + n;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: WHAT,
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&l| usize::from(l)).collect())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

/// Loads an image/label IDX pair. Classes are `max label + 1`, at least 10.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let inputs = parse_idx_images(&read_all(images_path)?)?;
    let labels = parse_idx_labels(&read_all(labels_path)?)?;
    if inputs.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            images: inputs.nrows(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    let name = images_path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    Dataset::new(name, split, inputs, labels, classes)
}

/// Loads the train and test splits from a directory holding the standard MNIST file names.
pub fn load_mnist_dir(root: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(&root.join(MNIST_TRAIN.0), &root.join(MNIST_TRAIN.1), Split::Train)?;
    let test = load_idx(&root.join(MNIST_TEST.0), &root.join(MNIST_TEST.1), Split::Test)?;
    Ok((train, test))
}

/// Serializes images as IDX, quantizing each value to `round(v * 255)`.
/// `rows * cols` must equal the input width.
pub fn write_idx_images<W: Write>(mut out: W, inputs: ArrayView2<'_, f64>, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != inputs.ncols() {
        return Err(Error::shape(format!("{rows}x{cols} images for width {}", inputs.ncols())));
    }
    for v in [IDX_IMAGES_MAGIC, inputs.nrows() as u32, rows as u32, cols as u32] {
        out.write_all(&v.to_be_bytes())?;
    }
    let bytes: Vec<u8> = inputs.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut out: W, labels: &[usize]) -> Result<()> {
    out.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    let bytes = labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::Validation(format!("label {l} does not fit in a byte"))))
        .collect::<Result<Vec<u8>>>()?;
    out.write_all(&bytes)?;
    Ok(())
}

/// Writes `dataset` as an IDX pair; images are stored as a single row when
/// the width is not a perfect square.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let d = dataset.dim();
    let side = (d as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == d { (side, side) } else { (1, d) };
    let mut img = BufWriter::new(File::create(images_path)?);
    write_idx_images(&mut img, dataset.inputs.view(), rows, cols)?;
    img.flush()?;
    let mut lab = BufWriter::new(File::create(labels_path)?);
    write_idx_labels(&mut lab, &dataset.labels)?;
    lab.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Two-dimensional Gaussian clusters on a circle.
    Blobs,
    /// 8x8 noisy class templates, for permuted-task experiments.
    PermutableGrid,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SynthKind::Blobs),
            "permutable-grid" => Ok(SynthKind::PermutableGrid),
            other => Err(Error::config(format!("unknown synthetic dataset kind {other:?}"))),
        }
    }
}

pub const GRID_SIDE: usize = 8;

/// Seed of the class templates; fixed so that every run shares the same task.
const TEMPLATE_SEED: u64 = 0x5eed;

fn balanced_labels(n: usize, classes: usize, r: &mut rng::Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(r);
    labels
}

fn grid_templates(classes: usize) -> Array2<f64> {
    let mut r = rng::stream(TEMPLATE_SEED, Stream::Synth);
    Array2::from_shape_fn((classes, GRID_SIDE * GRID_SIDE), |_| if r.random::<f64>() < 0.35 { 1.0 } else { 0.0 })
}

pub fn synth_dataset(kind: SynthKind, n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes {
        return Err(Error::config(format!("synthetic dataset needs n >= classes >= 2 (n={n}, classes={classes})")));
    }
    let mut r = rng::stream(seed, Stream::Synth);
    let labels = balanced_labels(n, classes, &mut r);
    let inputs = match kind {
        SynthKind::Blobs => {
            // Neighbouring centers are 0.6 sin(pi/K) apart; sigma is a quarter of
            // that gap, so roughly 95% of points fall on their own side.
            let gap = 0.6 * (std::f64::consts::PI / classes as f64).sin();
            let noise = Normal::new(0.0, gap / 4.0).expect("positive sigma");
            let mut x = Array2::zeros((n, 2));
            for (i, &c) in labels.iter().enumerate() {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                x[[i, 0]] = (0.5 + 0.3 * angle.cos() + noise.sample(&mut r)).clamp(0.0, 1.0);
                x[[i, 1]] = (0.5 + 0.3 * angle.sin() + noise.sample(&mut r)).clamp(0.0, 1.0);
            }
            x
        }
        SynthKind::PermutableGrid => {
            let templates = grid_templates(classes);
            let d = GRID_SIDE * GRID_SIDE;
            let mut x = Array2::zeros((n, d));
            for (i, &c) in labels.iter().enumerate() {
                for j in 0..d {
                    let on = templates[[c, j]] > 0.5;
                    let flip = r.random::<f64>() < 0.1;
                    let base = if on != flip { 0.8 } else { 0.0 };
                    x[[i, j]] = base + 0.2 * r.random::<f64>();
                }
            }
            x
        }
    };
    let name = match kind {
        SynthKind::Blobs => "blobs",
        SynthKind::PermutableGrid => "permutable-grid",
    };
    Dataset::new(name, Split::Train, inputs, labels, classes)
}
