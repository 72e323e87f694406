//! Synthetic labelled datasets, the `DLDS` binary format, and splitting.
//!
//! `DLDS` layout (little-endian):
//!
//! ```text
//! "DLDS" | version u32 | m u64 | input_dim u64 | K u64
//!        | m * input_dim f64 (row-major) | m u32 class indices | crc32 u32
//! ```
//!
//! The trailing CRC32 covers every byte before it.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"DLDS";
pub const DATASET_VERSION: u32 = 1;

/// Inputs with class labels. Labels are stored as class indices; the one-hot
/// view is available through [`LabeledBatch::one_hot`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Tensor<f64>,
    pub labels: Vec<u32>,
    pub classes: usize,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor<f64>, labels: Vec<u32>, classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(Error::shape("inputs must be [m, input_dim] with one label per row"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(LabeledBatch { inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.row_len()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledBatch {
        LabeledBatch {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * self.classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[i * self.classes + y as usize] = 1.0;
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Full,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub examples: LabeledBatch,
    pub split: Split,
    /// Generator name and seed, or the file the data was read from.
    pub provenance: String,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.examples.classes
    }

    pub fn input_dim(&self) -> usize {
        self.examples.input_dim()
    }
}

fn balanced_labels(m: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut labels: Vec<u32> = (0..m).map(|i| (i % classes) as u32).collect();
    labels.shuffle(rng);
    labels
}

/// `K` unit-variance isotropic Gaussian clusters whose means lie on a seeded
/// random sphere of radius `separation`.
pub fn gen_blobs(
    seed: u64,
    m: usize,
    classes: usize,
    input_dim: usize,
    separation: f64,
) -> Result<LabeledDataset> {
    if classes < 2 || m < classes || input_dim == 0 {
        return Err(Error::invalid("blobs need K >= 2, m >= K and input_dim >= 1"));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::invalid("separation must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let dir: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        means.push(dir.iter().map(|v| v / n * separation).collect::<Vec<f64>>());
    }
    let labels = balanced_labels(m, classes, &mut rng);
    let mut data = Vec::with_capacity(m * input_dim);
    for &y in &labels {
        for &mu in &means[y as usize] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + z);
        }
    }
    Ok(LabeledDataset {
        examples: LabeledBatch::new(Tensor::new(vec![m, input_dim], data)?, labels, classes)?,
        split: Split::Full,
        provenance: format!("blobs(seed={seed}, separation={separation})"),
    })
}

/// Interleaved 2-D spiral arms, one per class, with Gaussian noise of
/// standard deviation `noise` added to each coordinate.
pub fn gen_spirals(seed: u64, m: usize, classes: usize, noise: f64) -> Result<LabeledDataset> {
    if classes < 2 || m < classes {
        return Err(Error::invalid("spirals need K >= 2 and m >= K"));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::invalid("noise must be finite and non-negative"));
    }
    const TURNS: f64 = 1.75;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = balanced_labels(m, classes, &mut rng);
    let mut data = Vec::with_capacity(m * 2);
    for &y in &labels {
        // sqrt keeps point density roughly uniform along the arm
        let t: f64 = rng.random::<f64>().sqrt();
        let theta = t * TURNS * std::f64::consts::TAU
            + y as f64 * std::f64::consts::TAU / classes as f64;
        let zx: f64 = StandardNormal.sample(&mut rng);
        let zy: f64 = StandardNormal.sample(&mut rng);
        data.push(t * theta.cos() + noise * zx);
        data.push(t * theta.sin() + noise * zy);
    }
    Ok(LabeledDataset {
        examples: LabeledBatch::new(Tensor::new(vec![m, 2], data)?, labels, classes)?,
        split: Split::Full,
        provenance: format!("spirals(seed={seed}, noise={noise})"),
    })
}

/// Splits into disjoint train and test sets covering all examples. The first
/// `m - n_test` entries of a seeded permutation become the training set.
pub fn train_test_split(
    ds: &LabeledDataset,
    n_test: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if n_test == 0 || n_test >= ds.len() {
        return Err(Error::invalid("test size must be in 1..m"));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (tr, te) = idx.split_at(ds.len() - n_test);
    let make = |ix: &[usize], split| LabeledDataset {
        examples: ds.examples.select(ix),
        split,
        provenance: format!("{} [{split} split seed={seed}]", ds.provenance),
    };
    Ok((make(tr, Split::Train), make(te, Split::Test)))
}

/// Class-stratified subsample of `size` indices (round-robin over classes,
/// each class in seeded random order), returned sorted.
pub fn stratified_subsample(batch: &LabeledBatch, size: usize, seed: u64) -> Vec<usize> {
    let size = size.min(batch.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); batch.classes];
    for (i, &y) in batch.labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    for c in &mut by_class {
        c.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(size);
    let mut round = 0;
    while out.len() < size {
        for c in &by_class {
            if out.len() < size && round < c.len() {
                out.push(c[round]);
            }
        }
        round += 1;
    }
    out.sort_unstable();
    out
}

pub fn encode_dataset(batch: &LabeledBatch) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u64(batch.len() as u64);
    w.u64(batch.input_dim() as u64);
    w.u64(batch.classes as u64);
    for &v in batch.inputs.data() {
        w.f64(v);
    }
    for &y in &batch.labels {
        w.u32(y);
    }
    w.finish_with_crc()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledBatch> {
    let mut r = Reader::with_crc(bytes, DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Version { expected: DATASET_VERSION, found: version });
    }
    let m = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let classes = r.u64()? as usize;
    let count = m
        .checked_mul(dim)
        .ok_or_else(|| Error::Truncated("dataset dimensions overflow".into()))?;
    let inputs = r.f64_vec(count)?;
    let labels = r.u32_vec(m)?;
    r.finish()?;
    LabeledBatch::new(Tensor::new(vec![m, dim], inputs)?, labels, classes)
}

pub fn save_dataset(batch: &LabeledBatch, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(batch))?;
    Ok(())
}

/// Loads a `DLDS` file. The split tag is supplied by the caller and the
/// provenance records the path.
pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    Ok(LabeledDataset {
        examples: decode_dataset(&bytes)?,
        split,
        provenance: format!("file:{}", path.display()),
    })
}
