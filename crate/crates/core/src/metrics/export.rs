//! `DLPR` prediction files (little-endian):
//!
//! ```text
//! "DLPR" | m u64 | K u64 | m * K f64 softmax probabilities | crc32 u32
//! ```

use std::path::Path;

use crate::autodiff::forward;
use crate::binio::{Reader, Writer};
use crate::data::LabeledBatch;
use crate::error::Result;
use crate::loss::softmax_rows;
use crate::model::NetworkSpec;
use crate::params::ParamVector;
use crate::tensor::Tensor;

pub const PREDICTIONS_MAGIC: [u8; 4] = *b"DLPR";

pub fn encode_predictions(probs: &Tensor<f64>) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&PREDICTIONS_MAGIC);
    w.u64(probs.rows() as u64);
    w.u64(probs.row_len() as u64);
    w.f64_slice(probs.data());
    w.finish_with_crc()
}

pub fn decode_predictions(bytes: &[u8]) -> Result<Tensor<f64>> {
    let mut r = Reader::with_crc(bytes, PREDICTIONS_MAGIC)?;
    let m = r.u64()? as usize;
    let k = r.u64()? as usize;
    let data = r.f64_vec(m.saturating_mul(k))?;
    r.finish()?;
    Tensor::new(vec![m, k], data)
}

/// Softmax probabilities of the network on `test`, written to `path`.
pub fn export_predictions(spec: &NetworkSpec, params: &ParamVector, test: &LabeledBatch, path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let logits = forward(spec, params, &test.inputs)?;
    let probs = Tensor::new(vec![test.len(), spec.classes], softmax_rows(logits.data(), spec.classes))?;
    std::fs::write(path, encode_predictions(&probs))?;
    Ok(probs)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    decode_predictions(&std::fs::read(path)?)
}
