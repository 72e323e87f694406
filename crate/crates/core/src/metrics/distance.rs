use crate::autodiff::forward;
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::loss::argmax_rows;
use crate::model::{activation_pattern, ActivationPattern, NetworkSpec};
use crate::params::{norm, ParamVector};
use crate::tensor::Tensor;

/// Normalized Hamming distance between activation patterns, one value per
/// hidden layer.
pub fn relu_distance_per_layer(spec: &NetworkSpec, a: &ParamVector, b: &ParamVector, xs: &Tensor<f64>) -> Result<Vec<f64>> {
    let pa = activation_pattern(spec, a, xs)?;
    let pb = activation_pattern(spec, b, xs)?;
    Ok(pa
        .bits
        .iter()
        .zip(&pb.bits)
        .map(|(x, y)| x.iter().zip(y).filter(|(p, q)| p != q).count() as f64 / x.len() as f64)
        .collect())
}

/// Normalized Hamming distance over all hidden-unit bits.
pub fn relu_distance(spec: &NetworkSpec, a: &ParamVector, b: &ParamVector, xs: &Tensor<f64>) -> Result<f64> {
    pattern_distance(&activation_pattern(spec, a, xs)?, &activation_pattern(spec, b, xs)?)
}

/// [`relu_distance`] on precomputed patterns.
pub fn pattern_distance(pa: &ActivationPattern, pb: &ActivationPattern) -> Result<f64> {
    if pa.units != pb.units || pa.examples != pb.examples {
        return Err(Error::shape("activation patterns differ in shape"));
    }
    let total = pa.total_bits();
    if total == 0 {
        return Err(Error::invalid("network has no hidden units"));
    }
    let diff: usize = pa
        .bits
        .iter()
        .zip(&pb.bits)
        .map(|(x, y)| x.iter().zip(y).filter(|(p, q)| p != q).count())
        .sum();
    Ok(diff as f64 / total as f64)
}

/// Expected disagreement of two classifiers with error rates `p` and `q`
/// whose errors are independent and spread uniformly over wrong classes.
pub fn disagreement_normalizer(p: f64, q: f64, classes: usize) -> f64 {
    let k = classes as f64;
    let both = if classes > 1 { p * q * (k - 2.0) / (k - 1.0) } else { 0.0 };
    p * (1.0 - q) + q * (1.0 - p) + both
}

/// Disagreement fraction divided by [`disagreement_normalizer`].
pub fn function_distance_from_predictions(a: &[u32], b: &[u32], labels: &[u32], classes: usize) -> Result<f64> {
    if a.len() != labels.len() || b.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape("prediction and label counts differ"));
    }
    let m = labels.len() as f64;
    let err = |p: &[u32]| p.iter().zip(labels).filter(|(x, y)| x != y).count() as f64 / m;
    let disagree = a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / m;
    let z = disagreement_normalizer(err(a), err(b), classes);
    if z == 0.0 {
        return if disagree == 0.0 { Ok(0.0) } else { Err(Error::DegenerateNormalizer) };
    }
    Ok(disagree / z)
}

pub fn function_distance(spec: &NetworkSpec, a: &ParamVector, b: &ParamVector, test: &LabeledBatch) -> Result<f64> {
    let k = spec.classes;
    let pa = argmax_rows(forward(spec, a, &test.inputs)?.data(), k);
    let pb = argmax_rows(forward(spec, b, &test.inputs)?.data(), k);
    function_distance_from_predictions(&pa, &pb, &test.labels, k)
}

/// Euclidean distance in weight space.
pub fn weight_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("weight vectors differ in length"));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(norm(&diff))
}
