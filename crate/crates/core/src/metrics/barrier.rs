use serde::Serialize;

use crate::autodiff::evaluate;
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::NetworkSpec;
use crate::params::ParamVector;

pub const DEFAULT_ALPHAS: usize = 25;

/// `n` evenly spaced points covering `[0, 1]` inclusive.
pub fn alpha_grid(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("alpha grid needs at least two points"));
    }
    Ok((0..n).map(|i| i as f64 / (n - 1) as f64).collect())
}

/// `alpha a + (1 - alpha) b`.
pub fn interpolate(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect()
}

/// Largest value along the path minus the mean of the endpoint values.
pub fn barrier_of(values: &[f64]) -> f64 {
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    peak - 0.5 * (values[0] + values[values.len() - 1])
}

/// Evaluates `f` along the segment from `b` (alpha 0) to `a` (alpha 1).
pub fn path_profile<F>(a: &[f64], b: &[f64], n_alpha: usize, mut f: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if a.len() != b.len() {
        return Err(Error::shape("endpoints differ in length"));
    }
    let alphas = alpha_grid(n_alpha)?;
    let values = alphas.iter().map(|&t| f(&interpolate(a, b, t))).collect::<Result<Vec<_>>>()?;
    Ok((alphas, values))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Barriers {
    pub train_loss: f64,
    pub train_err: f64,
    /// Headline barrier.
    pub test_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BarrierProfile {
    pub alphas: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub train_err: Vec<f64>,
    pub test_err: Vec<f64>,
    pub barriers: Barriers,
}

pub fn error_barrier(
    spec: &NetworkSpec,
    params_a: &ParamVector,
    params_b: &ParamVector,
    train: &LabeledBatch,
    test: &LabeledBatch,
    loss: LossKind,
    n_alpha: usize,
) -> Result<BarrierProfile> {
    if params_a.layout() != params_b.layout() {
        return Err(Error::Layout("endpoints have different architectures".into()));
    }
    let alphas = alpha_grid(n_alpha)?;
    let (mut tl, mut te, mut se) = (Vec::new(), Vec::new(), Vec::new());
    for &t in &alphas {
        let w = params_a.with_values(interpolate(params_a.values(), params_b.values(), t))?;
        let tr = evaluate(spec, &w, train, loss)?;
        let ts = evaluate(spec, &w, test, loss)?;
        tl.push(tr.loss);
        te.push(tr.error);
        se.push(ts.error);
    }
    let barriers = Barriers { train_loss: barrier_of(&tl), train_err: barrier_of(&te), test_err: barrier_of(&se) };
    Ok(BarrierProfile { alphas, train_loss: tl, train_err: te, test_err: se, barriers })
}
