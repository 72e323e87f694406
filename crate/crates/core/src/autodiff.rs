//! Network-level differentiation: logits, loss gradients, per-logit
//! parameter Jacobians and Hessian-vector products.

use serde::{Deserialize, Serialize};

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::loss::{argmax_rows, LossKind};
use crate::model::{check_params, record_forward, ActivationPattern, ForwardTrace, Gating, NetworkSpec};
use crate::params::{norm, Layout, ParamVector};
use crate::tape::{Gradients, Tape};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" | "64" => Ok(Precision::F64),
            "f32" | "32" => Ok(Precision::F32),
            other => Err(Error::invalid(format!("unknown precision `{other}`"))),
        }
    }
}

/// Logits `f_w(x_i)` for every row of `xs`.
pub fn forward(spec: &NetworkSpec, params: &ParamVector, xs: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut tape = Tape::<f64>::new();
    let trace = record_forward(spec, &mut tape, params, xs, false, Gating::Relu)?;
    let out = tape.value(trace.logits).clone();
    out.ensure_finite("logits")?;
    Ok(out)
}

/// Forward pass with every hidden unit gated by a fixed pattern bit instead
/// of the ReLU. With the network's own pattern this reproduces [`forward`].
pub fn forward_masked(
    spec: &NetworkSpec,
    params: &ParamVector,
    xs: &Tensor<f64>,
    pattern: &ActivationPattern,
) -> Result<Tensor<f64>> {
    if pattern.examples != xs.rows() {
        return Err(Error::shape("pattern was taken on a different number of examples"));
    }
    let mut tape = Tape::<f64>::new();
    let trace = record_forward(spec, &mut tape, params, xs, false, Gating::Fixed(&pattern.bits))?;
    Ok(tape.value(trace.logits).clone())
}

fn param_grads<T: Real>(grads: &Gradients<T>, trace: &ForwardTrace, layout: &Layout) -> Vec<f64> {
    let mut out = vec![0.0; layout.total()];
    for (entry, &node) in layout.entries().iter().zip(&trace.params) {
        if let Some(g) = grads.get(node) {
            for (o, &v) in out[entry.range()].iter_mut().zip(g) {
                *o = v.as_f64();
            }
        }
    }
    out
}

fn loss_and_grad_t<T: Real>(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &LabeledBatch,
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut tape = Tape::<T>::new();
    let trace = record_forward(spec, &mut tape, params, &batch.inputs, true, Gating::Relu)?;
    let l = tape.loss(trace.logits, &batch.labels, loss)?;
    let value = tape.value(l).data()[0].as_f64();
    let grads = tape.backward(l, &[T::one()])?;
    Ok((value, param_grads(&grads, &trace, params.layout())))
}

/// Mean loss over the batch and its gradient with respect to all parameters.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &LabeledBatch,
    loss: LossKind,
) -> Result<(f64, ParamVector)> {
    let (value, grad) = loss_and_grad_t::<f64>(spec, params, batch, loss)?;
    Ok((value, params.with_values(grad)?))
}

/// Like [`loss_and_grad`] but runs the tape at the requested precision. The
/// returned loss may be non-finite; callers decide how to treat divergence.
pub fn loss_and_grad_at(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &LabeledBatch,
    loss: LossKind,
    precision: Precision,
) -> Result<(f64, Vec<f64>)> {
    match precision {
        Precision::F64 => loss_and_grad_t::<f64>(spec, params, batch, loss),
        Precision::F32 => loss_and_grad_t::<f32>(spec, params, batch, loss),
    }
}

/// `K x d` Jacobian of the logits at a single input; row `k` is
/// `grad_w f_w(x)_k`.
pub fn logit_jacobian(spec: &NetworkSpec, params: &ParamVector, x: &[f64]) -> Result<Tensor<f64>> {
    let xs = Tensor::new(vec![1, x.len()], x.to_vec())?;
    let mut tape = Tape::<f64>::new();
    let trace = record_forward(spec, &mut tape, params, &xs, true, Gating::Relu)?;
    tape.value(trace.logits).ensure_finite("logits")?;
    let k = spec.classes;
    let d = params.len();
    let mut rows = Vec::with_capacity(k * d);
    let mut seed = vec![0.0; k];
    for c in 0..k {
        seed.iter_mut().for_each(|s| *s = 0.0);
        seed[c] = 1.0;
        let grads = tape.backward(trace.logits, &seed)?;
        rows.extend(param_grads(&grads, &trace, params.layout()));
    }
    Tensor::new(vec![k, d], rows)
}

/// Stacked Jacobians of several inputs: an `(m K) x d` matrix whose row
/// `i K + k` is `grad_w f_w(x_i)_k`.
pub fn stacked_jacobian(spec: &NetworkSpec, params: &ParamVector, xs: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (k, d) = (spec.classes, params.len());
    let mut data = Vec::with_capacity(xs.rows() * k * d);
    for i in 0..xs.rows() {
        data.extend_from_slice(logit_jacobian(spec, params, xs.row(i))?.data());
    }
    Tensor::new(vec![xs.rows() * k, d], data)
}

/// Hessian-vector product of the mean batch loss, `H(w) v`.
pub fn hvp(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &LabeledBatch,
    loss: LossKind,
    v: &ParamVector,
) -> Result<ParamVector> {
    check_params(spec, params)?;
    if v.len() != params.len() {
        return Err(Error::Layout("direction length differs from parameter count".into()));
    }
    let obj = NetObjective::new(spec, batch, loss);
    let out = obj.hvp(params.values(), v.values())?;
    params.with_values(out)
}

/// A twice-differentiable scalar function of a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;

    fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn loss(&self, w: &[f64]) -> Result<f64> {
        Ok(self.loss_and_grad(w)?.0)
    }

    /// Central difference of gradients along `v` with step
    /// `h = 1e-4 / (1 + |v|)`.
    fn hvp(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != w.len() {
            return Err(Error::shape("hvp direction length"));
        }
        let nv = norm(v);
        if nv == 0.0 {
            return Ok(vec![0.0; w.len()]);
        }
        let h = 1e-4 / (1.0 + nv);
        let plus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let (_, gp) = self.loss_and_grad(&plus)?;
        let (_, gm) = self.loss_and_grad(&minus)?;
        let out: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("hessian-vector product".into()));
        }
        Ok(out)
    }
}

/// Mean loss of a network over a fixed batch.
pub struct NetObjective<'a> {
    spec: &'a NetworkSpec,
    batch: &'a LabeledBatch,
    loss: LossKind,
    layout: Layout,
}

impl<'a> NetObjective<'a> {
    pub fn new(spec: &'a NetworkSpec, batch: &'a LabeledBatch, loss: LossKind) -> Self {
        NetObjective { spec, batch, loss, layout: spec.layout() }
    }
}

impl Objective for NetObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = ParamVector::new(self.layout.clone(), w.to_vec())?;
        loss_and_grad_t::<f64>(self.spec, &params, self.batch, self.loss)
    }
}

/// `L(w) = 1/2 w^T A w` for a dense symmetric `A`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    dim: usize,
    a: Vec<f64>,
}

impl Quadratic {
    pub fn new(dim: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(Error::shape("quadratic matrix must be dim x dim"));
        }
        Ok(Quadratic { dim, a })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            a[i * n + i] = d;
        }
        Quadratic { dim: n, a }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.a.chunks(self.dim).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = self.matvec(w);
        let l = 0.5 * w.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        Ok((l, g))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// 0/1 error rate.
    pub error: f64,
    pub predictions: Vec<u32>,
}

/// Loss, error rate and predicted classes over a whole batch.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &LabeledBatch,
    loss: LossKind,
) -> Result<Evaluation> {
    let logits = forward(spec, params, &batch.inputs)?;
    Ok(evaluate_logits(logits.data(), batch, loss))
}

pub(crate) fn evaluate_logits(logits: &[f64], batch: &LabeledBatch, loss: LossKind) -> Evaluation {
    let k = batch.classes;
    let predictions = argmax_rows(logits, k);
    let wrong = predictions.iter().zip(&batch.labels).filter(|(p, y)| p != y).count();
    Evaluation {
        loss: crate::loss::loss_value(loss, logits, k, &batch.labels),
        error: wrong as f64 / batch.len() as f64,
        predictions,
    }
}
