use crate::autodiff::stacked_jacobian;
use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::params::ParamVector;
use crate::tensor::Tensor;
use crate::trainer::Run;

/// Default cap on `m_sub * K`.
pub const GRAM_CAP: usize = 2048;

/// Tangent-kernel gram on a fixed subsample: an `(m K) x (m K)` matrix whose
/// `(i, j)` block is `J(x_i) J(x_j)^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramBlockMatrix {
    pub m_sub: usize,
    pub classes: usize,
    pub values: Vec<f64>,
    pub indices: Vec<usize>,
}

impl GramBlockMatrix {
    /// Wraps an explicit square matrix, treating each row as one example.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::shape("gram must be square"));
        }
        Ok(GramBlockMatrix { m_sub: n, classes: 1, values, indices: (0..n).collect() })
    }

    pub fn size(&self) -> usize {
        self.m_sub * self.classes
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.size() + c]
    }

    /// `K x K` block for examples `i` and `j`.
    pub fn block(&self, i: usize, j: usize) -> Vec<f64> {
        let k = self.classes;
        let mut out = Vec::with_capacity(k * k);
        for a in 0..k {
            for b in 0..k {
                out.push(self.get(i * k + a, j * k + b));
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.size()).map(|i| self.get(i, i)).sum()
    }

    /// Trace inner product `Tr(A B^T)`.
    pub fn inner(&self, other: &GramBlockMatrix) -> Result<f64> {
        if self.size() != other.size() {
            return Err(Error::shape("grams of different size"));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }
}

/// Gram of the logit Jacobians at `params` on rows `indices` of `xs`.
pub fn ntk_gram_with_cap(
    spec: &NetworkSpec,
    params: &ParamVector,
    xs: &Tensor<f64>,
    indices: &[usize],
    cap: usize,
) -> Result<GramBlockMatrix> {
    let k = spec.classes;
    let size = indices.len() * k;
    if size > cap {
        return Err(Error::MemoryGuard { size, cap });
    }
    if indices.iter().any(|&i| i >= xs.rows()) {
        return Err(Error::shape("subsample index out of range"));
    }
    let jac = stacked_jacobian(spec, params, &xs.select_rows(indices))?;
    let d = params.len();
    let rows: Vec<&[f64]> = jac.data().chunks(d).collect();
    let mut values = vec![0.0; size * size];
    for r in 0..size {
        for c in r..size {
            let v: f64 = rows[r].iter().zip(rows[c]).map(|(a, b)| a * b).sum();
            values[r * size + c] = v;
            values[c * size + r] = v;
        }
    }
    Ok(GramBlockMatrix { m_sub: indices.len(), classes: k, values, indices: indices.to_vec() })
}

pub fn ntk_gram(spec: &NetworkSpec, params: &ParamVector, xs: &Tensor<f64>, indices: &[usize]) -> Result<GramBlockMatrix> {
    ntk_gram_with_cap(spec, params, xs, indices, GRAM_CAP)
}

/// `1 - Tr(A B^T) / (|A| |B|)` under the trace inner product.
pub fn kernel_distance_grams(a: &GramBlockMatrix, b: &GramBlockMatrix) -> Result<f64> {
    let ab = a.inner(b)?;
    let (aa, bb) = (a.inner(a)?, b.inner(b)?);
    if aa == 0.0 || bb == 0.0 || !(aa.is_finite() && bb.is_finite()) {
        return Err(Error::DegenerateKernel);
    }
    Ok((1.0 - ab / (aa * bb).sqrt()).clamp(0.0, 1.0))
}

pub fn kernel_distance(
    spec: &NetworkSpec,
    params_a: &ParamVector,
    params_b: &ParamVector,
    xs: &Tensor<f64>,
    indices: &[usize],
) -> Result<f64> {
    let a = ntk_gram(spec, params_a, xs, indices)?;
    let b = ntk_gram(spec, params_b, xs, indices)?;
    kernel_distance_grams(&a, &b)
}

/// Kernel distance between the checkpoints at `t` and `t + dt`, per epoch.
pub fn kernel_velocity(run: &Run, t: f64, dt: f64, xs: &Tensor<f64>, indices: &[usize]) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let a = run.params_at(t)?;
    let b = run.params_at(t + dt)?;
    Ok(kernel_distance(&run.config.spec, &a, &b, xs, indices)? / dt)
}
