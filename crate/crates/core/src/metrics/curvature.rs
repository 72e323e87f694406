use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{stacked_jacobian, NetObjective, Objective};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::{record_forward, Gating, NetworkSpec};
use crate::params::{dot, norm, ParamVector};
use crate::seeds::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// `K x d` matrix of per-class means of the logit gradients over `xs`.
pub fn logit_centroids(spec: &NetworkSpec, params: &ParamVector, xs: &Tensor<f64>) -> Result<Tensor<f64>> {
    let m = xs.rows();
    if m == 0 {
        return Err(Error::invalid("centroids need at least one example"));
    }
    let mut tape = Tape::<f64>::new();
    let trace = record_forward(spec, &mut tape, params, xs, true, Gating::Relu)?;
    let (k, d) = (spec.classes, params.len());
    let mut out = vec![0.0; k * d];
    for c in 0..k {
        let mut seed = vec![0.0; m * k];
        for i in 0..m {
            seed[i * k + c] = 1.0 / m as f64;
        }
        let grads = tape.backward(trace.logits, &seed)?;
        for (e, &node) in params.layout().entries().iter().zip(&trace.params) {
            if let Some(g) = grads.get(node) {
                out[c * d + e.offset..c * d + e.offset + e.len()].copy_from_slice(g);
            }
        }
    }
    Tensor::new(vec![k, d], out)
}

/// Jacobian rows minus their class centroid: row `n K + k` is
/// `grad f(x_n)_k - mu^k`.
pub fn centroid_residuals(spec: &NetworkSpec, params: &ParamVector, xs: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mu = logit_centroids(spec, params, xs)?;
    let mut jac = stacked_jacobian(spec, params, xs)?;
    let (k, d) = (spec.classes, params.len());
    for (r, row) in jac.data_mut().chunks_mut(d).enumerate() {
        for (v, c) in row.iter_mut().zip(mu.row(r % k)) {
            *v -= c;
        }
    }
    Ok(jac)
}

/// Mean over classes of the cosine between the two networks' centroids.
pub fn centroid_alignment(spec: &NetworkSpec, a: &ParamVector, b: &ParamVector, xs: &Tensor<f64>) -> Result<f64> {
    let ma = logit_centroids(spec, a, xs)?;
    let mb = logit_centroids(spec, b, xs)?;
    let k = spec.classes;
    let mut total = 0.0;
    for c in 0..k {
        let (u, v) = (ma.row(c), mb.row(c));
        let (nu, nv) = (norm(u), norm(v));
        if nu == 0.0 || nv == 0.0 {
            return Err(Error::ZeroCentroid(c));
        }
        total += dot(u, v) / (nu * nv);
    }
    Ok(total / k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenEstimate {
    /// Signed eigenvalue; its magnitude is the largest remaining |lambda|.
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// When power iteration stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stopping {
    /// Successive estimates of |lambda| within this relative tolerance.
    Value(f64),
    /// `|H v - lambda v| <= tol * |lambda|`.
    Residual(f64),
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for q in against {
        let c = dot(v, q);
        for (x, y) in v.iter_mut().zip(q) {
            *x -= c * y;
        }
    }
}

/// Power iteration on `|H|` restricted to the complement of `deflate`
/// (orthonormal vectors).
pub fn power_iteration(
    obj: &dyn Objective,
    w: &[f64],
    deflate: &[Vec<f64>],
    seed: u64,
    max_iter: usize,
    stopping: Stopping,
) -> Result<EigenEstimate> {
    let d = obj.dim();
    if w.len() != d {
        return Err(Error::shape("point dimension differs from objective"));
    }
    let mut r = rng(seed);
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
    orthogonalize(&mut v, deflate);
    let n = norm(&v);
    if n == 0.0 {
        return Err(Error::invalid("no directions left after deflation"));
    }
    v.iter_mut().for_each(|x| *x /= n);
    let mut prev = f64::NAN;
    let mut est = EigenEstimate { value: 0.0, vector: v.clone(), iterations: 0, converged: false };
    for it in 1..=max_iter {
        let mut hv = obj.hvp(w, &v)?;
        orthogonalize(&mut hv, deflate);
        let rayleigh = dot(&v, &hv);
        let mag = norm(&hv);
        let lambda = if rayleigh < 0.0 { -mag } else { mag };
        est = EigenEstimate { value: lambda, vector: v.clone(), iterations: it, converged: false };
        if mag == 0.0 {
            est.converged = true;
            break;
        }
        let done = match stopping {
            Stopping::Value(tol) => (mag - prev).abs() <= tol * mag,
            Stopping::Residual(tol) => {
                let res: f64 = hv.iter().zip(&v).map(|(a, b)| (a - rayleigh * b).powi(2)).sum::<f64>().sqrt();
                res <= tol * mag
            }
        };
        prev = mag;
        if done {
            est.converged = true;
            break;
        }
        v = hv.iter().map(|x| x / mag).collect();
    }
    Ok(est)
}

pub const POWER_TOL: f64 = 1e-4;
pub const POWER_MAX_ITER: usize = 200;

/// Top `count` eigenpairs of `|H|` by deflation.
pub fn top_eigenpairs(obj: &dyn Objective, w: &[f64], count: usize, seed: u64, stopping: Stopping, max_iter: usize) -> Result<Vec<EigenEstimate>> {
    let mut found: Vec<EigenEstimate> = Vec::new();
    for i in 0..count {
        let basis: Vec<Vec<f64>> = found.iter().map(|e| e.vector.clone()).collect();
        found.push(power_iteration(obj, w, &basis, seed.wrapping_add(i as u64), max_iter, stopping)?);
    }
    Ok(found)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNorm {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest-magnitude Hessian eigenvalue of the mean loss over `batch`.
pub fn hessian_spectral_norm(spec: &NetworkSpec, params: &ParamVector, batch: &LabeledBatch, loss: LossKind) -> Result<SpectralNorm> {
    let obj = NetObjective::new(spec, batch, loss);
    spectral_norm_of(&obj, params.values(), 0)
}

pub fn spectral_norm_of(obj: &dyn Objective, w: &[f64], seed: u64) -> Result<SpectralNorm> {
    let e = power_iteration(obj, w, &[], seed, POWER_MAX_ITER, Stopping::Value(POWER_TOL))?;
    Ok(SpectralNorm { lambda: e.value.abs(), iterations: e.iterations, converged: e.converged })
}

/// Quadratic-model escape threshold of the step `w - eta * delta`:
/// `eta (eta <delta, H delta> - 2 <delta, g>) / |g|^2`. Non-positive values
/// predict descent; times `|g|^2 / 2` it is the predicted loss change.
pub fn escape_threshold(obj: &dyn Objective, w: &[f64], eta: f64, delta: &[f64]) -> Result<f64> {
    let (_, g) = obj.loss_and_grad(w)?;
    let gg = dot(&g, &g);
    if gg == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let hd = obj.hvp(w, delta)?;
    Ok(eta * (eta * dot(delta, &hd) - 2.0 * dot(delta, &g)) / gg)
}

/// GD form `2 - eta lambda`; positive values predict descent.
pub fn gd_escape_threshold(eta: f64, lambda: f64) -> f64 {
    2.0 - eta * lambda
}

/// Orthonormal basis of the span of `vectors` (near-dependent ones dropped).
pub fn orthonormal_basis(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut u = v.clone();
        // two passes keep the basis orthogonal to rounding
        orthogonalize(&mut u, &basis);
        orthogonalize(&mut u, &basis);
        let n = norm(&u);
        if n > 1e-10 * norm(v).max(f64::MIN_POSITIVE) && n > 0.0 {
            basis.push(u.iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Fraction of `v`'s squared norm inside the span of `vectors`.
pub fn subspace_overlap(v: &[f64], vectors: &[Vec<f64>]) -> f64 {
    let basis = orthonormal_basis(vectors);
    let captured: f64 = basis.iter().map(|q| dot(q, v).powi(2)).sum();
    captured / dot(v, v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Overlap {
    pub overlap: f64,
    pub eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Share of the top Hessian eigenvector lying in the span of the logit
/// gradient centroids. The eigenvector is refined until its residual is
/// small, since the overlap depends on the vector rather than the value.
pub fn centroid_hessian_overlap(spec: &NetworkSpec, params: &ParamVector, batch: &LabeledBatch, loss: LossKind) -> Result<Overlap> {
    let obj = NetObjective::new(spec, batch, loss);
    let e = power_iteration(&obj, params.values(), &[], 0, 5000, Stopping::Residual(1e-7))?;
    let mu = logit_centroids(spec, params, &batch.inputs)?;
    let d = params.len();
    let rows: Vec<Vec<f64>> = mu.data().chunks(d).map(<[f64]>::to_vec).collect();
    Ok(Overlap {
        overlap: subspace_overlap(&e.vector, &rows),
        eigenvalue: e.value,
        iterations: e.iterations,
        converged: e.converged,
    })
}
