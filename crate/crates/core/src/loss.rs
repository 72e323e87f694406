//! Surrogate losses on a block of logits.
//!
//! MSE is the mean over examples and logits of `(f - y)^2` with one-hot `y`
//! and no factor of one half. Cross-entropy is softmax followed by negative
//! log-likelihood, averaged over the batch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cross_entropy" | "ce" | "xent" => Ok(LossKind::CrossEntropy),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::UnknownLoss(other.to_string())),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Mse => "mse",
        })
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Mean loss of `logits` (`m` rows of `classes`) against class labels.
pub fn loss_value<T: Real>(kind: LossKind, logits: &[T], classes: usize, labels: &[u32]) -> T {
    let m = labels.len();
    let mut total = T::zero();
    match kind {
        LossKind::CrossEntropy => {
            for (i, &y) in labels.iter().enumerate() {
                let row = &logits[i * classes..(i + 1) * classes];
                total = total + (log_sum_exp(row) - row[y as usize]);
            }
            total / T::of(m as f64)
        }
        LossKind::Mse => {
            for (i, &y) in labels.iter().enumerate() {
                let row = &logits[i * classes..(i + 1) * classes];
                for (k, &f) in row.iter().enumerate() {
                    let t = if k == y as usize { T::one() } else { T::zero() };
                    total = total + (f - t) * (f - t);
                }
            }
            total / T::of((m * classes) as f64)
        }
    }
}

/// Gradient of the mean loss with respect to every logit.
pub fn loss_logit_grad<T: Real>(
    kind: LossKind,
    logits: &[T],
    classes: usize,
    labels: &[u32],
) -> Vec<T> {
    let m = labels.len();
    let mut grad = vec![T::zero(); logits.len()];
    match kind {
        LossKind::CrossEntropy => {
            let inv_m = T::one() / T::of(m as f64);
            for (i, &y) in labels.iter().enumerate() {
                let row = &logits[i * classes..(i + 1) * classes];
                let lse = log_sum_exp(row);
                let out = &mut grad[i * classes..(i + 1) * classes];
                for k in 0..classes {
                    let p = (row[k] - lse).exp();
                    let t = if k == y as usize { T::one() } else { T::zero() };
                    out[k] = (p - t) * inv_m;
                }
            }
        }
        LossKind::Mse => {
            let scale = T::of(2.0 / (m * classes) as f64);
            for (i, &y) in labels.iter().enumerate() {
                for k in 0..classes {
                    let idx = i * classes + k;
                    let t = if k == y as usize { T::one() } else { T::zero() };
                    grad[idx] = (logits[idx] - t) * scale;
                }
            }
        }
    }
    grad
}

/// Row-wise softmax probabilities.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    out
}

/// Index of the largest logit in each row; ties resolve to the lowest index.
pub fn argmax_rows(logits: &[f64], classes: usize) -> Vec<u32> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for k in 1..classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}
