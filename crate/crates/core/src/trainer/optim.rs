//! Heavy-ball SGD and Adam with an L2 weight-decay term.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" | "sgd_momentum" | "sgd-momentum" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(momentum: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::SgdMomentum, momentum, ..Self::adam() }
    }

    pub fn adam() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::invalid("invalid Adam hyperparameters"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    /// Learning rate used by the most recent step.
    pub lr: f64,
    pub step: u64,
    /// SGD: `[velocity]`; Adam: `[first moment, second moment]`.
    pub buffers: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let n = match config.kind {
            OptimizerKind::SgdMomentum => 1,
            OptimizerKind::Adam => 2,
        };
        Ok(OptimizerState { config, lr: 0.0, step: 0, buffers: vec![vec![0.0; dim]; n] })
    }

    /// Fresh buffers with the same hyperparameters.
    pub fn reset(&self) -> Self {
        let dim = self.buffers.first().map_or(0, Vec::len);
        OptimizerState::new(self.config.clone(), dim).expect("config already validated")
    }

    /// Applies one update in place. Errors when the update is non-finite.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != params.len() || self.buffers.iter().any(|b| b.len() != params.len()) {
            return Err(Error::shape("optimizer buffers, params and gradient differ in length"));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        let c = &self.config;
        let wd = c.weight_decay;
        self.step += 1;
        self.lr = lr;
        match c.kind {
            OptimizerKind::SgdMomentum => {
                let buf = &mut self.buffers[0];
                for ((w, b), &g) in params.iter_mut().zip(buf.iter_mut()).zip(grad) {
                    *b = c.momentum * *b + g + wd * *w;
                    *w -= lr * *b;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                let (m, v) = self.buffers.split_at_mut(1);
                for (((w, m), v), &g) in params.iter_mut().zip(m[0].iter_mut()).zip(v[0].iter_mut()).zip(grad) {
                    let g = g + wd * *w;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                }
            }
        }
        if params.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("parameter update".into()));
        }
        Ok(())
    }
}
