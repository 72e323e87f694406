//! Taylor expansions of a network around a base point `w~` in weight space,
//! training them, and the low-learning-rate nonlinear baseline.
//!
//! Both orders are evaluated by pushing tangents through the network with
//! the base ReLU masks and max-pool winners frozen:
//!
//! ```text
//! z' = W~ h' + dW h~ + db
//! z'' = 2 dW h' + W~ h''
//! f = f~ + z' (+ z'' / 2)
//! ```
//!
//! so gradients with respect to the displacement come from one backward pass.

use serde::{Deserialize, Serialize};

use crate::autodiff::{evaluate_logits, forward, stacked_jacobian};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::loss::{loss_logit_grad, loss_value, LossKind};
use crate::model::{check_inputs, check_params, NetworkSpec, Stage};
use crate::params::ParamVector;
use crate::seeds::run_id;
use crate::series::MetricSeries;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::trainer::{
    checkpoint_schedule, Checkpoint, MinibatchStream, OptimizerConfig, OptimizerState, Plateau, RunStatus,
    Schedule, TrainConfig, Trainer,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaylorOrder {
    First,
    Second,
}

impl TaylorOrder {
    pub fn from_degree(n: u32) -> Result<Self> {
        match n {
            1 => Ok(TaylorOrder::First),
            2 => Ok(TaylorOrder::Second),
            _ => Err(Error::invalid(format!("taylor order must be 1 or 2, got {n}"))),
        }
    }
}

/// Expansion of `spec` around `base`, evaluated at `base + delta`.
#[derive(Clone, Debug)]
pub struct TaylorModel {
    pub spec: NetworkSpec,
    pub base: ParamVector,
    pub order: TaylorOrder,
    pub delta: Vec<f64>,
}

struct TaylorTrace {
    logits: NodeId,
    delta: Vec<NodeId>,
}

fn sum_opt(tape: &mut Tape<f64>, a: Option<NodeId>, b: Option<NodeId>) -> Result<Option<NodeId>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (a, None) => a,
        (None, b) => b,
    })
}

impl TaylorModel {
    pub fn new(spec: &NetworkSpec, base: ParamVector, order: TaylorOrder) -> Result<Self> {
        check_params(spec, &base)?;
        let d = base.len();
        Ok(TaylorModel { spec: spec.clone(), base, order, delta: vec![0.0; d] })
    }

    pub fn with_delta(mut self, delta: Vec<f64>) -> Result<Self> {
        self.set_delta(delta)?;
        Ok(self)
    }

    pub fn set_delta(&mut self, delta: Vec<f64>) -> Result<()> {
        if delta.len() != self.base.len() {
            return Err(Error::shape("displacement length differs from parameter count"));
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement".into()));
        }
        self.delta = delta;
        Ok(())
    }

    /// Point in weight space the expansion is evaluated at.
    pub fn weights(&self) -> Vec<f64> {
        self.base.values().iter().zip(&self.delta).map(|(a, b)| a + b).collect()
    }

    fn record(&self, tape: &mut Tape<f64>, xs: &Tensor<f64>, track: bool) -> Result<TaylorTrace> {
        check_inputs(&self.spec, xs)?;
        let entries = self.base.layout().entries();
        let second = self.order == TaylorOrder::Second;
        let base: Vec<NodeId> = entries.iter().map(|e| tape.constant(self.base.tensor::<f64>(e))).collect();
        let delta_pv = self.base.with_values(self.delta.clone())?;
        let delta: Vec<NodeId> = entries
            .iter()
            .map(|e| {
                let t = delta_pv.tensor::<f64>(e);
                if track {
                    tape.var(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        let x = xs.clone().reshape(self.spec.input_shape(xs.rows()))?;
        let mut h0 = tape.constant(x);
        let mut h1: Option<NodeId> = None;
        let mut h2: Option<NodeId> = None;
        for stage in self.spec.stages() {
            match stage {
                Stage::Dense { weight, bias } | Stage::Conv { weight, bias } => {
                    let conv = matches!(stage, Stage::Conv { .. });
                    let apply = |tape: &mut Tape<f64>, x: NodeId, w: NodeId, b: Option<NodeId>| {
                        if conv {
                            tape.conv3x3(x, w, b)
                        } else {
                            tape.linear(x, w, b)
                        }
                    };
                    let z0 = apply(tape, h0, base[weight], bias.map(|b| base[b]))?;
                    let own = apply(tape, h0, delta[weight], bias.map(|b| delta[b]))?;
                    let carried = h1.map(|h| apply(tape, h, base[weight], None)).transpose()?;
                    let z1 = sum_opt(tape, Some(own), carried)?;
                    let z2 = if second {
                        let cross = match h1 {
                            Some(h) => {
                                let c = apply(tape, h, delta[weight], None)?;
                                Some(tape.scale(c, 2.0))
                            }
                            None => None,
                        };
                        let carried2 = h2.map(|h| apply(tape, h, base[weight], None)).transpose()?;
                        sum_opt(tape, cross, carried2)?
                    } else {
                        None
                    };
                    h0 = z0;
                    h1 = z1;
                    h2 = z2;
                }
                Stage::Relu => {
                    let mask: Vec<bool> = tape.value(h0).data().iter().map(|&v| v > 0.0).collect();
                    h1 = h1.map(|h| tape.mask(h, mask.clone())).transpose()?;
                    h2 = h2.map(|h| tape.mask(h, mask.clone())).transpose()?;
                    h0 = tape.relu(h0);
                }
                Stage::MaxPool => {
                    let (p, idx) = tape.max_pool2(h0)?;
                    let shape = tape.value(p).shape().to_vec();
                    h1 = h1.map(|h| tape.gather(h, idx.clone(), shape.clone())).transpose()?;
                    h2 = h2.map(|h| tape.gather(h, idx.clone(), shape.clone())).transpose()?;
                    h0 = p;
                }
                Stage::GlobalAvgPool => {
                    h0 = tape.global_avg_pool(h0)?;
                    h1 = h1.map(|h| tape.global_avg_pool(h)).transpose()?;
                    h2 = h2.map(|h| tape.global_avg_pool(h)).transpose()?;
                }
            }
        }
        let half = h2.map(|h| tape.scale(h, 0.5));
        let corr = sum_opt(tape, h1, half)?;
        let logits = match corr {
            Some(c) => tape.add(h0, c)?,
            None => h0,
        };
        Ok(TaylorTrace { logits, delta })
    }

    /// Logits of the expansion for every row of `xs`.
    pub fn logits(&self, xs: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let trace = self.record(&mut tape, xs, false)?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Mean loss of the expansion on `batch` and its gradient with respect
    /// to the displacement.
    pub fn loss_and_grad(&self, batch: &LabeledBatch, loss: LossKind) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let trace = self.record(&mut tape, &batch.inputs, true)?;
        let l = tape.loss(trace.logits, &batch.labels, loss)?;
        let value = tape.value(l).data()[0];
        let grads = tape.backward(l, &[1.0])?;
        let mut out = vec![0.0; self.base.len()];
        for (e, &node) in self.base.layout().entries().iter().zip(&trace.delta) {
            if let Some(g) = grads.get(node) {
                out[e.range()].copy_from_slice(g);
            }
        }
        Ok((value, out))
    }

    /// `K x d` Jacobian of the expansion's logits at one input with respect
    /// to the displacement. For order 1 this is the base Jacobian.
    pub fn jacobian(&self, x: &[f64]) -> Result<Tensor<f64>> {
        let xs = Tensor::new(vec![1, x.len()], x.to_vec())?;
        let mut tape = Tape::new();
        let trace = self.record(&mut tape, &xs, true)?;
        let k = self.spec.classes;
        let d = self.base.len();
        let mut rows = vec![0.0; k * d];
        for c in 0..k {
            let mut seed = vec![0.0; k];
            seed[c] = 1.0;
            let grads = tape.backward(trace.logits, &seed)?;
            for (e, &node) in self.base.layout().entries().iter().zip(&trace.delta) {
                if let Some(g) = grads.get(node) {
                    rows[c * d + e.offset..c * d + e.offset + e.len()].copy_from_slice(g);
                }
            }
        }
        Tensor::new(vec![k, d], rows)
    }
}

/// Logits of a Taylor model at inputs `xs`.
pub fn taylor_logits(tm: &TaylorModel, xs: &Tensor<f64>) -> Result<Tensor<f64>> {
    tm.logits(xs)
}

/// How order-1 training obtains per-example Jacobians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianPath {
    /// Cache when `m K d` fits the budget.
    #[default]
    Auto,
    Cached,
    Recompute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizedConfig {
    pub order: TaylorOrder,
    pub loss: LossKind,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: f64,
    pub cadence: f64,
    pub batch_size: usize,
    pub stream_seed: u64,
    pub path: JacobianPath,
    /// Largest cached Jacobian, in f64 entries.
    pub jacobian_budget: usize,
}

impl Default for LinearizedConfig {
    fn default() -> Self {
        LinearizedConfig {
            order: TaylorOrder::First,
            loss: LossKind::CrossEntropy,
            lr: 0.001,
            momentum: 0.9,
            epochs: 200.0,
            cadence: 1.0 / 3.0,
            batch_size: 50,
            stream_seed: 0,
            path: JacobianPath::Auto,
            jacobian_budget: 1 << 23,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearizedRun {
    pub run_id: String,
    /// `lin_train_loss`, `lin_train_err` and `lin_test_err` per checkpoint.
    pub series: MetricSeries,
    /// Displacement at every checkpoint, keyed by epoch.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub model: TaylorModel,
    /// Minimum recorded test error and the epoch it was recorded at.
    pub best_test_err: f64,
    pub best_epoch: f64,
    pub status: RunStatus,
    pub used_cache: bool,
}

struct JacobianCache {
    logits: Vec<f64>,
    jac: Tensor<f64>,
}

impl JacobianCache {
    fn build(spec: &NetworkSpec, base: &ParamVector, xs: &Tensor<f64>) -> Result<Self> {
        Ok(JacobianCache {
            logits: forward(spec, base, xs)?.into_data(),
            jac: stacked_jacobian(spec, base, xs)?,
        })
    }

    fn all_logits(&self, delta: &[f64]) -> Vec<f64> {
        let d = delta.len();
        let jac = self.jac.data();
        (0..self.logits.len())
            .map(|r| {
                let row = &jac[r * d..(r + 1) * d];
                self.logits[r] + row.iter().zip(delta).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn loss_and_grad(&self, idx: &[usize], labels: &[u32], k: usize, delta: &[f64], loss: LossKind) -> (f64, Vec<f64>) {
        let d = delta.len();
        let jac = self.jac.data();
        let mut logits = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            for c in 0..k {
                let row = &jac[(i * k + c) * d..(i * k + c + 1) * d];
                let lin: f64 = row.iter().zip(delta).map(|(a, b)| a * b).sum();
                logits.push(self.logits[i * k + c] + lin);
            }
        }
        let value = loss_value(loss, &logits, k, labels);
        let g = loss_logit_grad(loss, &logits, k, labels);
        let mut grad = vec![0.0; d];
        for (n, &i) in idx.iter().enumerate() {
            for c in 0..k {
                let s = g[n * k + c];
                let row = &jac[(i * k + c) * d..(i * k + c + 1) * d];
                for (o, &r) in grad.iter_mut().zip(row) {
                    *o += s * r;
                }
            }
        }
        (value, grad)
    }
}

/// Trains the displacement of a Taylor expansion around `base` with
/// momentum SGD, recording errors at every checkpoint tick, and reports the
/// minimum recorded test error.
pub fn train_linearized(
    spec: &NetworkSpec,
    base: &ParamVector,
    train: &LabeledBatch,
    test: &LabeledBatch,
    cfg: &LinearizedConfig,
) -> Result<LinearizedRun> {
    check_params(spec, base)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("base weights".into()));
    }
    if train.is_empty() || test.is_empty() || cfg.batch_size == 0 {
        return Err(Error::invalid("linearized training needs data and a positive batch size"));
    }
    if !(cfg.epochs > 0.0 && cfg.cadence > 0.0) {
        return Err(Error::invalid("epochs and cadence must be positive"));
    }
    Schedule::constant(cfg.lr).validate()?;
    let (m, k, d) = (train.len(), spec.classes, base.len());
    let fits = m.saturating_mul(k).saturating_mul(d) <= cfg.jacobian_budget;
    let use_cache = cfg.order == TaylorOrder::First
        && match cfg.path {
            JacobianPath::Auto => fits,
            JacobianPath::Cached => true,
            JacobianPath::Recompute => false,
        };
    let cache = if use_cache { Some(JacobianCache::build(spec, base, &train.inputs)?) } else { None };
    let test_fits = test.len().saturating_mul(k).saturating_mul(d) <= cfg.jacobian_budget;
    let test_cache = if use_cache && (test_fits || cfg.path == JacobianPath::Cached) {
        Some(JacobianCache::build(spec, base, &test.inputs)?)
    } else {
        None
    };

    let id = run_id(cfg.stream_seed, &format!("linearized:{:?}", cfg.order));
    let mut model = TaylorModel::new(spec, base.clone(), cfg.order)?;
    let mut opt = OptimizerState::new(OptimizerConfig::sgd(cfg.momentum), d)?;
    let mut stream = MinibatchStream::new(cfg.stream_seed, m, cfg.batch_size, 0);
    let marks = checkpoint_schedule(m, cfg.batch_size, cfg.epochs, cfg.cadence, &[]);
    let total = *marks.last().expect("schedule holds the final iteration");
    let epoch_of = |it: u64| it as f64 * cfg.batch_size as f64 / m as f64;

    let mut series = MetricSeries::new();
    let mut snapshots = Vec::new();
    let mut status = RunStatus::Completed;
    let mut record = |model: &TaylorModel, epoch: f64, series: &mut MetricSeries| -> Result<bool> {
        let logits_on = |c: &Option<JacobianCache>, b: &LabeledBatch| -> Result<Vec<f64>> {
            match c {
                Some(c) => Ok(c.all_logits(&model.delta)),
                None => Ok(model.logits(&b.inputs)?.into_data()),
            }
        };
        let tr = evaluate_logits(&logits_on(&cache, train)?, train, cfg.loss);
        let te = evaluate_logits(&logits_on(&test_cache, test)?, test, cfg.loss);
        if !tr.loss.is_finite() {
            return Ok(false);
        }
        series.push(&id, "lin_train_loss", epoch, tr.loss)?;
        series.push(&id, "lin_train_err", epoch, tr.error)?;
        series.push(&id, "lin_test_err", epoch, te.error)?;
        snapshots.push((epoch, model.delta.clone()));
        Ok(true)
    };
    record(&model, 0.0, &mut series)?;
    let mut delta = vec![0.0; d];
    for it in 1..=total {
        let idx = stream.next_batch();
        let batch = train.select(&idx);
        let (value, grad) = match &cache {
            Some(c) => c.loss_and_grad(&idx, &batch.labels, k, &delta, cfg.loss),
            None => model.loss_and_grad(&batch, cfg.loss)?,
        };
        if !value.is_finite() || opt.apply(&mut delta, &grad, cfg.lr).is_err() {
            status = RunStatus::Diverged { epoch: epoch_of(it) };
            break;
        }
        model.delta.copy_from_slice(&delta);
        if marks.contains(&it) && !record(&model, epoch_of(it), &mut series)? {
            status = RunStatus::Diverged { epoch: epoch_of(it) };
            break;
        }
    }
    let (best_epoch, best_test_err) = series
        .values("lin_test_err")
        .into_iter()
        .fold((0.0, f64::INFINITY), |best, (e, v)| if v < best.1 { (e, v) } else { best });
    Ok(LinearizedRun {
        run_id: id,
        series,
        snapshots,
        model,
        best_test_err,
        best_epoch,
        status,
        used_cache: use_cache,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowLrConfig {
    pub lr: f64,
    pub max_epochs: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub stream_seed: u64,
    pub plateau: Plateau,
}

impl Default for LowLrConfig {
    fn default() -> Self {
        LowLrConfig {
            lr: 0.005,
            max_epochs: 1000.0,
            batch_size: 50,
            loss: LossKind::CrossEntropy,
            stream_seed: 0,
            plateau: Plateau::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowLrResult {
    pub test_err: f64,
    pub train_loss: f64,
    pub epochs: f64,
    pub status: RunStatus,
}

/// Nonlinear training from `base` at a small constant learning rate until
/// the training loss plateaus or `max_epochs` pass. Optimizer state is
/// carried over from the base checkpoint; the epoch clock restarts at 0.
pub fn nonlinear_low_lr_baseline(
    spec: &NetworkSpec,
    base: &Checkpoint,
    train: &LabeledBatch,
    test: &LabeledBatch,
    cfg: &LowLrConfig,
) -> Result<LowLrResult> {
    let mut tc = TrainConfig::new(spec.clone(), cfg.lr, cfg.max_epochs);
    tc.loss = cfg.loss;
    tc.optimizer = base.optimizer.config.clone();
    tc.batch_size = cfg.batch_size;
    tc.cadence = 1.0;
    tc.plateau = Some(cfg.plateau);
    tc.keep_checkpoints = false;
    let trainer = Trainer::new(&tc, train, Some(test))?;
    let mut start = base.clone();
    start.run_id = run_id(cfg.stream_seed, "lowlr");
    start.epoch = 0.0;
    start.iteration = 0;
    start.rng_state = cfg.stream_seed.to_le_bytes().to_vec();
    let run = trainer.run_from(start)?;
    let last = |name: &str| run.series.values(name).last().map_or(f64::NAN, |v| v.1);
    Ok(LowLrResult {
        test_err: last("test_err"),
        train_loss: last("train_loss"),
        epochs: run.final_checkpoint().epoch,
        status: run.status,
    })
}

/// Test error of linearized training minus that of the nonlinear baseline.
pub fn nonlinear_advantage(linearized_test_err: f64, baseline_test_err: f64) -> f64 {
    linearized_test_err - baseline_test_err
}
