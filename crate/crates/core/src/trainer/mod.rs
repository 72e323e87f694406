//! Deterministic minibatch training with an epoch clock, checkpoints and
//! parent/child spawning.

mod checkpoint;
mod optim;
mod schedule;
mod stream;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, Lineage, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use schedule::{schedule_lr, Schedule, ScheduleKind};
pub use stream::MinibatchStream;

use crate::autodiff::{evaluate, loss_and_grad_at, Precision};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::{init_params, NetworkSpec};
use crate::params::ParamVector;
use crate::seeds::{derive_child_seed, mix, run_id};
use crate::series::MetricSeries;

/// Stream seeds are kept apart from initialization seeds.
const STREAM_SALT: u64 = 0x5354_5245_414d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spec: NetworkSpec,
    pub loss: LossKind,
    pub schedule: Schedule,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Total epoch budget `T`.
    pub epochs: f64,
    /// Checkpoint spacing in epochs.
    pub cadence: f64,
    #[serde(default)]
    pub precision: Precision,
    /// Children copy the parent's optimizer buffers when set.
    pub inherit_optimizer: bool,
    /// Additional epochs at which to checkpoint.
    #[serde(default)]
    pub extra_checkpoints: Vec<f64>,
    /// Stop early once training loss stops improving.
    #[serde(default)]
    pub plateau: Option<Plateau>,
    /// Keep only the first and the latest checkpoint in memory when unset.
    #[serde(default = "default_true")]
    pub keep_checkpoints: bool,
}

fn default_true() -> bool {
    true
}

/// Halts a run at an integer epoch `e >= window` once the training loss
/// improved by less than `rel_tol` (relative) since epoch `e - window`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub window: u32,
    pub rel_tol: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau { window: 10, rel_tol: 1e-4 }
    }
}

impl TrainConfig {
    pub fn new(spec: NetworkSpec, lr: f64, epochs: f64) -> Self {
        TrainConfig {
            spec,
            loss: LossKind::CrossEntropy,
            schedule: Schedule::constant(lr),
            optimizer: OptimizerConfig::sgd(0.9),
            batch_size: 50,
            epochs,
            cadence: 1.0 / 3.0,
            precision: Precision::F64,
            inherit_optimizer: true,
            extra_checkpoints: Vec::new(),
            plateau: None,
            keep_checkpoints: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.schedule.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.epochs > 0.0 && self.epochs.is_finite()) {
            return Err(Error::invalid("epoch budget must be positive"));
        }
        if !(self.cadence > 0.0 && self.cadence.is_finite()) {
            return Err(Error::invalid("cadence must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Halted at this epoch after a non-finite loss or update.
    Diverged { epoch: f64 },
}

impl RunStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunMeta {
    run_id: String,
    seed: u64,
    train_size: usize,
    config: TrainConfig,
    status: RunStatus,
    lineage: Option<Lineage>,
}

/// A trained run: checkpoints in iteration order and the metrics recorded at
/// each of them (`train_loss`, `train_err`, `test_loss`, `test_err`).
#[derive(Clone, Debug)]
pub struct Run {
    pub run_id: String,
    /// Seed of the minibatch stream.
    pub seed: u64,
    pub train_size: usize,
    pub config: TrainConfig,
    pub checkpoints: Vec<Checkpoint>,
    pub series: MetricSeries,
    pub status: RunStatus,
    pub lineage: Option<Lineage>,
}

impl Run {
    /// Epoch length of one iteration.
    pub fn iteration_epochs(&self) -> f64 {
        self.config.batch_size as f64 / self.train_size as f64
    }

    /// Checkpoint whose epoch clock lies within half an iteration of `epoch`.
    pub fn checkpoint_at(&self, epoch: f64) -> Result<&Checkpoint> {
        let tol = 0.5 * self.iteration_epochs();
        self.checkpoints
            .iter()
            .find(|c| (c.epoch - epoch).abs() < tol)
            .ok_or(Error::MissingCheckpoint(epoch))
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("runs hold at least one checkpoint")
    }

    pub fn final_params(&self) -> Result<ParamVector> {
        self.final_checkpoint().params(&self.config.spec)
    }

    pub fn params_at(&self, epoch: f64) -> Result<ParamVector> {
        self.checkpoint_at(epoch)?.params(&self.config.spec)
    }

    pub fn epochs(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.epoch).collect()
    }

    /// Writes `run.json`, `metrics.csv` and `ckpt_<iteration>.dlck` files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = RunMeta {
            run_id: self.run_id.clone(),
            seed: self.seed,
            train_size: self.train_size,
            config: self.config.clone(),
            status: self.status,
            lineage: self.lineage.clone(),
        };
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&meta)?)?;
        self.series.write_csv(dir.join("metrics.csv"))?;
        for c in &self.checkpoints {
            c.save(dir.join(checkpoint_file_name(c.iteration)))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("run.json"))?)?;
        let series = MetricSeries::from_csv(&std::fs::read_to_string(dir.join("metrics.csv"))?)?;
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "dlck"))
            .collect();
        files.sort();
        let checkpoints = files.iter().map(Checkpoint::load).collect::<Result<Vec<_>>>()?;
        if checkpoints.is_empty() {
            return Err(Error::invalid(format!("{} holds no checkpoints", dir.display())));
        }
        Ok(Run {
            run_id: meta.run_id,
            seed: meta.seed,
            train_size: meta.train_size,
            config: meta.config,
            checkpoints,
            series,
            status: meta.status,
            lineage: meta.lineage,
        })
    }
}

pub fn checkpoint_file_name(iteration: u64) -> String {
    format!("ckpt_{iteration:010}.dlck")
}

/// One optimizer step on a minibatch. Returns the updated parameters and
/// state plus the minibatch loss before the step.
pub fn sgd_step(
    spec: &NetworkSpec,
    params: &ParamVector,
    state: &OptimizerState,
    batch: &LabeledBatch,
    loss: LossKind,
    lr: f64,
) -> Result<(ParamVector, OptimizerState, f64)> {
    let (value, grad) = loss_and_grad_at(spec, params, batch, loss, Precision::F64)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("minibatch loss".into()));
    }
    let mut w = params.values().to_vec();
    let mut s = state.clone();
    s.apply(&mut w, &grad, lr)?;
    Ok((params.with_values(w)?, s, value))
}

pub(crate) fn iteration_of(epoch: f64, m: usize, b: usize) -> u64 {
    (epoch * m as f64 / b as f64).round().max(0.0) as u64
}

/// Checkpoint iterations for `m` examples in batches of `b`: every cadence
/// tick, every integer epoch, the `extra` epochs inside the budget and the
/// final iteration.
pub fn checkpoint_schedule(m: usize, b: usize, epochs: f64, cadence: f64, extra: &[f64]) -> BTreeSet<u64> {
    let total = iteration_of(epochs, m, b).max(1);
    let mut out = BTreeSet::new();
    let ticks = (epochs / cadence + 1e-9).floor() as u64;
    for k in 0..=ticks {
        out.insert(iteration_of(k as f64 * cadence, m, b));
    }
    for e in 0..=(epochs.floor() as u64) {
        out.insert(iteration_of(e as f64, m, b));
    }
    for &e in extra {
        if (0.0..=epochs).contains(&e) {
            out.insert(iteration_of(e, m, b));
        }
    }
    out.insert(total);
    out.retain(|&i| i <= total);
    out
}

/// Trains networks on a fixed training set, recording metrics on the
/// training set and an optional test set at every checkpoint.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    train: &'a LabeledBatch,
    test: Option<&'a LabeledBatch>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, train: &'a LabeledBatch, test: Option<&'a LabeledBatch>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        for b in std::iter::once(train).chain(test) {
            if b.input_dim() != config.spec.input_dim || b.classes != config.spec.classes {
                return Err(Error::shape("dataset does not match the network spec"));
            }
        }
        Ok(Trainer { config, train, test })
    }

    pub fn config(&self) -> &TrainConfig {
        self.config
    }

    pub fn total_iterations(&self) -> u64 {
        iteration_of(self.config.epochs, self.train.len(), self.config.batch_size).max(1)
    }

    pub fn epoch_of(&self, iteration: u64) -> f64 {
        iteration as f64 * self.config.batch_size as f64 / self.train.len() as f64
    }

    /// Iterations at which checkpoints are taken: cadence ticks, integer
    /// epochs, extra epochs and the final iteration.
    pub fn checkpoint_iterations(&self) -> BTreeSet<u64> {
        let c = self.config;
        checkpoint_schedule(self.train.len(), c.batch_size, c.epochs, c.cadence, &c.extra_checkpoints)
    }

    /// Fresh run: parameters from `init_params(spec, seed)`, minibatch
    /// stream derived from the same seed.
    pub fn train(&self, seed: u64) -> Result<Run> {
        let params = init_params(&self.config.spec, seed)?;
        let stream_seed = mix(seed, STREAM_SALT);
        let start = Checkpoint {
            run_id: run_id(seed, "parent"),
            epoch: 0.0,
            iteration: 0,
            weights: params.into_values(),
            optimizer: OptimizerState::new(self.config.optimizer.clone(), self.config.spec.param_count())?,
            rng_state: stream_seed.to_le_bytes().to_vec(),
            lineage: None,
        };
        self.run_from(start)
    }

    /// Continues from a checkpoint to the epoch budget. The returned run
    /// starts with `checkpoint` itself.
    pub fn resume(&self, checkpoint: &Checkpoint) -> Result<Run> {
        self.run_from(checkpoint.clone())
    }

    /// Branches `n` children off `parent` at epoch `t_s`. Child `i` uses
    /// `seeds[i]` when given, else a seed derived from the parent's.
    pub fn spawn_children(&self, parent: &Run, t_s: f64, n: usize, seeds: Option<&[u64]>) -> Result<Vec<Run>> {
        if let Some(s) = seeds {
            if s.len() != n {
                return Err(Error::invalid(format!("{n} children but {} seeds", s.len())));
            }
        }
        let base = parent.checkpoint_at(t_s)?;
        (0..n)
            .map(|i| {
                let seed = seeds.map_or_else(|| derive_child_seed(parent.seed, i, t_s), |s| s[i]);
                self.run_from(self.spawn_checkpoint(parent, base, seed))
            })
            .collect()
    }

    fn spawn_checkpoint(&self, parent: &Run, base: &Checkpoint, seed: u64) -> Checkpoint {
        let inherit = self.config.inherit_optimizer;
        let mut c = base.clone();
        c.run_id = run_id(seed, &format!("child:{}:{}", parent.run_id, base.iteration));
        c.rng_state = seed.to_le_bytes().to_vec();
        if !inherit {
            c.optimizer = c.optimizer.reset();
        }
        c.lineage = Some(Lineage {
            parent_run_id: parent.run_id.clone(),
            spawn_epoch: base.epoch,
            inherited_optimizer: inherit,
        });
        c
    }

    fn record(&self, series: &mut MetricSeries, run_id: &str, spec: &NetworkSpec, c: &Checkpoint) -> Result<bool> {
        let params = c.params(spec)?;
        let mut sets = vec![("train", self.train)];
        sets.extend(self.test.map(|t| ("test", t)));
        for (name, batch) in sets {
            let ev = match evaluate(spec, &params, batch, self.config.loss) {
                Ok(ev) if ev.loss.is_finite() => ev,
                Ok(_) | Err(Error::NonFinite(_)) => return Ok(false),
                Err(e) => return Err(e),
            };
            series.push(run_id, &format!("{name}_loss"), c.epoch, ev.loss)?;
            series.push(run_id, &format!("{name}_err"), c.epoch, ev.error)?;
        }
        Ok(true)
    }

    /// Trains from `start` until the epoch budget, checkpointing on the
    /// schedule of [`Trainer::checkpoint_iterations`].
    pub fn run_from(&self, start: Checkpoint) -> Result<Run> {
        let c = self.config;
        let spec = &c.spec;
        let d = spec.param_count();
        if start.weights.len() != d || start.optimizer.buffers.iter().any(|b| b.len() != d) {
            return Err(Error::shape("checkpoint does not match the network spec"));
        }
        let seed = start.stream_seed()?;
        let run_id = start.run_id.clone();
        let lineage = start.lineage.clone();
        let total = self.total_iterations();
        let marks = self.checkpoint_iterations();
        let mut series = MetricSeries::new();
        let mut status = RunStatus::Completed;
        if !self.record(&mut series, &run_id, spec, &start)? {
            status = RunStatus::Diverged { epoch: start.epoch };
        }
        let mut weights = start.weights.clone();
        let mut opt = start.optimizer.clone();
        let mut iteration = start.iteration;
        let mut stream = MinibatchStream::new(seed, self.train.len(), c.batch_size, iteration);
        let per_epoch = self.train.len() as f64 / c.batch_size as f64;
        let mut epoch_losses: Vec<(u64, f64)> = Vec::new();
        let mut checkpoints = vec![start];
        let layout = spec.layout();
        while !status.is_diverged() && iteration < total {
            let lr = c.schedule.lr_at(self.epoch_of(iteration));
            let batch = self.train.select(&stream.next_batch());
            let params = ParamVector::new(layout.clone(), weights)?;
            let (value, grad) = loss_and_grad_at(spec, &params, &batch, c.loss, c.precision)?;
            weights = params.into_values();
            let stepped = value.is_finite() && opt.apply(&mut weights, &grad, lr).is_ok();
            iteration += 1;
            let epoch = self.epoch_of(iteration);
            if !stepped {
                status = RunStatus::Diverged { epoch };
                break;
            }
            if c.precision == Precision::F32 {
                for w in &mut weights {
                    *w = *w as f32 as f64;
                }
            }
            if marks.contains(&iteration) {
                let ck = Checkpoint {
                    run_id: run_id.clone(),
                    epoch,
                    iteration,
                    weights: weights.clone(),
                    optimizer: opt.clone(),
                    rng_state: seed.to_le_bytes().to_vec(),
                    lineage: lineage.clone(),
                };
                if !self.record(&mut series, &run_id, spec, &ck)? {
                    status = RunStatus::Diverged { epoch };
                }
                if !c.keep_checkpoints && checkpoints.len() > 1 {
                    checkpoints.pop();
                }
                checkpoints.push(ck);
                if let (Some(rule), false) = (c.plateau, status.is_diverged()) {
                    let e = (iteration as f64 / per_epoch).round();
                    if iteration == iteration_of(e, self.train.len(), c.batch_size) {
                        let loss = series.values("train_loss").last().map_or(f64::NAN, |v| v.1);
                        epoch_losses.push((e as u64, loss));
                        let past = e as u64 >= rule.window as u64;
                        let old = epoch_losses.iter().find(|(k, _)| *k + rule.window as u64 == e as u64);
                        if let (true, Some(&(_, before))) = (past, old) {
                            if (before - loss) / before.abs().max(f64::MIN_POSITIVE) < rule.rel_tol {
                                break;
                            }
                        }
                    }
                }
            }
        }
        Ok(Run {
            run_id,
            seed,
            train_size: self.train.len(),
            config: c.clone(),
            checkpoints,
            series,
            status,
            lineage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{loss_and_grad, Objective, Quadratic};
    use crate::data::gen_blobs;

    fn blobs() -> LabeledBatch {
        gen_blobs(3, 120, 3, 4, 20.0).unwrap().examples
    }

    fn config(epochs: f64) -> TrainConfig {
        let mut c = TrainConfig::new(NetworkSpec::mlp(4, &[8], 3), 0.05, epochs);
        c.batch_size = 20;
        c
    }

    #[test]
    fn scalar_quadratic_gd_step() {
        // L = lambda w^2 / 2 with lambda = 3, eta = 0.1, w0 = 2.
        let q = Quadratic::diagonal(&[3.0]);
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.0), 1).unwrap();
        let mut w = vec![2.0];
        let (_, g) = q.loss_and_grad(&w).unwrap();
        s.apply(&mut w, &g, 0.1).unwrap();
        assert!((w[0] - 2.0 * (1.0 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn plain_step_matches_gradient() {
        let b = blobs();
        let spec = NetworkSpec::mlp(4, &[5], 3);
        let p = init_params(&spec, 1).unwrap();
        let s = OptimizerState::new(OptimizerConfig::sgd(0.0), p.len()).unwrap();
        let (p2, _, _) = sgd_step(&spec, &p, &s, &b, LossKind::CrossEntropy, 0.1).unwrap();
        let (_, g) = loss_and_grad(&spec, &p, &b, LossKind::CrossEntropy).unwrap();
        for ((a, b), g) in p2.values().iter().zip(p.values()).zip(g.values()) {
            assert_eq!(*a, b - 0.1 * g);
        }
        let (p3, _, _) = sgd_step(&spec, &p, &s, &b, LossKind::CrossEntropy, 0.0).unwrap();
        assert_eq!(p3, p);
    }

    #[test]
    fn gd_stability_law_on_quadratic() {
        let diag = [4.0, 1.0, 0.25];
        let q = Quadratic::diagonal(&diag);
        for (eta, converges) in [(1.9 / 4.0, true), (2.1 / 4.0, false)] {
            let mut s = OptimizerState::new(OptimizerConfig::sgd(0.0), 3).unwrap();
            let mut w = vec![1.0, 1.0, 1.0];
            for _ in 0..2000 {
                let (_, g) = q.loss_and_grad(&w).unwrap();
                if s.apply(&mut w, &g, eta).is_err() {
                    break;
                }
            }
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_eq!(n < 1e-6, converges, "eta {eta}: |w| = {n}");
        }
    }

    #[test]
    fn checkpoints_land_on_ticks_and_integers() {
        let b = blobs();
        let c = config(2.0);
        let t = Trainer::new(&c, &b, None).unwrap();
        // 6 iterations per epoch, cadence 1/3 -> every 2 iterations
        let marks: Vec<u64> = t.checkpoint_iterations().into_iter().collect();
        assert_eq!(marks, vec![0, 2, 4, 6, 8, 10, 12]);
        let run = t.train(0).unwrap();
        assert_eq!(run.checkpoints.len(), 7);
        for ck in &run.checkpoints {
            assert_eq!(ck.epoch, ck.iteration as f64 * 20.0 / 120.0);
        }
        assert!(run.checkpoint_at(1.0 / 3.0).is_ok());
        assert!(matches!(run.checkpoint_at(0.5), Err(Error::MissingCheckpoint(_))));
    }

    #[test]
    fn separable_blobs_are_learned() {
        let b = gen_blobs(11, 300, 3, 4, 20.0).unwrap().examples;
        let c = config(20.0);
        let run = Trainer::new(&c, &b, None).unwrap().train(4).unwrap();
        assert_eq!(run.status, RunStatus::Completed);
        let (_, err) = *run.series.values("train_err").last().unwrap();
        assert!(err < 0.01, "final train error {err}");
    }

    #[test]
    fn same_seed_same_checkpoints() {
        let b = blobs();
        let c = config(1.0);
        let t = Trainer::new(&c, &b, None).unwrap();
        let (r1, r2) = (t.train(8).unwrap(), t.train(8).unwrap());
        let enc = |r: &Run| r.checkpoints.iter().map(Checkpoint::encode).collect::<Vec<_>>();
        assert_eq!(enc(&r1), enc(&r2));
        assert_ne!(enc(&r1), enc(&t.train(9).unwrap()));
    }

    #[test]
    fn resume_is_bit_exact() {
        let b = blobs();
        let c = config(2.0);
        let t = Trainer::new(&c, &b, None).unwrap();
        let run = t.train(5).unwrap();
        let resumed = t.resume(run.checkpoint_at(2.0 / 3.0).unwrap()).unwrap();
        let tail = &run.checkpoints[run.checkpoints.len() - resumed.checkpoints.len()..];
        assert_eq!(tail, resumed.checkpoints.as_slice());
    }

    #[test]
    fn children_start_at_parent_weights() {
        let b = blobs();
        let c = config(2.0);
        let t = Trainer::new(&c, &b, None).unwrap();
        let parent = t.train(1).unwrap();
        let kids = t.spawn_children(&parent, 1.0, 2, None).unwrap();
        let at = parent.checkpoint_at(1.0).unwrap();
        for k in &kids {
            assert_eq!(k.checkpoints[0].weights, at.weights);
            assert_eq!(k.checkpoints[0].optimizer, at.optimizer);
            let l = k.lineage.as_ref().unwrap();
            assert_eq!((l.parent_run_id.as_str(), l.spawn_epoch), (parent.run_id.as_str(), 1.0));
            assert_eq!(k.final_checkpoint().epoch, 2.0);
        }
        assert_ne!(kids[0].final_checkpoint().weights, kids[1].final_checkpoint().weights);
        let twins = t.spawn_children(&parent, 1.0, 2, Some(&[7, 7])).unwrap();
        assert_eq!(twins[0].final_checkpoint().weights, twins[1].final_checkpoint().weights);
        assert!(matches!(t.spawn_children(&parent, 0.5, 1, None), Err(Error::MissingCheckpoint(_))));
    }

    #[test]
    fn reset_optimizer_flag() {
        let b = blobs();
        let mut c = config(1.0);
        c.inherit_optimizer = false;
        let t = Trainer::new(&c, &b, None).unwrap();
        let parent = t.train(1).unwrap();
        let kid = &t.spawn_children(&parent, 2.0 / 3.0, 1, None).unwrap()[0];
        assert!(kid.checkpoints[0].optimizer.buffers[0].iter().all(|&v| v == 0.0));
        assert!(!kid.lineage.as_ref().unwrap().inherited_optimizer);
    }

    #[test]
    fn divergence_is_marked_not_raised() {
        let b = blobs();
        let mut c = config(2.0);
        c.schedule = Schedule::constant(1e6);
        c.loss = LossKind::Mse;
        let run = Trainer::new(&c, &b, None).unwrap().train(0).unwrap();
        assert!(run.status.is_diverged());
    }

    #[test]
    fn run_directory_round_trip() {
        let b = blobs();
        let c = config(1.0);
        let run = Trainer::new(&c, &b, None).unwrap().train(2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        run.save(dir.path()).unwrap();
        let back = Run::load(dir.path()).unwrap();
        assert_eq!(back.checkpoints, run.checkpoints);
        assert_eq!(back.series, run.series);
        assert_eq!(back.config, run.config);
    }

    #[test]
    fn f32_precision_keeps_f32_weights() {
        let b = blobs();
        let mut c = config(1.0);
        c.precision = Precision::F32;
        let run = Trainer::new(&c, &b, None).unwrap().train(2).unwrap();
        for &w in &run.final_checkpoint().weights {
            assert_eq!(w, w as f32 as f64);
        }
    }
}
