//! Config-driven experiment pipelines: the integrated "megaplot" view,
//! barrier against kernel velocity, 2-D plane scans and the linearization
//! sweep. Each returns a [`Report`] that can be written to disk.

mod config;
mod report;

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::{json, Value};

pub use config::{
    parse_config, parse_config_str, ArchKind, DataConfig, DataKind, ExperimentConfig, HeatmapResolution,
    LinearizedSection, MetricsConfig, ModelConfig, OptimConfig, OutputConfig, SpawnConfig, TrainSection,
};
pub use report::{output_root, read_summary, sha256_hex, smooth_report, CellFailure, Report, OUT_ENV};

use crate::autodiff::evaluate;
use crate::data::{stratified_subsample, LabeledBatch};
use crate::error::{Error, Result};
use crate::linearized::{nonlinear_advantage, nonlinear_low_lr_baseline, train_linearized, LinearizedConfig, LowLrConfig};
use crate::metrics::{
    centroid_alignment, error_barrier, function_distance, hessian_spectral_norm, kernel_distance_grams,
    kernel_velocity, ntk_gram_with_cap, pattern_distance, plane_scan, relu_distance, weight_distance, PlaneRequest,
};
use crate::model::activation_pattern;
use crate::params::ParamVector;
use crate::seeds::mix;
use crate::series::MetricSeries;
use crate::tensor::Tensor;
use crate::trainer::{Run, TrainConfig, Trainer};

pub const HEATMAP_CSV_HEADER: &str = "run_id,epoch_a,epoch_b,relu_dist,kernel_dist";

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

struct Clock {
    started: Instant,
    spent: BTreeMap<String, f64>,
}

impl Clock {
    fn new() -> Self {
        Clock { started: Instant::now(), spent: BTreeMap::new() }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.spent.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }

    fn finish(mut self) -> BTreeMap<String, f64> {
        self.spent.insert("total".into(), self.started.elapsed().as_secs_f64());
        self.spent
    }
}

/// Resolved data and training settings shared by all pipelines.
struct Setup {
    cfg: ExperimentConfig,
    tc: TrainConfig,
    train: LabeledBatch,
    test: LabeledBatch,
    /// Class-stratified training subsample used for tangent kernels.
    kernel_xs: Tensor<f64>,
    kernel_idx: Vec<usize>,
}

impl Setup {
    fn new(cfg: &ExperimentConfig, extra: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = cfg.datasets()?;
        if train.input_dim() != cfg.input_dim() || train.classes != cfg.data.classes {
            return Err(Error::InvalidValue {
                key: "data".into(),
                message: format!(
                    "dataset has {} inputs and {} classes, the model expects {} and {}",
                    train.input_dim(),
                    train.classes,
                    cfg.input_dim(),
                    cfg.data.classes
                ),
            });
        }
        let mut tc = cfg.train_config()?;
        tc.extra_checkpoints = extra;
        let sub = stratified_subsample(&train, cfg.metrics.kernel_subsample, cfg.data.seed);
        let kernel_xs = train.inputs.select_rows(&sub);
        let kernel_idx = (0..sub.len()).collect();
        Ok(Setup { cfg: cfg.clone(), tc, train, test, kernel_xs, kernel_idx })
    }

    fn trainer(&self) -> Result<Trainer<'_>> {
        Trainer::new(&self.tc, &self.train, Some(&self.test))
    }

    fn gram(&self, p: &ParamVector) -> Result<crate::metrics::GramBlockMatrix> {
        ntk_gram_with_cap(&self.tc.spec, p, &self.kernel_xs, &self.kernel_idx, self.cfg.metrics.gram_cap)
    }
}

/// Keeps only the first and last checkpoint of a run, for compact storage.
fn endpoints(run: &Run) -> Run {
    let mut r = run.clone();
    if r.checkpoints.len() > 2 {
        let last = r.checkpoints.pop().expect("non-empty");
        r.checkpoints.truncate(1);
        r.checkpoints.push(last);
    }
    r
}

fn heatmap_epochs(cfg: &ExperimentConfig) -> Vec<f64> {
    let t = cfg.train.epochs;
    let step = match cfg.metrics.heatmap {
        HeatmapResolution::Integer => 1.0,
        HeatmapResolution::Cadence => cfg.train.cadence,
    };
    let n = (t / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn per_epoch<T>(
    on: bool,
    p: &Option<ParamVector>,
    report: &mut Report,
    run_id: &str,
    epoch: f64,
    f: impl Fn(&ParamVector) -> Result<T>,
) -> Option<T> {
    match p {
        Some(p) if on => match f(p) {
            Ok(v) => Some(v),
            Err(err) => {
                report.fail("CD_heatmap", run_id, epoch, &err);
                None
            }
        },
        _ => None,
    }
}

/// Pairwise ReLU and kernel distances between the parent's checkpoints.
fn heatmap(setup: &Setup, parent: &Run, report: &mut Report, out: &mut String) {
    let m = &setup.cfg.metrics;
    let spec = &setup.tc.spec;
    let epochs = heatmap_epochs(&setup.cfg);
    let params: Vec<Option<ParamVector>> = epochs
        .iter()
        .map(|&e| match parent.params_at(e) {
            Ok(p) => Some(p),
            Err(err) => {
                report.fail("CD_heatmap", &parent.run_id, e, &err);
                None
            }
        })
        .collect();
    let grams: Vec<_> = epochs
        .iter()
        .zip(&params)
        .map(|(&e, p)| per_epoch(m.kernel, p, report, &parent.run_id, e, |p| setup.gram(p)))
        .collect();
    let patterns: Vec<_> = epochs
        .iter()
        .zip(&params)
        .map(|(&e, p)| per_epoch(m.relu, p, report, &parent.run_id, e, |p| activation_pattern(spec, p, &setup.kernel_xs)))
        .collect();
    for (i, &ea) in epochs.iter().enumerate() {
        for (j, &eb) in epochs.iter().enumerate() {
            let relu = match (&patterns[i], &patterns[j]) {
                (Some(a), Some(b)) => pattern_distance(a, b).ok(),
                _ => None,
            };
            let kernel = match (&grams[i], &grams[j]) {
                (Some(a), Some(b)) => match kernel_distance_grams(a, b) {
                    Ok(v) => Some(v),
                    Err(err) => {
                        if i <= j {
                            report.fail("CD_heatmap", &parent.run_id, ea, &err);
                        }
                        None
                    }
                },
                _ => None,
            };
            out.push_str(&format!("{},{ea},{eb},{},{}\n", parent.run_id, fmt_opt(relu), fmt_opt(kernel)));
        }
    }
}

#[derive(Default)]
struct SpawnPanels {
    barriers: MetricSeries,
    distances: MetricSeries,
    children: Vec<Run>,
}

/// Children at `t_s` and the barrier and distance metrics between their
/// final weights, averaged over all child pairs. Returns the mean test-error
/// barrier.
fn spawn_cell(setup: &Setup, trainer: &Trainer<'_>, parent: &Run, t_s: f64, report: &mut Report, out: &mut SpawnPanels) -> Option<f64> {
    let cfg = &setup.cfg;
    let spec = &setup.tc.spec;
    let id = parent.run_id.clone();
    let children = match trainer.spawn_children(parent, t_s, cfg.spawn.children, None) {
        Ok(c) => c,
        Err(e) => {
            report.fail("B_barriers", &id, t_s, &e);
            return None;
        }
    };
    out.children.extend(children.iter().map(endpoints));
    if let Some(bad) = children.iter().find(|c| c.status.is_diverged()) {
        report.fail("B_barriers", &bad.run_id, t_s, &Error::Diverged(t_s));
        return None;
    }
    let finals: Vec<ParamVector> = match children.iter().map(Run::final_params).collect() {
        Ok(f) => f,
        Err(e) => {
            report.fail("B_barriers", &id, t_s, &e);
            return None;
        }
    };
    let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let record = |acc: &mut BTreeMap<&str, Vec<f64>>, report: &mut Report, name: &'static str, r: Result<f64>| match r {
        Ok(v) => acc.entry(name).or_default().push(v),
        Err(e) => report.fail("E_child_distances", &id, t_s, &e),
    };
    let m = &cfg.metrics;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            let (a, b) = (&finals[i], &finals[j]);
            if m.barrier {
                match error_barrier(spec, a, b, &setup.train, &setup.test, setup.tc.loss, m.alphas) {
                    Ok(p) => {
                        acc.entry("barrier_test_err").or_default().push(p.barriers.test_err);
                        acc.entry("barrier_train_err").or_default().push(p.barriers.train_err);
                        acc.entry("barrier_train_loss").or_default().push(p.barriers.train_loss);
                    }
                    Err(e) => report.fail("B_barriers", &id, t_s, &e),
                }
            }
            if m.function {
                record(&mut acc, report, "fn_dist", function_distance(spec, a, b, &setup.test));
            }
            if m.relu {
                record(&mut acc, report, "relu_dist", relu_distance(spec, a, b, &setup.test.inputs));
            }
            if m.kernel {
                let k = setup.gram(a).and_then(|ga| kernel_distance_grams(&ga, &setup.gram(b)?));
                record(&mut acc, report, "kernel_dist", k);
            }
            record(&mut acc, report, "weight_dist", weight_distance(a.values(), b.values()));
        }
    }
    for c in &children {
        if let Some(&(_, e)) = c.series.values("test_err").last() {
            acc.entry("child_test_err").or_default().push(e);
        }
    }
    for (name, vals) in &acc {
        let target = if name.starts_with("barrier") { &mut out.barriers } else { &mut out.distances };
        // Keys are unique per (parent, metric, spawn epoch).
        let _ = target.push(&id, name, t_s, mean(vals));
    }
    acc.get("barrier_test_err").map(|v| mean(v))
}

fn spawn_summary(panel: &MetricSeries, metrics: &[&str], spawn: &[f64]) -> Value {
    let rows: Vec<Value> = spawn
        .iter()
        .map(|&t| {
            let mut row = serde_json::Map::new();
            row.insert("spawn_epoch".into(), json!(t));
            for &name in metrics {
                let vals: Vec<f64> =
                    panel.values(name).into_iter().filter(|(e, _)| *e == t).map(|(_, v)| v).collect();
                row.insert(format!("{name}_mean"), num(mean(&vals)));
                row.insert(format!("{name}_n"), json!(vals.len()));
            }
            Value::Object(row)
        })
        .collect();
    Value::Array(rows)
}

fn train_parent(trainer: &Trainer<'_>, seed: u64, report: &mut Report, panel: &str) -> Result<Run> {
    let run = trainer.train(seed)?;
    if let crate::trainer::RunStatus::Diverged { epoch } = run.status {
        report.fail(panel, &run.run_id, epoch, &Error::Diverged(epoch));
    }
    Ok(run)
}

/// Parent learning curves (panel A), child barriers at each spawn epoch
/// (B), pairwise ReLU and kernel distance heatmaps over the parent's
/// checkpoints (C/D) and final child distances (E). Optional curvature
/// panel F: Hessian spectral norm and centroid alignment between
/// consecutive integer epochs.
pub fn run_megaplot(cfg: &ExperimentConfig) -> Result<Report> {
    let setup = Setup::new(cfg, Vec::new())?;
    let trainer = setup.trainer()?;
    let mut report = Report::new("megaplot", cfg);
    let mut clock = Clock::new();
    let mut curves = MetricSeries::new();
    let mut heat = format!("{HEATMAP_CSV_HEADER}\n");
    let mut spawn = SpawnPanels::default();
    let mut curvature = MetricSeries::new();
    let mut parents = Vec::new();
    for &seed in &cfg.train.seeds {
        let parent = clock.time("train_parent", || train_parent(&trainer, seed, &mut report, "A_learning_curves"))?;
        curves.extend(&parent.series)?;
        clock.time("heatmap", || heatmap(&setup, &parent, &mut report, &mut heat));
        for &t_s in &cfg.spawn.epochs {
            clock.time("spawn", || spawn_cell(&setup, &trainer, &parent, t_s, &mut report, &mut spawn));
        }
        if cfg.metrics.hessian || cfg.metrics.centroid {
            clock.time("curvature", || curvature_panel(&setup, &parent, &mut report, &mut curvature));
        }
        parents.push(json!({ "seed": seed, "run_id": parent.run_id, "status": parent.status }));
        report.runs.push(parent);
    }
    report.runs.append(&mut spawn.children);
    report.add_series("A_learning_curves", &curves);
    report.panels.insert("CD_heatmap".into(), heat);
    let mut summary = json!({
        "seeds": cfg.train.seeds,
        "parents": parents,
        "A": {
            "final_test_err_mean": num(final_mean(&curves, "test_err", &report.runs)),
            "final_train_loss_mean": num(final_mean(&curves, "train_loss", &report.runs)),
        },
        "CD": { "epochs": heatmap_epochs(cfg) },
    });
    if !cfg.spawn.epochs.is_empty() {
        report.add_series("B_barriers", &spawn.barriers);
        report.add_series("E_child_distances", &spawn.distances);
        summary["B"] =
            spawn_summary(&spawn.barriers, &["barrier_test_err", "barrier_train_err", "barrier_train_loss"], &cfg.spawn.epochs);
        summary["E"] = spawn_summary(
            &spawn.distances,
            &["fn_dist", "relu_dist", "kernel_dist", "weight_dist", "child_test_err"],
            &cfg.spawn.epochs,
        );
    }
    if !curvature.is_empty() {
        report.add_series("F_curvature", &curvature);
    }
    report.summary = summary;
    report.timing = clock.finish();
    Ok(report)
}

/// Mean over parents of the metric's last recorded value.
fn final_mean(series: &MetricSeries, metric: &str, runs: &[Run]) -> f64 {
    let vals: Vec<f64> = runs
        .iter()
        .filter(|r| r.lineage.is_none())
        .filter_map(|r| {
            series
                .records()
                .iter()
                .filter(|x| x.run_id == r.run_id && x.metric == metric)
                .last()
                .map(|x| x.value)
        })
        .collect();
    mean(&vals)
}

fn curvature_panel(setup: &Setup, parent: &Run, report: &mut Report, out: &mut MetricSeries) {
    let spec = &setup.tc.spec;
    let epochs = heatmap_epochs(&setup.cfg);
    let sub = stratified_subsample(&setup.train, setup.cfg.metrics.kernel_subsample, setup.cfg.data.seed);
    let batch = setup.train.select(&sub);
    let id = &parent.run_id;
    for (i, &e) in epochs.iter().enumerate() {
        let Ok(p) = parent.params_at(e) else { continue };
        if setup.cfg.metrics.hessian {
            match hessian_spectral_norm(spec, &p, &batch, setup.tc.loss) {
                Ok(s) => {
                    let _ = out.push(id, "hessian_norm", e, s.lambda);
                    if !s.converged {
                        report.fail("F_curvature", id, e, &Error::invalid("power iteration did not converge"));
                    }
                }
                Err(err) => report.fail("F_curvature", id, e, &err),
            }
        }
        if setup.cfg.metrics.centroid {
            if let Some(&next) = epochs.get(i + 1) {
                match parent.params_at(next).and_then(|q| centroid_alignment(spec, &p, &q, &batch.inputs)) {
                    Ok(v) => {
                        let _ = out.push(id, "centroid_alignment", e, v);
                    }
                    Err(err) => report.fail("F_curvature", id, e, &err),
                }
            }
        }
    }
}

/// Error barrier between children spawned at each configured epoch next to
/// the parent's kernel velocity at that epoch, with their per-seed Pearson
/// correlation over the epochs where both are available.
pub fn run_barrier_velocity(cfg: &ExperimentConfig) -> Result<Report> {
    let dt = cfg.metrics.dt;
    let t = cfg.train.epochs;
    let epochs: Vec<f64> = cfg.spawn.epochs.clone();
    let extra: Vec<f64> = epochs.iter().map(|e| e + dt).filter(|&e| e <= t).collect();
    let setup = Setup::new(cfg, extra)?;
    let trainer = setup.trainer()?;
    let mut report = Report::new("barrier_velocity", cfg);
    let mut clock = Clock::new();
    let mut panel = MetricSeries::new();
    let mut spawn = SpawnPanels::default();
    let mut rows = Vec::new();
    let mut rs = Vec::new();
    for &seed in &cfg.train.seeds {
        let parent = clock.time("train_parent", || train_parent(&trainer, seed, &mut report, "barrier_velocity"))?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &t_s in &epochs {
            let barrier = clock.time("spawn", || spawn_cell(&setup, &trainer, &parent, t_s, &mut report, &mut spawn));
            let velocity = if cfg.metrics.velocity && t_s + dt <= t {
                match clock.time("velocity", || kernel_velocity(&parent, t_s, dt, &setup.kernel_xs, &setup.kernel_idx)) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        report.fail("barrier_velocity", &parent.run_id, t_s, &e);
                        None
                    }
                }
            } else {
                None
            };
            if let Some(b) = barrier {
                panel.push(&parent.run_id, "barrier_test_err", t_s, b)?;
            }
            if let Some(v) = velocity {
                panel.push(&parent.run_id, "kernel_velocity", t_s, v)?;
            }
            if let (Some(b), Some(v)) = (barrier, velocity) {
                xs.push(b);
                ys.push(v);
            }
        }
        let r = pearson(&xs, &ys);
        rs.extend(r);
        rows.push(json!({
            "seed": seed,
            "run_id": parent.run_id,
            "pearson_r": r.map_or(Value::Null, |v| json!(v)),
            "shared_epochs": xs.len(),
        }));
        report.runs.push(parent);
    }
    report.runs.append(&mut spawn.children);
    report.add_series("barrier_velocity", &panel);
    report.summary = json!({
        "seeds": cfg.train.seeds,
        "dt": dt,
        "per_seed": rows,
        "pearson_r_mean": num(mean(&rs)),
    });
    report.timing = clock.finish();
    Ok(report)
}

/// Where the runs spanning a plane come from.
pub enum PlaneSource {
    /// Train a parent with the first configured seed and spawn two children
    /// at every configured spawn epoch.
    Spawn,
    /// Existing runs; the plane passes through the first checkpoint of
    /// `child_a` and both children's final weights.
    Runs { parent: Option<Run>, child_a: Run, child_b: Run },
}

fn scan_one(
    setup: &Setup,
    parent: Option<&Run>,
    a: &Run,
    b: &Run,
    grid: usize,
    report: &mut Report,
    projections: &mut MetricSeries,
) -> Result<Value> {
    let spec = &setup.tc.spec;
    let start = &a.checkpoints[0];
    let t_s = start.epoch;
    let p = start.params(spec)?;
    let (fa, fb) = (a.final_params()?, b.final_params()?);
    let tangent = setup.cfg.metrics.plane_tangent.then_some(&p);
    let mut trajectory: Vec<(String, f64, Vec<f64>)> = Vec::new();
    if let Some(parent) = parent {
        for c in parent.checkpoints.iter().filter(|c| c.epoch <= t_s + 1e-12) {
            trajectory.push((parent.run_id.clone(), c.epoch, c.weights.clone()));
        }
    }
    for r in [a, b] {
        for c in &r.checkpoints {
            trajectory.push((r.run_id.clone(), c.epoch, c.weights.clone()));
        }
    }
    let weights: Vec<Vec<f64>> = trajectory.iter().map(|t| t.2.clone()).collect();
    let req = PlaneRequest { parent: &p, child_a: &fa, child_b: &fb, grid, tangent_anchor: tangent, trajectory: &weights };
    let scan = plane_scan(spec, &req, &setup.test)?;
    let tag = format!("plane_t{t_s}");
    report.panels.insert(tag.clone(), scan.to_csv());
    for ((id, epoch, _), pr) in trajectory.iter().zip(&scan.projections) {
        projections.push(id, &format!("{tag}_u"), *epoch, pr.u)?;
        projections.push(id, &format!("{tag}_v"), *epoch, pr.v)?;
        projections.push(id, &format!("{tag}_residual"), *epoch, pr.residual)?;
    }
    let fd = match function_distance(spec, &fa, &fb, &setup.test) {
        Ok(v) => num(v),
        Err(e) => {
            report.fail(&tag, &a.run_id, t_s, &e);
            Value::Null
        }
    };
    let err_at = |w: &ParamVector| evaluate(spec, w, &setup.test, setup.tc.loss).map(|e| e.error);
    Ok(json!({
        "spawn_epoch": t_s,
        "grid": grid,
        "panel": tag,
        "parent_run_id": parent.map(|r| r.run_id.clone()),
        "child_a": a.run_id,
        "child_b": b.run_id,
        "anchor_test_err": [err_at(&p)?, err_at(&fa)?, err_at(&fb)?],
        "inter_child_fn_dist": fd,
    }))
}

/// Plane scans through a spawn point and two children's final weights, with
/// the trajectories projected onto each plane. `grid` overrides
/// `[metrics] plane_grid`.
pub fn run_plane(cfg: &ExperimentConfig, source: PlaneSource, grid: Option<usize>) -> Result<Report> {
    let setup = Setup::new(cfg, Vec::new())?;
    let grid = grid.unwrap_or(cfg.metrics.plane_grid);
    let mut report = Report::new("plane", cfg);
    let mut clock = Clock::new();
    let mut projections = MetricSeries::new();
    let mut scans = Vec::new();
    match source {
        PlaneSource::Spawn => {
            if cfg.spawn.children < 2 {
                return Err(Error::InvalidValue { key: "children".into(), message: "plane scans need two children".into() });
            }
            let trainer = setup.trainer()?;
            let seed = cfg.train.seeds[0];
            let parent = clock.time("train_parent", || train_parent(&trainer, seed, &mut report, "plane"))?;
            for &t_s in &cfg.spawn.epochs {
                let children = clock.time("spawn", || trainer.spawn_children(&parent, t_s, 2, None))?;
                let s = clock.time("scan", || {
                    scan_one(&setup, Some(&parent), &children[0], &children[1], grid, &mut report, &mut projections)
                });
                match s {
                    Ok(v) => scans.push(v),
                    Err(e) => report.fail(&format!("plane_t{t_s}"), &parent.run_id, t_s, &e),
                }
                report.runs.extend(children.iter().map(endpoints));
            }
            report.runs.insert(0, parent);
        }
        PlaneSource::Runs { parent, child_a, child_b } => {
            if child_a.config.spec != setup.tc.spec || child_b.config.spec != setup.tc.spec {
                return Err(Error::invalid("runs do not match the configured network"));
            }
            let s = clock.time("scan", || {
                scan_one(&setup, parent.as_ref(), &child_a, &child_b, grid, &mut report, &mut projections)
            })?;
            scans.push(s);
        }
    }
    report.add_series("plane_projections", &projections);
    report.summary = json!({ "grid": grid, "scans": scans });
    report.timing = clock.finish();
    Ok(report)
}

/// For every seed and base epoch: early-stopped test error of Taylor
/// training around the parent's checkpoint (`lin_test_err`), the low
/// learning rate nonlinear baseline from the same checkpoint
/// (`lowlr_test_err`) and their difference (`nonlin_advantage`).
pub fn run_linearization_sweep(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate_base_epochs()?;
    let setup = Setup::new(cfg, Vec::new())?;
    let trainer = setup.trainer()?;
    let l = &cfg.linearized;
    let mut report = Report::new("lin_sweep", cfg);
    let mut clock = Clock::new();
    let mut results = MetricSeries::new();
    let mut curves = MetricSeries::new();
    let mut rows = Vec::new();
    for &seed in &cfg.train.seeds {
        let parent = clock.time("train_parent", || train_parent(&trainer, seed, &mut report, "lin_sweep"))?;
        let id = parent.run_id.clone();
        for &base in &l.base_epochs {
            let ckpt = match parent.checkpoint_at(base) {
                Ok(c) => c.clone(),
                Err(e) => {
                    report.fail("lin_sweep", &id, base, &e);
                    continue;
                }
            };
            let stream_seed = mix(parent.seed, base.to_bits());
            let lc = LinearizedConfig {
                order: l.order,
                loss: setup.tc.loss,
                lr: l.lr,
                momentum: l.momentum,
                epochs: l.epochs,
                cadence: cfg.train.cadence,
                batch_size: cfg.optim.batch_size,
                stream_seed,
                path: l.path,
                jacobian_budget: l.jacobian_budget,
            };
            let params = ckpt.params(&setup.tc.spec)?;
            let lin = match clock.time("linearized", || train_linearized(&setup.tc.spec, &params, &setup.train, &setup.test, &lc)) {
                Ok(r) => r,
                Err(e) => {
                    report.fail("lin_sweep", &id, base, &e);
                    continue;
                }
            };
            curves.extend(&lin.series)?;
            results.push(&id, "lin_test_err", base, lin.best_test_err)?;
            results.push(&id, "lin_best_epoch", base, lin.best_epoch)?;
            let mut row = json!({
                "seed": seed,
                "run_id": id,
                "base_epoch": base,
                "lin_run_id": lin.run_id,
                "lin_test_err": num(lin.best_test_err),
                "lin_best_epoch": num(lin.best_epoch),
                "lin_status": lin.status,
            });
            if lin.status.is_diverged() {
                report.fail("lin_sweep", &lin.run_id, base, &Error::Diverged(base));
            }
            if l.baseline {
                let bc = LowLrConfig {
                    lr: l.lowlr_lr,
                    max_epochs: l.lowlr_max_epochs,
                    batch_size: cfg.optim.batch_size,
                    loss: setup.tc.loss,
                    stream_seed,
                    plateau: Default::default(),
                };
                match clock.time("lowlr", || nonlinear_low_lr_baseline(&setup.tc.spec, &ckpt, &setup.train, &setup.test, &bc)) {
                    Ok(b) if !b.status.is_diverged() => {
                        let adv = nonlinear_advantage(lin.best_test_err, b.test_err);
                        results.push(&id, "lowlr_test_err", base, b.test_err)?;
                        results.push(&id, "nonlin_advantage", base, adv)?;
                        row["lowlr_test_err"] = num(b.test_err);
                        row["lowlr_epochs"] = json!(b.epochs);
                        row["nonlin_advantage"] = num(adv);
                    }
                    Ok(b) => report.fail("lin_sweep", &id, base, &Error::Diverged(b.epochs)),
                    Err(e) => report.fail("lin_sweep", &id, base, &e),
                }
            }
            rows.push(row);
        }
        report.runs.push(parent);
    }
    report.add_series("lin_sweep", &results);
    report.add_series("lin_curves", &curves);
    let by_base: Vec<Value> = l
        .base_epochs
        .iter()
        .map(|&b| {
            let pick = |metric: &str| -> Vec<f64> {
                results.values(metric).into_iter().filter(|(e, _)| *e == b).map(|(_, v)| v).collect()
            };
            json!({
                "base_epoch": b,
                "lin_test_err_mean": num(mean(&pick("lin_test_err"))),
                "lowlr_test_err_mean": num(mean(&pick("lowlr_test_err"))),
                "nonlin_advantage_mean": num(mean(&pick("nonlin_advantage"))),
            })
        })
        .collect();
    report.summary = json!({ "seeds": cfg.train.seeds, "rows": rows, "by_base_epoch": by_base });
    report.timing = clock.finish();
    Ok(report)
}
