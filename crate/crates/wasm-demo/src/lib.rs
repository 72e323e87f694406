//! Browser front end: trains small spiral classifiers in the page and
//! returns JSON for the canvas code in `www/`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dllab_core::autodiff::forward;
use dllab_core::data::{gen_spirals, train_test_split, LabeledBatch};
use dllab_core::loss::argmax_rows;
use dllab_core::metrics::{error_barrier, function_distance, plane_scan, PlaneRequest};
use dllab_core::model::NetworkSpec;
use dllab_core::tensor::Tensor;
use dllab_core::trainer::{Run, TrainConfig, Trainer};
use dllab_core::Result;

/// Half-width of the square shown on the canvas.
const EXTENT: f64 = 1.2;
const DATA_SEED: u64 = 17;

#[derive(Clone, Debug, Serialize)]
pub struct DemoSettings {
    pub seed: u64,
    pub hidden: usize,
    pub epochs: f64,
    pub lr: f64,
}

impl Default for DemoSettings {
    fn default() -> Self {
        DemoSettings { seed: 0, hidden: 32, epochs: 20.0, lr: 0.05 }
    }
}

struct Task {
    train: LabeledBatch,
    test: LabeledBatch,
    config: TrainConfig,
}

fn task(s: &DemoSettings) -> Result<Task> {
    let full = gen_spirals(DATA_SEED, 600, 2, 0.05)?;
    let (train, test) = train_test_split(&full, 200, DATA_SEED)?;
    let spec = NetworkSpec::mlp(2, &[s.hidden, s.hidden], 2);
    let mut config = TrainConfig::new(spec, s.lr, s.epochs);
    config.cadence = 0.5;
    Ok(Task { train: train.examples, test: test.examples, config })
}

#[derive(Serialize)]
pub struct TrainView {
    pub epochs: Vec<f64>,
    pub train_err: Vec<f64>,
    pub test_err: Vec<f64>,
    /// Row-major class predictions on a `grid x grid` lattice over the canvas.
    pub grid: usize,
    pub extent: f64,
    pub decision: Vec<u32>,
    /// `[x, y, label]` per training point.
    pub points: Vec<[f64; 3]>,
}

fn curve(run: &Run, metric: &str) -> Vec<f64> {
    run.series.values(metric).into_iter().map(|v| v.1).collect()
}

/// Trains one network and evaluates its decision regions.
pub fn train_view(s: &DemoSettings, grid: usize) -> Result<TrainView> {
    let t = task(s)?;
    let run = Trainer::new(&t.config, &t.train, Some(&t.test))?.train(s.seed)?;
    let params = run.final_params()?;
    let step = 2.0 * EXTENT / (grid.max(2) - 1) as f64;
    let mut xy = Vec::with_capacity(grid * grid * 2);
    for r in 0..grid {
        for c in 0..grid {
            xy.push(-EXTENT + c as f64 * step);
            xy.push(EXTENT - r as f64 * step);
        }
    }
    let logits = forward(&t.config.spec, &params, &Tensor::new(vec![grid * grid, 2], xy)?)?;
    let points = (0..t.train.len())
        .map(|i| {
            let x = t.train.inputs.row(i);
            [x[0], x[1], t.train.labels[i] as f64]
        })
        .collect();
    Ok(TrainView {
        epochs: run.series.values("test_err").into_iter().map(|v| v.0).collect(),
        train_err: curve(&run, "train_err"),
        test_err: curve(&run, "test_err"),
        grid,
        extent: EXTENT,
        decision: argmax_rows(logits.data(), 2),
        points,
    })
}

#[derive(Serialize)]
pub struct BarrierView {
    pub spawn_epoch: f64,
    pub alphas: Vec<f64>,
    pub test_err: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub barrier: f64,
    pub function_distance: Option<f64>,
}

fn parent_and_children(s: &DemoSettings, t: &Task, spawn_epoch: f64) -> Result<(Run, Vec<Run>)> {
    let trainer = Trainer::new(&t.config, &t.train, Some(&t.test))?;
    let parent = trainer.train(s.seed)?;
    let children = trainer.spawn_children(&parent, spawn_epoch, 2, None)?;
    Ok((parent, children))
}

/// Error along the straight line between two children spawned at
/// `spawn_epoch`.
pub fn barrier_view(s: &DemoSettings, spawn_epoch: f64, n_alpha: usize) -> Result<BarrierView> {
    let t = task(s)?;
    let (_, children) = parent_and_children(s, &t, spawn_epoch)?;
    let (a, b) = (children[0].final_params()?, children[1].final_params()?);
    let p = error_barrier(&t.config.spec, &a, &b, &t.train, &t.test, t.config.loss, n_alpha)?;
    Ok(BarrierView {
        spawn_epoch,
        alphas: p.alphas,
        test_err: p.test_err,
        train_loss: p.train_loss,
        barrier: p.barriers.test_err,
        function_distance: function_distance(&t.config.spec, &a, &b, &t.test).ok(),
    })
}

#[derive(Serialize)]
pub struct PlaneView {
    pub spawn_epoch: f64,
    pub coords: Vec<f64>,
    /// Row-major over `(u, v)`.
    pub test_error: Vec<f64>,
    pub taylor_error: Vec<f64>,
    /// Projected `(u, v)` of both children's checkpoints.
    pub paths: Vec<Vec<[f64; 2]>>,
}

/// Test error on the plane through the spawn point and both children's
/// final weights, with the order-1 expansion at the spawn point alongside.
pub fn plane_view(s: &DemoSettings, spawn_epoch: f64, grid: usize) -> Result<PlaneView> {
    let t = task(s)?;
    let (_, children) = parent_and_children(s, &t, spawn_epoch)?;
    let spec = &t.config.spec;
    let p = children[0].checkpoints[0].params(spec)?;
    let (a, b) = (children[0].final_params()?, children[1].final_params()?);
    let trajectory: Vec<Vec<f64>> =
        children.iter().flat_map(|c| c.checkpoints.iter().map(|k| k.weights.clone())).collect();
    let req = PlaneRequest { parent: &p, child_a: &a, child_b: &b, grid, tangent_anchor: Some(&p), trajectory: &trajectory };
    let scan = plane_scan(spec, &req, &t.test)?;
    let n0 = children[0].checkpoints.len();
    let uv: Vec<[f64; 2]> = scan.projections.iter().map(|q| [q.u, q.v]).collect();
    Ok(PlaneView {
        spawn_epoch,
        coords: scan.coords.clone(),
        test_error: scan.cells.iter().map(|c| c.test_error).collect(),
        taylor_error: scan.cells.iter().map(|c| c.taylor_error.unwrap_or(f64::NAN)).collect(),
        paths: vec![uv[..n0].to_vec(), uv[n0..].to_vec()],
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.and_then(|v| Ok(serde_json::to_string(&v)?)).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn settings(seed: u32, hidden: u32, epochs: f64, lr: f64) -> DemoSettings {
    DemoSettings { seed: seed as u64, hidden: hidden as usize, epochs, lr }
}

#[wasm_bindgen]
pub fn train_spirals(seed: u32, hidden: u32, epochs: f64, lr: f64, grid: u32) -> std::result::Result<String, JsValue> {
    to_js(train_view(&settings(seed, hidden, epochs, lr), grid as usize))
}

#[wasm_bindgen]
pub fn spawn_barrier(seed: u32, hidden: u32, epochs: f64, lr: f64, spawn_epoch: f64) -> std::result::Result<String, JsValue> {
    to_js(barrier_view(&settings(seed, hidden, epochs, lr), spawn_epoch, 25))
}

#[wasm_bindgen]
pub fn error_plane(seed: u32, hidden: u32, epochs: f64, lr: f64, spawn_epoch: f64, grid: u32) -> std::result::Result<String, JsValue> {
    to_js(plane_view(&settings(seed, hidden, epochs, lr), spawn_epoch, grid as usize))
}
