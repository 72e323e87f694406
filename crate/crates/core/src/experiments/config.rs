//! Line-based experiment configuration:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Every key is optional; unknown sections or keys, duplicate keys and
//! unparsable values are errors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Precision;
use crate::data::{gen_blobs, gen_spirals, load_dataset, train_test_split, LabeledBatch, Split};
use crate::error::{Error, Result};
use crate::linearized::{JacobianPath, TaylorOrder};
use crate::loss::LossKind;
use crate::model::NetworkSpec;
use crate::trainer::{OptimizerConfig, OptimizerKind, Schedule, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Spirals,
    Blobs,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub kind: DataKind,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    /// Blob input dimension.
    pub dim: usize,
    pub noise: f64,
    pub separation: f64,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Mlp,
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchKind,
    pub hidden: Vec<usize>,
    pub channels: Vec<usize>,
    /// `[channels, height, width]` for the CNN.
    pub image: Vec<usize>,
    pub bias: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    /// Empty for a constant learning rate.
    pub decay_epochs: Vec<f64>,
    pub batch_size: usize,
    pub loss: LossKind,
    pub precision: Precision,
    pub inherit_optimizer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub epochs: f64,
    pub cadence: f64,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnConfig {
    pub epochs: Vec<f64>,
    pub children: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapResolution {
    Integer,
    Cadence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub kernel_subsample: usize,
    pub dt: f64,
    pub alphas: usize,
    pub gram_cap: usize,
    pub heatmap: HeatmapResolution,
    pub barrier: bool,
    pub kernel: bool,
    pub relu: bool,
    pub function: bool,
    pub velocity: bool,
    pub hessian: bool,
    pub centroid: bool,
    pub plane_grid: usize,
    pub plane_tangent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizedSection {
    pub base_epochs: Vec<f64>,
    pub order: TaylorOrder,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: f64,
    pub path: JacobianPath,
    pub jacobian_budget: usize,
    pub lowlr_lr: f64,
    pub lowlr_max_epochs: f64,
    pub baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub name: String,
    pub save_checkpoints: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub train: TrainSection,
    pub spawn: SpawnConfig,
    pub metrics: MetricsConfig,
    pub linearized: LinearizedSection,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig {
                kind: DataKind::Spirals,
                seed: 0,
                n_train: 2000,
                n_test: 1000,
                classes: 2,
                dim: 2,
                noise: 0.05,
                separation: 5.0,
                train_path: None,
                test_path: None,
            },
            model: ModelConfig {
                arch: ArchKind::Mlp,
                hidden: vec![64, 64],
                channels: vec![8, 16, 16],
                image: vec![1, 8, 8],
                bias: true,
            },
            optim: OptimConfig {
                optimizer: OptimizerKind::SgdMomentum,
                lr: 0.05,
                momentum: 0.9,
                weight_decay: 0.0,
                decay_factor: 0.1,
                decay_epochs: Vec::new(),
                batch_size: 50,
                loss: LossKind::CrossEntropy,
                precision: Precision::F64,
                inherit_optimizer: true,
            },
            train: TrainSection { epochs: 40.0, cadence: 1.0 / 3.0, seeds: vec![0] },
            spawn: SpawnConfig { epochs: vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0], children: 2 },
            metrics: MetricsConfig {
                kernel_subsample: 100,
                dt: 0.4,
                alphas: 25,
                gram_cap: 2048,
                heatmap: HeatmapResolution::Integer,
                barrier: true,
                kernel: true,
                relu: true,
                function: true,
                velocity: true,
                hessian: false,
                centroid: false,
                plane_grid: 21,
                plane_tangent: true,
            },
            linearized: LinearizedSection {
                base_epochs: vec![0.0, 2.0, 5.0, 10.0, 20.0],
                order: TaylorOrder::First,
                lr: 0.001,
                momentum: 0.9,
                epochs: 200.0,
                path: JacobianPath::Auto,
                jacobian_budget: 1 << 23,
                lowlr_lr: 0.005,
                lowlr_max_epochs: 1000.0,
                baseline: true,
            },
            output: OutputConfig { dir: PathBuf::from("out"), name: "experiment".into(), save_checkpoints: true },
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::InvalidValue { key: key.to_string(), message: message.into() }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| invalid(key, format!("cannot parse `{v}`")))
}

/// Reals, also accepting `a/b` fractions such as `1/3`.
fn parse_real(key: &str, v: &str) -> Result<f64> {
    let x = match v.split_once('/') {
        Some((a, b)) => parse_num::<f64>(key, a.trim())? / parse_num::<f64>(key, b.trim())?,
        None => parse_num(key, v)?,
    };
    if !x.is_finite() {
        return Err(invalid(key, "must be finite"));
    }
    Ok(x)
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| f(key, p.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(key, format!("expected a boolean, got `{v}`"))),
    }
}

struct Entry {
    value: String,
    line: usize,
}

type Sections = HashMap<String, HashMap<String, Entry>>;

const SECTIONS: [&str; 8] = ["data", "model", "optim", "train", "spawn", "metrics", "linearized", "output"];

fn tokenize(text: &str) -> Result<Sections> {
    let mut sections: Sections = HashMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::ConfigSyntax { line, message: "unterminated section header".into() })?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::ConfigSyntax { line, message: format!("unknown section [{name}]") });
            }
            sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| Error::ConfigSyntax { line, message: "expected `key = value`".into() })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::ConfigSyntax { line, message: "empty key".into() });
        }
        let section = current
            .as_ref()
            .ok_or_else(|| Error::ConfigSyntax { line, message: "key outside of any section".into() })?;
        let map = sections.get_mut(section).expect("section registered on header");
        if let Some(prev) = map.get(key) {
            return Err(Error::DuplicateKey { key: key.to_string(), first: prev.line, second: line });
        }
        map.insert(key.to_string(), Entry { value: value.trim().to_string(), line });
    }
    Ok(sections)
}

/// Parses configuration text on top of the defaults.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let sections = tokenize(text)?;
    let mut c = ExperimentConfig::default();
    let mut names: Vec<&String> = sections.keys().collect();
    names.sort();
    for section in names {
        let mut entries: Vec<(&String, &Entry)> = sections[section].iter().collect();
        entries.sort_by_key(|(_, e)| e.line);
        for (key, e) in entries {
            apply(&mut c, section, key, &e.value).map_err(|err| match err {
                Error::UnknownKey { .. } => {
                    Error::UnknownKey { section: section.clone(), key: key.clone(), line: e.line }
                }
                other => other,
            })?;
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

fn apply(c: &mut ExperimentConfig, section: &str, key: &str, v: &str) -> Result<()> {
    let k = key;
    let unknown = || Error::UnknownKey { section: section.into(), key: key.into(), line: 0 };
    match section {
        "data" => match k {
            "kind" => {
                c.data.kind = match v {
                    "spirals" => DataKind::Spirals,
                    "blobs" => DataKind::Blobs,
                    "file" => DataKind::File,
                    _ => return Err(invalid(k, "expected spirals, blobs or file")),
                }
            }
            "seed" => c.data.seed = parse_num(k, v)?,
            "n_train" => c.data.n_train = parse_num(k, v)?,
            "n_test" => c.data.n_test = parse_num(k, v)?,
            "classes" => c.data.classes = parse_num(k, v)?,
            "dim" => c.data.dim = parse_num(k, v)?,
            "noise" => c.data.noise = parse_real(k, v)?,
            "separation" => c.data.separation = parse_real(k, v)?,
            "train_path" => c.data.train_path = Some(PathBuf::from(v)),
            "test_path" => c.data.test_path = Some(PathBuf::from(v)),
            _ => return Err(unknown()),
        },
        "model" => match k {
            "arch" => {
                c.model.arch = match v {
                    "mlp" => ArchKind::Mlp,
                    "linear" => {
                        c.model.hidden.clear();
                        ArchKind::Mlp
                    }
                    "cnn" => ArchKind::Cnn,
                    _ => return Err(invalid(k, "expected mlp, linear or cnn")),
                }
            }
            "hidden" => c.model.hidden = parse_list(k, v, parse_num)?,
            "channels" => c.model.channels = parse_list(k, v, parse_num)?,
            "image" => c.model.image = parse_list(k, v, parse_num)?,
            "bias" => c.model.bias = parse_bool(k, v)?,
            _ => return Err(unknown()),
        },
        "optim" => match k {
            "optimizer" => c.optim.optimizer = v.parse().map_err(|e: Error| invalid(k, e.to_string()))?,
            "lr" => c.optim.lr = parse_real(k, v)?,
            "momentum" => c.optim.momentum = parse_real(k, v)?,
            "weight_decay" => c.optim.weight_decay = parse_real(k, v)?,
            "decay_factor" => c.optim.decay_factor = parse_real(k, v)?,
            "decay_epochs" => c.optim.decay_epochs = parse_list(k, v, parse_real)?,
            "batch_size" => c.optim.batch_size = parse_num(k, v)?,
            "loss" => c.optim.loss = v.parse().map_err(|e: Error| invalid(k, e.to_string()))?,
            "precision" => c.optim.precision = v.parse().map_err(|e: Error| invalid(k, e.to_string()))?,
            "inherit_optimizer" => c.optim.inherit_optimizer = parse_bool(k, v)?,
            _ => return Err(unknown()),
        },
        "train" => match k {
            "epochs" => c.train.epochs = parse_real(k, v)?,
            "cadence" => c.train.cadence = parse_real(k, v)?,
            "seeds" => c.train.seeds = parse_list(k, v, parse_num)?,
            _ => return Err(unknown()),
        },
        "spawn" => match k {
            "epochs" => c.spawn.epochs = parse_list(k, v, parse_real)?,
            "children" => c.spawn.children = parse_num(k, v)?,
            _ => return Err(unknown()),
        },
        "metrics" => match k {
            "kernel_subsample" => c.metrics.kernel_subsample = parse_num(k, v)?,
            "dt" => c.metrics.dt = parse_real(k, v)?,
            "alphas" => c.metrics.alphas = parse_num(k, v)?,
            "gram_cap" => c.metrics.gram_cap = parse_num(k, v)?,
            "heatmap" => {
                c.metrics.heatmap = match v {
                    "integer" => HeatmapResolution::Integer,
                    "cadence" => HeatmapResolution::Cadence,
                    _ => return Err(invalid(k, "expected integer or cadence")),
                }
            }
            "barrier" => c.metrics.barrier = parse_bool(k, v)?,
            "kernel" => c.metrics.kernel = parse_bool(k, v)?,
            "relu" => c.metrics.relu = parse_bool(k, v)?,
            "function" => c.metrics.function = parse_bool(k, v)?,
            "velocity" => c.metrics.velocity = parse_bool(k, v)?,
            "hessian" => c.metrics.hessian = parse_bool(k, v)?,
            "centroid" => c.metrics.centroid = parse_bool(k, v)?,
            "plane_grid" => c.metrics.plane_grid = parse_num(k, v)?,
            "plane_tangent" => c.metrics.plane_tangent = parse_bool(k, v)?,
            _ => return Err(unknown()),
        },
        "linearized" => match k {
            "base_epochs" => c.linearized.base_epochs = parse_list(k, v, parse_real)?,
            "order" => {
                let n: u32 = parse_num(k, v)?;
                c.linearized.order = TaylorOrder::from_degree(n).map_err(|e| invalid(k, e.to_string()))?;
            }
            "lr" => c.linearized.lr = parse_real(k, v)?,
            "momentum" => c.linearized.momentum = parse_real(k, v)?,
            "epochs" => c.linearized.epochs = parse_real(k, v)?,
            "path" => {
                c.linearized.path = match v {
                    "auto" => JacobianPath::Auto,
                    "cached" => JacobianPath::Cached,
                    "recompute" => JacobianPath::Recompute,
                    _ => return Err(invalid(k, "expected auto, cached or recompute")),
                }
            }
            "jacobian_budget" => c.linearized.jacobian_budget = parse_num(k, v)?,
            "lowlr_lr" => c.linearized.lowlr_lr = parse_real(k, v)?,
            "lowlr_max_epochs" => c.linearized.lowlr_max_epochs = parse_real(k, v)?,
            "baseline" => c.linearized.baseline = parse_bool(k, v)?,
            _ => return Err(unknown()),
        },
        "output" => match k {
            "dir" => c.output.dir = PathBuf::from(v),
            "name" => c.output.name = v.to_string(),
            "save_checkpoints" => c.output.save_checkpoints = parse_bool(k, v)?,
            _ => return Err(unknown()),
        },
        _ => return Err(unknown()),
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.train.epochs;
        if !(t > 0.0) {
            return Err(invalid("epochs", "must be positive"));
        }
        if !(self.train.cadence > 0.0) {
            return Err(invalid("cadence", "must be positive"));
        }
        if self.train.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if let Some(&e) = self.spawn.epochs.iter().find(|&&e| !(0.0..=t).contains(&e)) {
            return Err(invalid("spawn.epochs", format!("{e} lies outside [0, {t}]")));
        }
        if !(self.metrics.dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.metrics.alphas < 2 {
            return Err(invalid("alphas", "need at least 2 points"));
        }
        if self.metrics.plane_grid < 2 {
            return Err(invalid("plane_grid", "need at least 2 points per axis"));
        }
        if self.metrics.kernel_subsample == 0 {
            return Err(invalid("kernel_subsample", "must be positive"));
        }
        if self.output.name.is_empty() || self.output.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a plain directory name"));
        }
        if self.data.kind == DataKind::File && self.data.train_path.is_none() {
            return Err(invalid("train_path", "required for file data"));
        }
        if self.model.arch == ArchKind::Cnn && self.model.image.len() != 3 {
            return Err(invalid("image", "expected channels,height,width"));
        }
        self.train_config()?.validate().map_err(|e| invalid("optim", e.to_string()))?;
        Ok(())
    }

    /// Base epochs of the linearization sweep must lie within the parent's
    /// budget.
    pub fn validate_base_epochs(&self) -> Result<()> {
        let t = self.train.epochs;
        match self.linearized.base_epochs.iter().find(|&&e| !(0.0..=t).contains(&e)) {
            Some(e) => Err(invalid("base_epochs", format!("{e} lies outside [0, {t}]"))),
            None if self.linearized.base_epochs.is_empty() => Err(invalid("base_epochs", "empty")),
            None => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match (&self.model.arch, &self.data.kind) {
            (ArchKind::Cnn, _) => self.model.image.iter().product(),
            (_, DataKind::Spirals) => 2,
            _ => self.data.dim,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let k = self.data.classes;
        let spec = match self.model.arch {
            ArchKind::Mlp => NetworkSpec::mlp(self.input_dim(), &self.model.hidden, k),
            ArchKind::Cnn => {
                let im = &self.model.image;
                NetworkSpec::mini_cnn([im[0], im[1], im[2]], &self.model.channels, k)
            }
        };
        spec.with_bias(self.model.bias)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let o = &self.optim;
        let mut tc = TrainConfig::new(self.network_spec(), o.lr, self.train.epochs);
        tc.loss = o.loss;
        tc.schedule = if o.decay_epochs.is_empty() {
            Schedule::constant(o.lr)
        } else {
            Schedule::step_decay(o.lr, o.decay_factor, &o.decay_epochs)?
        };
        let opt = match o.optimizer {
            OptimizerKind::SgdMomentum => OptimizerConfig::sgd(o.momentum),
            OptimizerKind::Adam => OptimizerConfig::adam(),
        };
        tc.optimizer = opt.with_weight_decay(o.weight_decay);
        tc.batch_size = o.batch_size;
        tc.cadence = self.train.cadence;
        tc.precision = o.precision;
        tc.inherit_optimizer = o.inherit_optimizer;
        Ok(tc)
    }

    /// Training and test sets described by the `[data]` section.
    pub fn datasets(&self) -> Result<(LabeledBatch, LabeledBatch)> {
        let d = &self.data;
        let total = d.n_train + d.n_test;
        let full = match d.kind {
            DataKind::Spirals => gen_spirals(d.seed, total, d.classes, d.noise)?,
            DataKind::Blobs => gen_blobs(d.seed, total, d.classes, d.dim, d.separation)?,
            DataKind::File => {
                let train = load_dataset(d.train_path.as_ref().expect("validated"), Split::Train)?;
                return match &d.test_path {
                    Some(p) => Ok((train.examples, load_dataset(p, Split::Test)?.examples)),
                    None => {
                        let (a, b) = train_test_split(&train, d.n_test, d.seed)?;
                        Ok((a.examples, b.examples))
                    }
                };
            }
        };
        let (train, test) = train_test_split(&full, d.n_test, d.seed)?;
        Ok((train.examples, test.examples))
    }
}
