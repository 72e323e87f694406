//! Small ReLU networks: fully connected MLPs and a miniature
//! all-convolutional net, with Kaiming initialization and activation
//! pattern extraction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Layout, ParamRole, ParamVector};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Dense layers with the given hidden widths; no hidden layers gives a
    /// linear (affine) model.
    Mlp { hidden: Vec<usize> },
    /// Three 3x3 conv layers, 2x2 max-pool after the first two, global
    /// average pool and a linear head. `image` is `[channels, height, width]`.
    MiniCnn { channels: Vec<usize>, image: [usize; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: Architecture,
    pub input_dim: usize,
    pub classes: usize,
    pub bias: bool,
}

/// One step of the forward computation. Indices refer to layout entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Dense { weight: usize, bias: Option<usize> },
    Conv { weight: usize, bias: Option<usize> },
    Relu,
    MaxPool,
    GlobalAvgPool,
}

impl NetworkSpec {
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        NetworkSpec {
            arch: Architecture::Mlp { hidden: hidden.to_vec() },
            input_dim,
            classes,
            bias: true,
        }
    }

    pub fn linear(input_dim: usize, classes: usize) -> Self {
        Self::mlp(input_dim, &[], classes)
    }

    pub fn mini_cnn(image: [usize; 3], channels: &[usize], classes: usize) -> Self {
        NetworkSpec {
            arch: Architecture::MiniCnn { channels: channels.to_vec(), image },
            input_dim: image.iter().product(),
            classes,
            bias: true,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 {
            return Err(Error::invalid("input_dim and classes must be >= 1"));
        }
        match &self.arch {
            Architecture::Mlp { hidden } => {
                if hidden.iter().any(|&w| w == 0) {
                    return Err(Error::invalid("all widths must be >= 1"));
                }
            }
            Architecture::MiniCnn { channels, image } => {
                if channels.len() != 3 || channels.iter().any(|&c| c == 0) {
                    return Err(Error::invalid("mini-cnn needs three non-zero channel counts"));
                }
                if image.iter().product::<usize>() != self.input_dim {
                    return Err(Error::invalid("mini-cnn image shape must match input_dim"));
                }
                if image[0] == 0 || image[1] < 4 || image[2] < 4 {
                    return Err(Error::invalid("mini-cnn images must be at least 4x4"));
                }
            }
        }
        Ok(())
    }

    /// Whether the logits are a linear function of the parameters.
    pub fn is_linear_in_params(&self) -> bool {
        matches!(&self.arch, Architecture::Mlp { hidden } if hidden.is_empty())
    }

    pub fn layout(&self) -> Layout {
        let mut items = Vec::new();
        let mut push = |layer: usize, w_shape: Vec<usize>, fan_in: usize, out: usize| {
            items.push((format!("layer{layer}.weight"), layer, ParamRole::Weight, w_shape, fan_in));
            if self.bias {
                items.push((format!("layer{layer}.bias"), layer, ParamRole::Bias, vec![out], 0));
            }
        };
        match &self.arch {
            Architecture::Mlp { hidden } => {
                let mut prev = self.input_dim;
                for (l, &w) in hidden.iter().chain(std::iter::once(&self.classes)).enumerate() {
                    push(l, vec![w, prev], prev, w);
                    prev = w;
                }
            }
            Architecture::MiniCnn { channels, image } => {
                let mut prev = image[0];
                for (l, &c) in channels.iter().enumerate() {
                    push(l, vec![c, prev, 3, 3], prev * 9, c);
                    prev = c;
                }
                push(channels.len(), vec![self.classes, prev], prev, self.classes);
            }
        }
        Layout::contiguous(items)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total()
    }

    /// The forward computation as a sequence of stages.
    pub fn stages(&self) -> Vec<Stage> {
        let mut stages = Vec::new();
        let mut entry = 0;
        let next = |e: &mut usize| {
            let w = *e;
            let b = self.bias.then_some(w + 1);
            *e += if self.bias { 2 } else { 1 };
            (w, b)
        };
        match &self.arch {
            Architecture::Mlp { hidden } => {
                for _ in hidden {
                    let (weight, bias) = next(&mut entry);
                    stages.push(Stage::Dense { weight, bias });
                    stages.push(Stage::Relu);
                }
                let (weight, bias) = next(&mut entry);
                stages.push(Stage::Dense { weight, bias });
            }
            Architecture::MiniCnn { .. } => {
                for l in 0..3 {
                    let (weight, bias) = next(&mut entry);
                    stages.push(Stage::Conv { weight, bias });
                    stages.push(Stage::Relu);
                    if l < 2 {
                        stages.push(Stage::MaxPool);
                    }
                }
                stages.push(Stage::GlobalAvgPool);
                let (weight, bias) = next(&mut entry);
                stages.push(Stage::Dense { weight, bias });
            }
        }
        stages
    }

    /// Shape the `[m, input_dim]` input is viewed as before the first stage.
    pub fn input_shape(&self, m: usize) -> Vec<usize> {
        match &self.arch {
            Architecture::Mlp { .. } => vec![m, self.input_dim],
            Architecture::MiniCnn { image, .. } => vec![m, image[0], image[1], image[2]],
        }
    }

    /// Units per example read by the activation pattern, one entry per ReLU.
    pub fn hidden_units(&self) -> Vec<usize> {
        match &self.arch {
            Architecture::Mlp { hidden } => hidden.clone(),
            Architecture::MiniCnn { channels, image } => {
                let (mut h, mut w) = (image[1], image[2]);
                let mut units = Vec::new();
                for (l, &c) in channels.iter().enumerate() {
                    units.push(c * h * w);
                    if l < 2 {
                        h /= 2;
                        w /= 2;
                    }
                }
                units
            }
        }
    }
}

/// Kaiming-normal weights (`std = sqrt(2 / fan_in)`) and zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.total()];
    for e in layout.entries() {
        if e.role == ParamRole::Weight {
            let std = (2.0 / e.fan_in as f64).sqrt();
            for v in &mut values[e.range()] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = std * z;
            }
        }
    }
    ParamVector::new(layout, values)
}

/// Nodes of one forward pass recorded on a tape.
#[derive(Debug)]
pub struct ForwardTrace {
    pub logits: NodeId,
    /// One leaf per layout entry.
    pub params: Vec<NodeId>,
    /// Post-ReLU nodes, in layer order.
    pub activations: Vec<NodeId>,
    /// Pre-ReLU nodes, in layer order.
    pub preactivations: Vec<NodeId>,
}

/// How hidden nonlinearities are applied while recording.
pub(crate) enum Gating<'a> {
    Relu,
    /// Multiply each pre-activation by a fixed on/off bit.
    Fixed(&'a [Vec<bool>]),
}

pub(crate) fn check_params(spec: &NetworkSpec, params: &ParamVector) -> Result<()> {
    if params.layout() != &spec.layout() {
        return Err(Error::Layout("parameter layout does not match network spec".into()));
    }
    Ok(())
}

pub(crate) fn check_inputs(spec: &NetworkSpec, xs: &Tensor<f64>) -> Result<()> {
    if xs.shape().len() != 2 || xs.shape()[1] != spec.input_dim {
        return Err(Error::shape(format!(
            "inputs {:?} do not match input_dim {}",
            xs.shape(),
            spec.input_dim
        )));
    }
    xs.ensure_finite("inputs")
}

/// Records the forward pass of `spec` on `xs` into `tape`.
pub(crate) fn record_forward<T: Real>(
    spec: &NetworkSpec,
    tape: &mut Tape<T>,
    params: &ParamVector,
    xs: &Tensor<f64>,
    track_params: bool,
    gating: Gating<'_>,
) -> Result<ForwardTrace> {
    check_params(spec, params)?;
    check_inputs(spec, xs)?;
    let entries = params.layout().entries();
    let param_nodes: Vec<NodeId> = entries
        .iter()
        .map(|e| {
            let t = params.tensor::<T>(e);
            if track_params {
                tape.var(t)
            } else {
                tape.constant(t)
            }
        })
        .collect();
    let x: Tensor<T> = xs.cast::<T>().reshape(spec.input_shape(xs.rows()))?;
    let mut h = tape.constant(x);
    let mut activations = Vec::new();
    let mut preactivations = Vec::new();
    for stage in spec.stages() {
        h = match stage {
            Stage::Dense { weight, bias } => {
                tape.linear(h, param_nodes[weight], bias.map(|b| param_nodes[b]))?
            }
            Stage::Conv { weight, bias } => {
                tape.conv3x3(h, param_nodes[weight], bias.map(|b| param_nodes[b]))?
            }
            Stage::Relu => {
                preactivations.push(h);
                let out = match &gating {
                    Gating::Relu => tape.relu(h),
                    Gating::Fixed(masks) => {
                        let mask = masks
                            .get(activations.len())
                            .ok_or_else(|| Error::shape("too few activation masks"))?;
                        tape.mask(h, mask.clone())?
                    }
                };
                activations.push(out);
                out
            }
            Stage::MaxPool => tape.max_pool2(h)?.0,
            Stage::GlobalAvgPool => tape.global_avg_pool(h)?,
        };
    }
    Ok(ForwardTrace { logits: h, params: param_nodes, activations, preactivations })
}

/// Binary on/off tensor of hidden units over a set of examples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    pub examples: usize,
    pub units: Vec<usize>,
    /// Per hidden layer, `examples * units[l]` bits in example-major order.
    pub bits: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn total_bits(&self) -> usize {
        self.bits.iter().map(Vec::len).sum()
    }

    pub fn bit(&self, example: usize, unit: usize, layer: usize) -> bool {
        self.bits[layer][example * self.units[layer] + unit]
    }
}

/// `B[i, j, l] = 1` iff unit `j` of hidden layer `l` is strictly positive on
/// example `i`, read right after the ReLU (before any pooling).
pub fn activation_pattern(
    spec: &NetworkSpec,
    params: &ParamVector,
    xs: &Tensor<f64>,
) -> Result<ActivationPattern> {
    if xs.rows() == 0 {
        return Err(Error::invalid("activation pattern needs at least one example"));
    }
    let mut tape = Tape::<f64>::new();
    let trace = record_forward(spec, &mut tape, params, xs, false, Gating::Relu)?;
    let bits = trace
        .activations
        .iter()
        .map(|&a| tape.value(a).data().iter().map(|&v| v > 0.0).collect())
        .collect();
    Ok(ActivationPattern { examples: xs.rows(), units: spec.hidden_units(), bits })
}
