//! The spectrogram classifier: a sequential conv/pool/dropout stack ending in
//! two dense layers and a softmax.
//!
//! A model is an ordered list of [`Layer`]s. The canonical network is built by
//! [`build_cnn`]; other geometries (reduced test clones, hand-built probes)
//! use [`CnnModel::from_layers`] or [`Architecture`].

mod adam;
mod checkpoint;
mod train;

pub use adam::AdamState;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    TrainingMetadata, CHECKPOINT_VERSION,
};
pub use train::{
    evaluate, fit, EarlyStopping, EpochRecord, Evaluation, History, Sample, SampleSource,
    StopDecision, TrainConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Input height of the canonical network (Mel bins).
pub const INPUT_HEIGHT: usize = 128;
/// Input width of the canonical network (time frames after resizing).
pub const INPUT_WIDTH: usize = 820;
pub const INPUT_CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 2;
/// Trainable parameters of the canonical network.
pub const CANONICAL_PARAM_COUNT: usize = 6_708_450;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Kernels F×k×k×C, bias F.
    Conv2d {
        kernels: Tensor,
        bias: Tensor,
    },
    Relu,
    MaxPool2d,
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Weights M×N, bias M.
    Dense {
        weights: Tensor,
        bias: Tensor,
    },
    Softmax,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d { kernels, .. } => {
                let s = kernels.shape();
                LayerSpec::Conv2d {
                    filters: s[0],
                    kernel: s[1],
                    in_channels: s[3],
                }
            }
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2d => LayerSpec::MaxPool2d,
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense { weights, .. } => LayerSpec::Dense {
                units: weights.shape()[0],
                inputs: weights.shape()[1],
            },
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }
}

/// Parameter-free description of a layer, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        in_channels: usize,
    },
    Relu,
    MaxPool2d,
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units: usize,
        inputs: usize,
    },
    Softmax,
}

/// Parametric description of the conv→dense family the canonical network
/// belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: [usize; 3],
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    pub hidden_units: usize,
    pub classes: usize,
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn canonical(dropout_rate: f64) -> Self {
        Self::for_input(INPUT_HEIGHT, INPUT_WIDTH, dropout_rate)
    }

    /// Canonical layer widths over a different input geometry.
    pub fn for_input(height: usize, width: usize, dropout_rate: f64) -> Self {
        Self {
            input_shape: [height, width, INPUT_CHANNELS],
            conv_filters: vec![16, 32, 64],
            kernel: 3,
            hidden_units: 64,
            classes: NUM_CLASSES,
            dropout_rate,
        }
    }

    pub fn build(&self, rng: &mut Rng) -> Result<CnnModel> {
        let [mut h, mut w, mut c] = self.input_shape;
        let k = self.kernel;
        let mut layers = Vec::new();
        for &f in &self.conv_filters {
            let limit = glorot_limits(k * k * c, k * k * f)?;
            layers.push(Layer::Conv2d {
                kernels: glorot_tensor(&[f, k, k, c], limit, rng)?,
                bias: Tensor::zeros(&[f]),
            });
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool2d);
            layers.push(Layer::Dropout {
                rate: self.dropout_rate,
            });
            h /= 2;
            w /= 2;
            c = f;
            if h == 0 || w == 0 {
                return Err(Error::Shape(format!(
                    "input {:?} too small for {} pooling stages",
                    self.input_shape,
                    self.conv_filters.len()
                )));
            }
        }
        let flat = h * w * c;
        layers.push(Layer::Flatten);
        let limit = glorot_limits(flat, self.hidden_units)?;
        layers.push(Layer::Dense {
            weights: glorot_tensor(&[self.hidden_units, flat], limit, rng)?,
            bias: Tensor::zeros(&[self.hidden_units]),
        });
        layers.push(Layer::Relu);
        layers.push(Layer::Dropout {
            rate: self.dropout_rate,
        });
        let limit = glorot_limits(self.hidden_units, self.classes)?;
        layers.push(Layer::Dense {
            weights: glorot_tensor(&[self.classes, self.hidden_units], limit, rng)?,
            bias: Tensor::zeros(&[self.classes]),
        });
        layers.push(Layer::Softmax);
        CnnModel::from_layers(self.input_shape, layers)
    }
}

/// Glorot-uniform half-width √(6 / (fan_in + fan_out)).
pub fn glorot_limits(fan_in: usize, fan_out: usize) -> Result<f64> {
    if fan_in + fan_out == 0 {
        return Err(Error::Param("glorot limits need a nonzero fan".into()));
    }
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn glorot_tensor(shape: &[usize], limit: f64, rng: &mut Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-limit, limit)).collect();
    Tensor::new(shape, data)
}

/// Builds the canonical network with Glorot-uniform weights and zero biases.
pub fn build_cnn(config: &TrainConfig, rng: &mut Rng) -> Result<CnnModel> {
    Architecture::canonical(config.dropout_rate).build(rng)
}

/// How a forward pass treats dropout.
pub enum Mode<'r> {
    Inference,
    Training(&'r mut Rng),
}

/// Node ids recorded by [`CnnModel::record`].
#[derive(Clone, Debug)]
pub struct Trace {
    pub input: NodeId,
    /// First layer that was run.
    pub first: usize,
    /// Output node of every layer that was run, starting at `first`.
    pub outputs: Vec<NodeId>,
    /// Parameter leaves in [`CnnModel::parameters`] order.
    pub params: Vec<NodeId>,
}

impl Trace {
    pub fn last(&self) -> NodeId {
        *self.outputs.last().unwrap_or(&self.input)
    }

    /// Output node of model layer `layer`, if it was run.
    pub fn output(&self, layer: usize) -> Option<NodeId> {
        layer
            .checked_sub(self.first)
            .and_then(|i| self.outputs.get(i))
            .copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
}

impl CnnModel {
    /// Validates the layer chain against the input shape.
    pub fn from_layers(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let model = Self {
            input_shape,
            layers,
        };
        model.layer_shapes()?;
        Ok(model)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Output shape of every layer, derived without running the network.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape.as_slice()) {
                (Layer::Conv2d { kernels, bias }, &[h, w, c]) => {
                    let ks = kernels.shape();
                    if ks.len() != 4
                        || ks[3] != c
                        || ks[1] != ks[2]
                        || ks[1] % 2 == 0
                        || bias.shape() != [ks[0]]
                    {
                        return Err(Error::Shape(format!(
                            "layer {i}: conv {ks:?} cannot take {h}×{w}×{c}"
                        )));
                    }
                    vec![h, w, ks[0]]
                }
                (Layer::MaxPool2d, &[h, w, c]) if h >= 2 && w >= 2 => vec![h / 2, w / 2, c],
                (Layer::Flatten, s) => vec![s.iter().product()],
                (Layer::Dense { weights, bias }, &[n]) => {
                    let ws = weights.shape();
                    if ws.len() != 2 || ws[1] != n || bias.shape() != [ws[0]] {
                        return Err(Error::Shape(format!(
                            "layer {i}: dense {ws:?} cannot take {n} inputs"
                        )));
                    }
                    vec![ws[0]]
                }
                (Layer::Relu | Layer::Dropout { .. }, s) => s.to_vec(),
                (Layer::Softmax, &[k]) => vec![k],
                (layer, s) => {
                    return Err(Error::Shape(format!(
                        "layer {i} ({:?}) cannot take shape {s:?}",
                        layer.spec()
                    )));
                }
            };
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::Conv2d {
                kernels: a,
                bias: b,
            }
            | Layer::Dense {
                weights: a,
                bias: b,
            } = layer
            {
                out.push(a);
                out.push(b);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Conv2d {
                kernels: a,
                bias: b,
            }
            | Layer::Dense {
                weights: a,
                bias: b,
            } = layer
            {
                out.push(a);
                out.push(b);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// Copies parameter values in order; shapes must match.
    pub fn set_parameters(&mut self, values: &[Tensor]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors for {}",
                values.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.shape() != v.shape() {
                return Err(Error::Shape(format!(
                    "parameter {:?} vs {:?}",
                    p.shape(),
                    v.shape()
                )));
            }
            p.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.layer_shapes()
            .ok()
            .and_then(|s| s.last().map(|l| l.iter().product()))
            .unwrap_or(0)
    }

    /// Index of the layer whose output is the raw class score (the last
    /// layer, or the one before a trailing softmax).
    pub fn logits_layer(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Softmax) => self.layers.len() - 2,
            _ => self.layers.len() - 1,
        }
    }

    /// Index of the `n`-th convolution layer.
    pub fn conv_layer(&self, n: usize) -> Option<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv2d { .. }))
            .nth(n)
            .map(|(i, _)| i)
    }

    /// Index of the `n`-th dense layer.
    pub fn dense_layer(&self, n: usize) -> Option<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Dense { .. }))
            .nth(n)
            .map(|(i, _)| i)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Records layers `0..=last` on `tape`, starting from node `input`.
    /// Parameters are borrowed into the tape; they are differentiable iff
    /// `param_grads`.
    pub fn record<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        input: NodeId,
        mode: Mode<'_>,
        param_grads: bool,
        last: usize,
    ) -> Result<Trace> {
        self.record_range(tape, input, mode, param_grads, 0, last)
    }

    /// Records layers `first..=last`; `input` must have the shape layer
    /// `first` consumes.
    pub fn record_range<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        input: NodeId,
        mut mode: Mode<'_>,
        param_grads: bool,
        first: usize,
        last: usize,
    ) -> Result<Trace> {
        if last >= self.layers.len() || first > last {
            return Err(Error::Index(format!(
                "layers {first}..={last} of {}",
                self.layers.len()
            )));
        }
        if first == 0 {
            self.check_input(tape.value(input))?;
        } else {
            let expected = &self.layer_shapes()?[first - 1];
            if tape.value(input).shape() != expected.as_slice() {
                return Err(Error::Shape(format!(
                    "layer {first} expects {expected:?}, got {:?}",
                    tape.value(input).shape()
                )));
            }
        }
        let mut x = input;
        let mut outputs = Vec::with_capacity(last + 1 - first);
        let mut params = Vec::new();
        for layer in &self.layers[first..=last] {
            x = match layer {
                Layer::Conv2d { kernels, bias } => {
                    let k = tape.leaf_ref(kernels, param_grads);
                    let b = tape.leaf_ref(bias, param_grads);
                    params.extend([k, b]);
                    tape.conv2d(x, k, b)?
                }
                Layer::Dense { weights, bias } => {
                    let w = tape.leaf_ref(weights, param_grads);
                    let b = tape.leaf_ref(bias, param_grads);
                    params.extend([w, b]);
                    tape.dense(x, w, b)?
                }
                Layer::Relu => tape.relu(x),
                Layer::MaxPool2d => tape.maxpool2d(x)?,
                Layer::Dropout { rate } => match &mut mode {
                    Mode::Training(rng) => tape.dropout(x, *rate, true, rng)?,
                    Mode::Inference => x,
                },
                Layer::Flatten => tape.flatten(x),
                Layer::Softmax => tape.softmax(x),
            };
            outputs.push(x);
        }
        Ok(Trace {
            input,
            first,
            outputs,
            params,
        })
    }

    /// Full forward pass returning class probabilities (or whatever the last
    /// layer produces).
    pub fn forward(&self, input: &Tensor, mode: Mode<'_>) -> Result<Tensor> {
        self.forward_to(input, mode, self.layers.len() - 1)
    }

    pub fn forward_to(&self, input: &Tensor, mode: Mode<'_>, last: usize) -> Result<Tensor> {
        self.check_input(input)?;
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone().with_grad(false));
        let trace = self.record(&mut tape, x, mode, false, last)?;
        Ok(tape.value(trace.last()).clone())
    }

    /// Pre-softmax class scores.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_to(input, Mode::Inference, self.logits_layer())
    }

    pub fn predict_proba(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(input, Mode::Inference)?.into_data())
    }

    /// Cross-entropy loss of one sample and the gradient of every parameter.
    pub fn loss_and_grads(
        &self,
        input: &Tensor,
        label: usize,
        mode: Mode<'_>,
    ) -> Result<(f64, Vec<Tensor>)> {
        self.check_input(input)?;
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone().with_grad(false));
        let trace = self.record(&mut tape, x, mode, true, self.layers.len() - 1)?;
        let loss = tape.sparse_cross_entropy(trace.last(), label)?;
        let value = tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?;
        let param_grads = trace
            .params
            .iter()
            .map(|&p| {
                grads
                    .take(p)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(p).shape()))
            })
            .collect();
        Ok((value, param_grads))
    }
}
