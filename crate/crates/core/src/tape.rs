//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value plus whatever it
//! needs for the backward pass. Nodes are only ever appended, so the node
//! list is topologically ordered by construction and `backward` is a single
//! reverse sweep.
//!
//! Leaves may borrow their value (model parameters) instead of copying it,
//! which is why the tape carries a lifetime.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
        /// Unrolled input windows, kept only when the kernels need a gradient.
        cols: Option<Vec<f64>>,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Relu {
        input: NodeId,
    },
    Dense {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Softmax {
        input: NodeId,
    },
    Dropout {
        input: NodeId,
        scale: Vec<f64>,
    },
    Reshape {
        input: NodeId,
    },
    CrossEntropy {
        probs: NodeId,
        label: usize,
    },
    Select {
        input: NodeId,
        index: usize,
    },
    WeightedSum {
        input: NodeId,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds an owned leaf; it is differentiable iff `value.requires_grad()`.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let rg = value.requires_grad();
        self.push(Cow::Owned(value), Op::Leaf, rg)
    }

    /// Adds a borrowed leaf (typically a model parameter).
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.nodes[id.0].requires_grad)
    }

    /// Stride-1 "same" convolution of an H×W×C input with F×k×k×C kernels.
    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let (h, w, c) = self.value(input).dims3()?;
        let kshape = self.value(kernels).shape().to_vec();
        let [f, k, k2, kc] = kshape[..] else {
            return Err(Error::Shape(format!(
                "kernels must be F×k×k×C, got {kshape:?}"
            )));
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel window must be odd and square, got {k}×{k2}"
            )));
        }
        if kc != c {
            return Err(Error::Shape(format!(
                "input has {c} channels but kernels expect {kc}"
            )));
        }
        if self.value(bias).shape() != [f] {
            return Err(Error::Shape(format!(
                "bias must have shape [{f}], got {:?}",
                self.value(bias).shape()
            )));
        }
        let geometry = ConvGeometry {
            height: h,
            width: w,
            in_channels: c,
            filters: f,
            kernel: k,
        };
        let cols = kernels::im2col(self.value(input).data(), &geometry);
        let out = kernels::conv_forward(
            &cols,
            self.value(kernels).data(),
            self.value(bias).data(),
            &geometry,
        );
        let keep_cols = self.nodes[kernels.0].requires_grad;
        let rg = self.any_grad(&[input, kernels, bias]);
        let value = Tensor::new(&[h, w, f], out)?;
        Ok(self.push(
            Cow::Owned(value),
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
                cols: keep_cols.then_some(cols),
            },
            rg,
        ))
    }

    /// Non-overlapping 2×2 max pooling; a trailing odd row/column is dropped.
    pub fn maxpool2d(&mut self, input: NodeId) -> Result<NodeId> {
        let (h, w, c) = self.value(input).dims3()?;
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!("cannot 2×2-pool a {h}×{w} map")));
        }
        let (out, argmax) = kernels::maxpool_forward(self.value(input).data(), h, w, c);
        let value = Tensor::new(&[h / 2, w / 2, c], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(Cow::Owned(value), Op::MaxPool2d { input, argmax }, rg))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        let rg = self.any_grad(&[input]);
        self.push(Cow::Owned(value), Op::Relu { input }, rg)
    }

    /// `weights · input + bias` for an M×N weight matrix and length-N input.
    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let wt = self.value(weights);
        let [m, n] = wt.shape()[..] else {
            return Err(Error::Shape(format!(
                "weights must be M×N, got {:?}",
                wt.shape()
            )));
        };
        if x.numel() != n || x.shape().len() != 1 {
            return Err(Error::Shape(format!(
                "dense layer expects a flat input of {n}, got {:?}",
                x.shape()
            )));
        }
        let b = self.value(bias);
        if b.shape() != [m] {
            return Err(Error::Shape(format!(
                "bias must have shape [{m}], got {:?}",
                b.shape()
            )));
        }
        let xd = x.data();
        let out: Vec<f64> = wt
            .data()
            .chunks_exact(n)
            .zip(b.data())
            .map(|(row, bias)| bias + row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let rg = self.any_grad(&[input, weights, bias]);
        Ok(self.push(
            Cow::Owned(Tensor::from_vec(out)),
            Op::Dense {
                input,
                weights,
                bias,
            },
            rg,
        ))
    }

    pub fn softmax(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let max = x.max();
        let exps: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs = exps.into_iter().map(|e| e / total).collect();
        let value = Tensor::new(x.shape(), probs).expect("same shape");
        let rg = self.any_grad(&[input]);
        self.push(Cow::Owned(value), Op::Softmax { input }, rg)
    }

    /// Inverted dropout. Outside training, or with `rate == 0`, this is the
    /// identity and records nothing.
    pub fn dropout(
        &mut self,
        input: NodeId,
        rate: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let scale: Vec<f64> = (0..x.numel())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let value = Tensor::new(x.shape(), data)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(Cow::Owned(value), Op::Dropout { input, scale }, rg))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = Tensor::new(shape, self.value(input).data().to_vec())?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(Cow::Owned(value), Op::Reshape { input }, rg))
    }

    pub fn flatten(&mut self, input: NodeId) -> NodeId {
        let n = self.value(input).numel();
        self.reshape(input, &[n]).expect("numel preserved")
    }

    /// `-ln(max(probs[label], 1e-12))`.
    pub fn sparse_cross_entropy(&mut self, probs: NodeId, label: usize) -> Result<NodeId> {
        let p = self.value(probs);
        if label >= p.numel() {
            return Err(Error::Index(format!(
                "label {label} out of range for {} classes",
                p.numel()
            )));
        }
        let loss = -p.data()[label].max(CE_FLOOR).ln();
        let rg = self.any_grad(&[probs]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::CrossEntropy { probs, label },
            rg,
        ))
    }

    /// Picks one element (flat index) as a scalar node.
    pub fn select(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let x = self.value(input);
        let Some(&v) = x.data().get(index) else {
            return Err(Error::Index(format!(
                "index {index} out of range for {:?}",
                x.shape()
            )));
        };
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(v)),
            Op::Select { input, index },
            rg,
        ))
    }

    /// Σ weights[i] · input[i] with constant weights.
    pub fn weighted_sum(&mut self, input: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        let x = self.value(input);
        if weights.len() != x.numel() {
            return Err(Error::Shape(format!(
                "{} weights for {} values",
                weights.len(),
                x.numel()
            )));
        }
        let v = x.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(v)),
            Op::WeightedSum { input, weights },
            rg,
        ))
    }

    /// Spatial mean of one channel of an H×W×C map.
    pub fn channel_mean(&mut self, input: NodeId, channel: usize) -> Result<NodeId> {
        let (h, w, c) = self.value(input).dims3()?;
        if channel >= c {
            return Err(Error::Index(format!("channel {channel} of {c}")));
        }
        let inv = 1.0 / (h * w) as f64;
        let mut weights = vec![0.0; h * w * c];
        for p in 0..h * w {
            weights[p * c + channel] = inv;
        }
        self.weighted_sum(input, weights)
    }

    /// Reverse sweep from a scalar node. Only nodes that require a gradient
    /// (leaves flagged so, and anything computed from them) receive one.
    pub fn backward(&self, seed: NodeId) -> Result<Gradients> {
        if self.value(seed).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward seed must be scalar, got {:?}",
                self.value(seed).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(Tensor::full(self.value(seed).shape(), 1.0));

        for idx in (0..=seed.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
                cols,
            } => {
                if self.requires_grad(*kernels) {
                    let cols = cols.as_ref().expect("cols kept when kernels need grad");
                    let dk = kernels::conv_kernel_grad(cols, gd, geometry);
                    accumulate(grads, *kernels, self.value(*kernels).shape(), dk)?;
                }
                if self.requires_grad(*bias) {
                    let db = kernels::conv_bias_grad(gd, geometry.filters);
                    accumulate(grads, *bias, self.value(*bias).shape(), db)?;
                }
                if self.requires_grad(*input) {
                    let dx = kernels::conv_input_grad(self.value(*kernels).data(), gd, geometry);
                    accumulate(grads, *input, self.value(*input).shape(), dx)?;
                }
            }
            Op::MaxPool2d { input, argmax } => {
                if self.requires_grad(*input) {
                    let mut dx = vec![0.0; self.value(*input).numel()];
                    for (&src, &gv) in argmax.iter().zip(gd) {
                        dx[src] += gv;
                    }
                    accumulate(grads, *input, self.value(*input).shape(), dx)?;
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let dx = x
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *input, x.shape(), dx)?;
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => {
                let x = self.value(*input).data();
                let n = x.len();
                if self.requires_grad(*weights) {
                    let mut dw = Vec::with_capacity(gd.len() * n);
                    for &gv in gd {
                        dw.extend(x.iter().map(|&xv| gv * xv));
                    }
                    accumulate(grads, *weights, self.value(*weights).shape(), dw)?;
                }
                if self.requires_grad(*bias) {
                    accumulate(grads, *bias, self.value(*bias).shape(), gd.to_vec())?;
                }
                if self.requires_grad(*input) {
                    let mut dx = vec![0.0; n];
                    for (row, &gv) in self.value(*weights).data().chunks_exact(n).zip(gd) {
                        for (d, w) in dx.iter_mut().zip(row) {
                            *d += w * gv;
                        }
                    }
                    accumulate(grads, *input, self.value(*input).shape(), dx)?;
                }
            }
            Op::Softmax { input } => {
                let p = node.value.data();
                let dot: f64 = p.iter().zip(gd).map(|(a, b)| a * b).sum();
                let dx = p.iter().zip(gd).map(|(pv, gv)| pv * (gv - dot)).collect();
                accumulate(grads, *input, node.value.shape(), dx)?;
            }
            Op::Dropout { input, scale } => {
                let dx = scale.iter().zip(gd).map(|(s, gv)| s * gv).collect();
                accumulate(grads, *input, node.value.shape(), dx)?;
            }
            Op::Reshape { input } => {
                accumulate(grads, *input, self.value(*input).shape(), gd.to_vec())?;
            }
            Op::CrossEntropy { probs, label } => {
                let p = self.value(*probs);
                let mut dx = vec![0.0; p.numel()];
                let pl = p.data()[*label];
                if pl > CE_FLOOR {
                    dx[*label] = -gd[0] / pl;
                }
                accumulate(grads, *probs, p.shape(), dx)?;
            }
            Op::Select { input, index } => {
                let x = self.value(*input);
                let mut dx = vec![0.0; x.numel()];
                dx[*index] = gd[0];
                accumulate(grads, *input, x.shape(), dx)?;
            }
            Op::WeightedSum { input, weights } => {
                let dx = weights.iter().map(|w| w * gd[0]).collect();
                accumulate(grads, *input, self.value(*input).shape(), dx)?;
            }
        }
        Ok(())
    }
}

const CE_FLOOR: f64 = 1e-12;

fn accumulate(
    grads: &mut [Option<Tensor>],
    id: NodeId,
    shape: &[usize],
    delta: Vec<f64>,
) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape, delta)?),
    }
    Ok(())
}
