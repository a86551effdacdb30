//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and whatever context the backward rule needs. Nodes only reference
//! earlier nodes, so the tape order is a topological order and backward is a
//! single reverse sweep. A fresh graph is built for every forward pass.

mod conv;
mod pointwise;
mod reduce;
mod sample;
mod spatial;

pub use reduce::ReduceKind;
pub use spatial::pixel_unshuffle;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use pointwise::{BinaryKind, UnaryKind};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        cols: Vec<f64>,
    },
    Unary {
        input: Var,
        kind: UnaryKind,
    },
    Binary {
        lhs: Var,
        rhs: Var,
        kind: BinaryKind,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    AddScalar {
        input: Var,
    },
    Clamp {
        input: Var,
        lo: f64,
        hi: f64,
    },
    UpsampleNearest {
        input: Var,
        factor: usize,
    },
    PixelShuffle {
        input: Var,
        factor: usize,
    },
    GridSample {
        source: Var,
        offsets: Var,
    },
    Reduce {
        input: Var,
        kind: ReduceKind,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    AvgPool {
        input: Var,
        kernel: usize,
        stride: usize,
    },
    FlipHorizontal {
        input: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    // Accumulated gradients of leaves that require them; persists across
    // backward calls until `zero_grad`.
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// A differentiable leaf, e.g. a network weight.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Accumulated gradient of a differentiable leaf, if backward reached it.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.leaf_grads.get(var.0)?.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    // ---- operations -----------------------------------------------------

    /// 2-D convolution with square kernel, symmetric zero padding and equal
    /// stride on both axes. `weight` is `(out, in, k, k)`, `bias` is
    /// `(1, out, 1, 1)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (value, cols) = conv::forward(self.value(input), self.value(weight), self.value(bias), stride, pad)?;
        let op = Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad,
            cols,
        };
        self.push("conv2d", value, op, &[input, weight, bias])
    }

    fn unary(&mut self, input: Var, kind: UnaryKind) -> Result<Var> {
        let value = pointwise::unary_forward(self.value(input), kind);
        self.push(kind.name(), value, Op::Unary { input, kind }, &[input])
    }

    pub fn elu(&mut self, input: Var) -> Result<Var> {
        self.unary(input, UnaryKind::Elu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.unary(input, UnaryKind::Sigmoid)
    }

    pub fn abs(&mut self, input: Var) -> Result<Var> {
        self.unary(input, UnaryKind::Abs)
    }

    pub fn exp(&mut self, input: Var) -> Result<Var> {
        self.unary(input, UnaryKind::Exp)
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        self.unary(input, UnaryKind::Square)
    }

    fn binary(&mut self, lhs: Var, rhs: Var, kind: BinaryKind) -> Result<Var> {
        let value = pointwise::binary_forward(self.value(lhs), self.value(rhs), kind)?;
        self.push(kind.name(), value, Op::Binary { lhs, rhs, kind }, &[lhs, rhs])
    }

    /// Broadcasting addition: extents must match or be 1 on one side.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, BinaryKind::Add)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, BinaryKind::Sub)
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, BinaryKind::Mul)
    }

    pub fn div(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, BinaryKind::Div)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v * factor);
        self.push("scale", value, Op::Scale { input, factor }, &[input])
    }

    pub fn add_scalar(&mut self, input: Var, offset: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v + offset);
        self.push("add_scalar", value, Op::AddScalar { input }, &[input])
    }

    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid("clamp", format!("lower bound {lo} above upper bound {hi}")));
        }
        let value = self.value(input).map(|v| v.clamp(lo, hi));
        self.push("clamp", value, Op::Clamp { input, lo, hi }, &[input])
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let value = spatial::upsample_forward(self.value(input), factor)?;
        self.push("upsample_nearest", value, Op::UpsampleNearest { input, factor }, &[input])
    }

    /// Moves `factor²` channel groups into `factor x factor` spatial blocks.
    pub fn pixel_shuffle(&mut self, input: Var, factor: usize) -> Result<Var> {
        let value = spatial::pixel_shuffle_forward(self.value(input), factor)?;
        self.push("pixel_shuffle", value, Op::PixelShuffle { input, factor }, &[input])
    }

    /// Horizontal bilinear resampling of `source`: output column `j` reads
    /// `source` at `j + offset * width`, clamped to the border. Offsets are
    /// `(n, 1, h, w)` in fractions of the image width.
    pub fn grid_sample_bilinear(&mut self, source: Var, offsets: Var) -> Result<Var> {
        let value = sample::forward(self.value(source), self.value(offsets))?;
        self.push("grid_sample_bilinear", value, Op::GridSample { source, offsets }, &[source, offsets])
    }

    /// Reduces over `axes`, keeping them as extent-1 dimensions.
    pub fn reduce(&mut self, input: Var, kind: ReduceKind, axes: &[usize]) -> Result<Var> {
        let value = reduce::forward(self.value(input), kind, axes)?;
        self.push("reduce", value, Op::Reduce { input, kind }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        self.reduce(input, ReduceKind::Mean, &[0, 1, 2, 3])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.reduce(input, ReduceKind::Sum, &[0, 1, 2, 3])
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let value = spatial::concat_forward(&values)?;
        self.push("concat_channels", value, Op::Concat { inputs: inputs.to_vec() }, inputs)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = spatial::narrow_forward(self.value(input), axis, start, len)?;
        self.push("narrow", value, Op::Narrow { input, axis, start }, &[input])
    }

    /// Unpadded average pooling over `kernel x kernel` windows.
    pub fn avg_pool(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let value = spatial::avg_pool_forward(self.value(input), kernel, stride)?;
        self.push("avg_pool", value, Op::AvgPool { input, kernel, stride }, &[input])
    }

    pub fn flip_horizontal(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).flip_horizontal();
        self.push("flip_horizontal", value, Op::FlipHorizontal { input }, &[input])
    }

    // ---- backward -------------------------------------------------------

    /// Accumulates `d loss / d leaf` into every differentiable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != Shape::SCALAR {
            return Err(Error::NonScalarLoss(shape));
        }
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(upstream) = adjoints[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut sink = Sink {
                nodes: &self.nodes,
                adjoints: &mut adjoints,
            };
            match &node.op {
                Op::Leaf => {
                    let slot = self.leaf_grads[id].get_or_insert_with(|| vec![0.0; upstream.len()]);
                    slot.iter_mut().zip(&upstream).for_each(|(s, g)| *s += g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                    cols,
                } => conv::backward(&mut sink, &upstream, *input, *weight, *bias, *stride, *pad, cols),
                Op::Unary { input, kind } => {
                    let x = self.nodes[input.0].value.data();
                    let y = node.value.data();
                    sink.accumulate(*input, |g| pointwise::unary_backward(*kind, x, y, &upstream, g));
                }
                Op::Binary { lhs, rhs, kind } => pointwise::binary_backward(&mut sink, &upstream, *lhs, *rhs, *kind, node.value.shape()),
                Op::Scale { input, factor } => {
                    sink.accumulate(*input, |g| g.iter_mut().zip(&upstream).for_each(|(s, u)| *s += u * factor));
                }
                Op::AddScalar { input } => {
                    sink.accumulate(*input, |g| g.iter_mut().zip(&upstream).for_each(|(s, u)| *s += u));
                }
                Op::Clamp { input, lo, hi } => {
                    let x = self.nodes[input.0].value.data();
                    sink.accumulate(*input, |g| {
                        for ((s, u), &xv) in g.iter_mut().zip(&upstream).zip(x) {
                            if xv > *lo && xv < *hi {
                                *s += u;
                            }
                        }
                    });
                }
                Op::UpsampleNearest { input, factor } => {
                    let in_shape = self.nodes[input.0].value.shape();
                    sink.accumulate(*input, |g| spatial::upsample_backward(in_shape, *factor, &upstream, g));
                }
                Op::PixelShuffle { input, factor } => {
                    let in_shape = self.nodes[input.0].value.shape();
                    sink.accumulate(*input, |g| spatial::pixel_shuffle_backward(in_shape, *factor, &upstream, g));
                }
                Op::GridSample { source, offsets } => sample::backward(&mut sink, &upstream, *source, *offsets),
                Op::Reduce { input, kind } => {
                    let in_shape = self.nodes[input.0].value.shape();
                    let out_shape = node.value.shape();
                    sink.accumulate(*input, |g| reduce::backward(*kind, in_shape, out_shape, &upstream, g));
                }
                Op::Concat { inputs } => spatial::concat_backward(&mut sink, &upstream, inputs, node.value.shape()),
                Op::Narrow { input, axis, start } => {
                    let in_shape = self.nodes[input.0].value.shape();
                    let out_shape = node.value.shape();
                    sink.accumulate(*input, |g| spatial::narrow_backward(in_shape, out_shape, *axis, *start, &upstream, g));
                }
                Op::AvgPool { input, kernel, stride } => {
                    let in_shape = self.nodes[input.0].value.shape();
                    sink.accumulate(*input, |g| spatial::avg_pool_backward(in_shape, *kernel, *stride, &upstream, g));
                }
                Op::FlipHorizontal { input } => {
                    let w = node.value.shape().w();
                    sink.accumulate(*input, |g| {
                        for (grow, urow) in g.chunks_mut(w).zip(upstream.chunks(w)) {
                            grow.iter_mut().zip(urow.iter().rev()).for_each(|(s, u)| *s += u);
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

/// Gradient accumulator handed to backward rules.
struct Sink<'a> {
    nodes: &'a [Node],
    adjoints: &'a mut [Option<Vec<f64>>],
}

impl Sink<'_> {
    fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Runs `f` on the adjoint buffer of `var` when it needs a gradient.
    fn accumulate(&mut self, var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(var) {
            return;
        }
        let len = self.nodes[var.0].value.numel();
        let buf = self.adjoints[var.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }
}
