use super::{Sink, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum UnaryKind {
    Elu,
    Sigmoid,
    Abs,
    Exp,
    Square,
}

impl UnaryKind {
    pub(super) fn name(self) -> &'static str {
        match self {
            UnaryKind::Elu => "elu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Abs => "abs",
            UnaryKind::Exp => "exp",
            UnaryKind::Square => "square",
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(super) fn unary_forward(input: &Tensor, kind: UnaryKind) -> Tensor {
    match kind {
        UnaryKind::Elu => input.map(|x| if x > 0.0 { x } else { x.exp_m1() }),
        UnaryKind::Sigmoid => input.map(sigmoid),
        UnaryKind::Abs => input.map(f64::abs),
        UnaryKind::Exp => input.map(f64::exp),
        UnaryKind::Square => input.map(|x| x * x),
    }
}

pub(super) fn unary_backward(kind: UnaryKind, x: &[f64], y: &[f64], upstream: &[f64], grad: &mut [f64]) {
    let local: fn(f64, f64) -> f64 = match kind {
        UnaryKind::Elu => |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        UnaryKind::Sigmoid => |_, y| y * (1.0 - y),
        UnaryKind::Abs => |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        },
        UnaryKind::Exp => |_, y| y,
        UnaryKind::Square => |x, _| 2.0 * x,
    };
    for i in 0..grad.len() {
        grad[i] += upstream[i] * local(x[i], y[i]);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    pub(super) fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

pub(crate) fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = match (a.0[d], b.0[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(op, format!("cannot broadcast {a} with {b}")));
            }
        };
    }
    Ok(Shape(out))
}

/// Strides of `shape` viewed inside `out`, zero on broadcast axes.
fn view_strides(shape: Shape, out: Shape) -> [usize; 4] {
    let mut s = shape.strides();
    for d in 0..4 {
        if shape.0[d] == 1 && out.0[d] != 1 {
            s[d] = 0;
        }
    }
    s
}

/// Calls `f(out_index, lhs_index, rhs_index)` for every output element.
fn for_each_broadcast(out: Shape, a: Shape, b: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let sa = view_strides(a, out);
    let sb = view_strides(b, out);
    let [n, c, h, w] = out.0;
    let mut o = 0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let ra = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let rb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..w {
                    f(o, ra + i3 * sa[3], rb + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

pub(super) fn binary_forward(a: &Tensor, b: &Tensor, kind: BinaryKind) -> Result<Tensor> {
    let out = broadcast_shape(kind.name(), a.shape(), b.shape())?;
    let (x, y) = (a.data(), b.data());
    let mut data = vec![0.0; out.numel()];
    if a.shape() == b.shape() {
        for i in 0..data.len() {
            data[i] = apply(kind, x[i], y[i]);
        }
    } else {
        for_each_broadcast(out, a.shape(), b.shape(), |o, i, j| data[o] = apply(kind, x[i], y[j]));
    }
    Tensor::new(out, data)
}

#[inline]
fn apply(kind: BinaryKind, x: f64, y: f64) -> f64 {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    }
}

pub(super) fn binary_backward(sink: &mut Sink<'_>, upstream: &[f64], lhs: Var, rhs: Var, kind: BinaryKind, out: Shape) {
    let a = sink.value(lhs).clone();
    let b = sink.value(rhs).clone();
    let (x, y) = (a.data(), b.data());

    sink.accumulate(lhs, |g| {
        for_each_broadcast(out, a.shape(), b.shape(), |o, i, j| {
            g[i] += upstream[o]
                * match kind {
                    BinaryKind::Add | BinaryKind::Sub => 1.0,
                    BinaryKind::Mul => y[j],
                    BinaryKind::Div => 1.0 / y[j],
                };
        })
    });
    sink.accumulate(rhs, |g| {
        for_each_broadcast(out, a.shape(), b.shape(), |o, i, j| {
            g[j] += upstream[o]
                * match kind {
                    BinaryKind::Add => 1.0,
                    BinaryKind::Sub => -1.0,
                    BinaryKind::Mul => x[i],
                    BinaryKind::Div => -x[i] / (y[j] * y[j]),
                };
        })
    });
}
