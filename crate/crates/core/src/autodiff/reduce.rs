use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Sum,
}

fn reduced_shape(input: Shape, axes: &[usize]) -> Result<Shape> {
    let mut out = input.0;
    for &axis in axes {
        if axis >= 4 {
            return Err(Error::invalid("reduce", format!("axis {axis} out of range")));
        }
        out[axis] = 1;
    }
    if axes.iter().any(|&a| input.0[a] == 0) {
        return Err(Error::invalid("reduce", format!("empty reduction extent in {input}")));
    }
    Ok(Shape(out))
}

/// Output index of each input element.
fn project(input: Shape, out: Shape, mut f: impl FnMut(usize, usize)) {
    let os = out.strides();
    let keep = |d: usize, i: usize| if out.0[d] == 1 { 0 } else { i * os[d] };
    let [n, c, h, w] = input.0;
    let mut idx = 0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let base = keep(0, i0) + keep(1, i1) + keep(2, i2);
                for i3 in 0..w {
                    f(idx, base + keep(3, i3));
                    idx += 1;
                }
            }
        }
    }
}

pub(super) fn forward(input: &Tensor, kind: ReduceKind, axes: &[usize]) -> Result<Tensor> {
    let out = reduced_shape(input.shape(), axes)?;
    let mut data = vec![0.0; out.numel()];
    let x = input.data();
    project(input.shape(), out, |i, o| data[o] += x[i]);
    if kind == ReduceKind::Mean {
        let count = (input.numel() / out.numel().max(1)) as f64;
        data.iter_mut().for_each(|v| *v /= count);
    }
    Tensor::new(out, data)
}

pub(super) fn backward(kind: ReduceKind, input: Shape, out: Shape, upstream: &[f64], grad: &mut [f64]) {
    let scale = match kind {
        ReduceKind::Sum => 1.0,
        ReduceKind::Mean => out.numel() as f64 / input.numel() as f64,
    };
    project(input, out, |i, o| grad[i] += upstream[o] * scale);
}
