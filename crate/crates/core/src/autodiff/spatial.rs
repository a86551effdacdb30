use super::{Sink, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub(super) fn upsample_forward(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::invalid("upsample_nearest", "factor must be at least 1"));
    }
    let s = input.shape();
    let out = s.with_spatial(s.h() * factor, s.w() * factor);
    let src = input.data();
    let (h, w) = (s.h(), s.w());
    let ow = out.w();
    let mut data = vec![0.0; out.numel()];
    for plane in 0..s.n() * s.c() {
        for oy in 0..out.h() {
            let srow = &src[(plane * h + oy / factor) * w..][..w];
            let drow = &mut data[(plane * out.h() + oy) * ow..][..ow];
            for (ox, d) in drow.iter_mut().enumerate() {
                *d = srow[ox / factor];
            }
        }
    }
    Tensor::new(out, data)
}

pub(super) fn upsample_backward(input: Shape, factor: usize, upstream: &[f64], grad: &mut [f64]) {
    let (h, w) = (input.h(), input.w());
    let (oh, ow) = (h * factor, w * factor);
    for plane in 0..input.n() * input.c() {
        for oy in 0..oh {
            let urow = &upstream[(plane * oh + oy) * ow..][..ow];
            let grow = &mut grad[(plane * h + oy / factor) * w..][..w];
            for (ox, u) in urow.iter().enumerate() {
                grow[ox / factor] += u;
            }
        }
    }
}

/// Index of the input element feeding each output element of a shuffle.
fn shuffle_map(input: Shape, factor: usize, mut f: impl FnMut(usize, usize)) {
    let [n, c, h, w] = input.0;
    let oc = c / (factor * factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut o = 0;
    for b in 0..n {
        for ch in 0..oc {
            for y in 0..oh {
                for x in 0..ow {
                    let src_c = ch * factor * factor + (y % factor) * factor + (x % factor);
                    let src = ((b * c + src_c) * h + y / factor) * w + x / factor;
                    f(o, src);
                    o += 1;
                }
            }
        }
    }
}

fn shuffle_shape(input: Shape, factor: usize) -> Result<Shape> {
    if factor == 0 || !input.c().is_multiple_of(factor * factor) {
        return Err(Error::invalid(
            "pixel_shuffle",
            format!("{} channels not divisible by factor² = {}", input.c(), factor * factor),
        ));
    }
    Ok(Shape::new(input.n(), input.c() / (factor * factor), input.h() * factor, input.w() * factor))
}

pub(super) fn pixel_shuffle_forward(input: &Tensor, factor: usize) -> Result<Tensor> {
    let out = shuffle_shape(input.shape(), factor)?;
    let src = input.data();
    let mut data = vec![0.0; out.numel()];
    shuffle_map(input.shape(), factor, |o, i| data[o] = src[i]);
    Tensor::new(out, data)
}

pub(super) fn pixel_shuffle_backward(input: Shape, factor: usize, upstream: &[f64], grad: &mut [f64]) {
    shuffle_map(input, factor, |o, i| grad[i] += upstream[o]);
}

/// Inverse of pixel shuffle: `(n, c, h·r, w·r)` back to `(n, c·r², h, w)`.
pub fn pixel_unshuffle(input: &Tensor, factor: usize) -> Result<Tensor> {
    let s = input.shape();
    if factor == 0 || !s.h().is_multiple_of(factor) || !s.w().is_multiple_of(factor) {
        return Err(Error::invalid(
            "pixel_unshuffle",
            format!("spatial extents of {s} not divisible by {factor}"),
        ));
    }
    let packed = Shape::new(s.n(), s.c() * factor * factor, s.h() / factor, s.w() / factor);
    let src = input.data();
    let mut data = vec![0.0; packed.numel()];
    shuffle_map(packed, factor, |o, i| data[i] = src[o]);
    Tensor::new(packed, data)
}

pub(super) fn concat_forward(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?
        .shape();
    for t in inputs {
        let s = t.shape();
        if s.n() != first.n() || s.h() != first.h() || s.w() != first.w() {
            return Err(Error::shape("concat_channels", format!("{s} does not match {first} outside the channel axis")));
        }
    }
    let channels: usize = inputs.iter().map(|t| t.shape().c()).sum();
    let out = first.with_channels(channels);
    let mut data = Vec::with_capacity(out.numel());
    for b in 0..first.n() {
        for t in inputs {
            let len = t.shape().c() * first.h() * first.w();
            data.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
        }
    }
    Tensor::new(out, data)
}

pub(super) fn concat_backward(sink: &mut Sink<'_>, upstream: &[f64], inputs: &[Var], out: Shape) {
    let plane = out.h() * out.w();
    let mut start = 0;
    for &var in inputs {
        let c = sink.value(var).shape().c();
        let len = c * plane;
        sink.accumulate(var, |g| {
            for b in 0..out.n() {
                let src = &upstream[(b * out.c() + start) * plane..][..len];
                g[b * len..(b + 1) * len].iter_mut().zip(src).for_each(|(s, u)| *s += u);
            }
        });
        start += c;
    }
}

pub(super) fn narrow_forward(input: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let s = input.shape();
    if axis >= 4 || start + len > s.0[axis] {
        return Err(Error::invalid("narrow", format!("range {start}..{} on axis {axis} of {s}", start + len)));
    }
    let mut extents = s.0;
    extents[axis] = len;
    let out = Shape(extents);
    let mut data = Vec::with_capacity(out.numel());
    narrow_map(s, out, axis, start, |i| data.push(input.data()[i]));
    Tensor::new(out, data)
}

fn narrow_map(input: Shape, out: Shape, axis: usize, start: usize, mut f: impl FnMut(usize)) {
    let is = input.strides();
    let mut shift = [0; 4];
    shift[axis] = start;
    let [n, c, h, w] = out.0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let base = (i0 + shift[0]) * is[0] + (i1 + shift[1]) * is[1] + (i2 + shift[2]) * is[2] + shift[3];
                for i3 in 0..w {
                    f(base + i3);
                }
            }
        }
    }
}

pub(super) fn narrow_backward(input: Shape, out: Shape, axis: usize, start: usize, upstream: &[f64], grad: &mut [f64]) {
    let mut o = 0;
    narrow_map(input, out, axis, start, |i| {
        grad[i] += upstream[o];
        o += 1;
    });
}

fn pool_shape(input: Shape, kernel: usize, stride: usize) -> Result<Shape> {
    if kernel == 0 || stride == 0 || input.h() < kernel || input.w() < kernel {
        return Err(Error::invalid(
            "avg_pool",
            format!("kernel {kernel} stride {stride} does not fit {input}"),
        ));
    }
    Ok(input.with_spatial((input.h() - kernel) / stride + 1, (input.w() - kernel) / stride + 1))
}

pub(super) fn avg_pool_forward(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let s = input.shape();
    let out = pool_shape(s, kernel, stride)?;
    let norm = 1.0 / (kernel * kernel) as f64;
    let src = input.data();
    let mut data = vec![0.0; out.numel()];
    let (h, w) = (s.h(), s.w());
    for plane in 0..s.n() * s.c() {
        for oy in 0..out.h() {
            for ox in 0..out.w() {
                let mut acc = 0.0;
                for ky in 0..kernel {
                    let row = &src[(plane * h + oy * stride + ky) * w + ox * stride..][..kernel];
                    acc += row.iter().sum::<f64>();
                }
                data[(plane * out.h() + oy) * out.w() + ox] = acc * norm;
            }
        }
    }
    Tensor::new(out, data)
}

pub(super) fn avg_pool_backward(input: Shape, kernel: usize, stride: usize, upstream: &[f64], grad: &mut [f64]) {
    let out = pool_shape(input, kernel, stride).expect("validated in forward");
    let norm = 1.0 / (kernel * kernel) as f64;
    let (h, w) = (input.h(), input.w());
    for plane in 0..input.n() * input.c() {
        for oy in 0..out.h() {
            for ox in 0..out.w() {
                let u = upstream[(plane * out.h() + oy) * out.w() + ox] * norm;
                for ky in 0..kernel {
                    let row = &mut grad[(plane * h + oy * stride + ky) * w + ox * stride..][..kernel];
                    row.iter_mut().for_each(|g| *g += u);
                }
            }
        }
    }
}
