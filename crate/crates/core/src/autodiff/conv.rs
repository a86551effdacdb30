// im2col + GEMM convolution.

use matrixmultiply::dgemm;

use super::{Sink, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

struct Geometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn geometry(input: Shape, weight: Shape, bias: Shape, stride: usize, pad: usize) -> Result<Geometry> {
    let [out_c, wc, kh, kw] = weight.0;
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape("conv2d", format!("weight {weight}: kernel must be square with odd size")));
    }
    if wc != input.c() {
        return Err(Error::shape(
            "conv2d",
            format!("input {input} has {} channels, weight {weight} expects {wc}", input.c()),
        ));
    }
    if bias != Shape::new(1, out_c, 1, 1) {
        return Err(Error::shape("conv2d", format!("bias {bias} does not match {out_c} output channels")));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    let (h, w) = (input.h() + 2 * pad, input.w() + 2 * pad);
    if h < kh || w < kw {
        return Err(Error::shape(
            "conv2d",
            format!("input {input} with padding {pad} is smaller than kernel {kh}x{kw}"),
        ));
    }
    Ok(Geometry {
        in_c: input.c(),
        in_h: input.h(),
        in_w: input.w(),
        k: kh,
        out_c,
        out_h: (h - kh) / stride + 1,
        out_w: (w - kw) / stride + 1,
        stride,
        pad,
    })
}

fn im2col(g: &Geometry, image: &[f64], cols: &mut [f64]) {
    let p = g.cols();
    let pad = g.pad as isize;
    for c in 0..g.in_c {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - pad;
                    let line = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if ih < 0 || ih >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                    for (ow, slot) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - pad;
                        *slot = if iw < 0 || iw >= g.in_w as isize { 0.0 } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geometry, cols: &[f64], image: &mut [f64]) {
    let p = g.cols();
    let pad = g.pad as isize;
    for c in 0..g.in_c {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - pad;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                    for ow in 0..g.out_w {
                        let iw = (ow * g.stride + kj) as isize - pad;
                        if iw >= 0 && iw < g.in_w as isize {
                            dst[iw as usize] += src[oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = beta * c + a (m x k) * b (k x n)`, all row-major unless the
/// strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (isize, isize), b: &[f64], b_strides: (isize, isize), beta: f64, c: &mut [f64]) {
    // SAFETY: callers size every buffer to cover the strided extents.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Returns the output and the saved im2col buffers (one per batch item).
pub(super) fn forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<(Tensor, Vec<f64>)> {
    let g = geometry(input.shape(), weight.shape(), bias.shape(), stride, pad)?;
    let n = input.shape().n();
    let (rows, p) = (g.rows(), g.cols());
    let in_len = g.in_c * g.in_h * g.in_w;
    let out_len = g.out_c * p;

    let mut cols = vec![0.0; n * rows * p];
    let mut out = vec![0.0; n * out_len];
    for b in 0..n {
        let item_cols = &mut cols[b * rows * p..(b + 1) * rows * p];
        im2col(&g, &input.data()[b * in_len..(b + 1) * in_len], item_cols);
        let item_out = &mut out[b * out_len..(b + 1) * out_len];
        for (o, row) in item_out.chunks_mut(p).enumerate() {
            row.fill(bias.data()[o]);
        }
        gemm(g.out_c, rows, p, weight.data(), (rows as isize, 1), item_cols, (p as isize, 1), 1.0, item_out);
    }
    let shape = Shape::new(n, g.out_c, g.out_h, g.out_w);
    Ok((Tensor::new(shape, out)?, cols))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(sink: &mut Sink<'_>, upstream: &[f64], input: Var, weight: Var, bias: Var, stride: usize, pad: usize, cols: &[f64]) {
    let in_shape = sink.value(input).shape();
    let w_value = sink.value(weight).clone();
    let g = geometry(in_shape, w_value.shape(), sink.value(bias).shape(), stride, pad)
        .expect("geometry was validated in forward");
    let n = in_shape.n();
    let (rows, p) = (g.rows(), g.cols());
    let in_len = g.in_c * g.in_h * g.in_w;
    let out_len = g.out_c * p;

    sink.accumulate(bias, |db| {
        for b in 0..n {
            for (o, row) in upstream[b * out_len..(b + 1) * out_len].chunks(p).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
    });

    sink.accumulate(weight, |dw| {
        for b in 0..n {
            // dW (out x rows) += dY (out x p) * cols^T (p x rows)
            gemm(
                g.out_c,
                p,
                rows,
                &upstream[b * out_len..(b + 1) * out_len],
                (p as isize, 1),
                &cols[b * rows * p..(b + 1) * rows * p],
                (1, p as isize),
                1.0,
                dw,
            );
        }
    });

    sink.accumulate(input, |dx| {
        let mut dcols = vec![0.0; rows * p];
        for b in 0..n {
            // dcols (rows x p) = W^T (rows x out) * dY (out x p)
            gemm(
                rows,
                g.out_c,
                p,
                w_value.data(),
                (1, rows as isize),
                &upstream[b * out_len..(b + 1) * out_len],
                (p as isize, 1),
                0.0,
                &mut dcols,
            );
            col2im(&g, &dcols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    });
}
