// Horizontal bilinear sampler for rectified stereo warps.

use super::{Sink, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn check(source: Shape, offsets: Shape) -> Result<()> {
    if offsets != Shape::new(source.n(), 1, source.h(), source.w()) {
        return Err(Error::shape(
            "grid_sample_bilinear",
            format!("offsets {offsets} must be {}x1x{}x{} for source {source}", source.n(), source.h(), source.w()),
        ));
    }
    if source.w() == 0 {
        return Err(Error::shape("grid_sample_bilinear", "source has zero width"));
    }
    Ok(())
}

/// Sample position for output column `j`: left tap, right tap, weight of the
/// right tap, and whether the position was inside the border.
#[inline]
fn taps(j: usize, offset: f64, width: usize) -> (usize, usize, f64, bool) {
    let last = (width - 1) as f64;
    let x = j as f64 + offset * width as f64;
    let inside = (0.0..=last).contains(&x);
    let xc = x.clamp(0.0, last);
    let x0 = xc.floor();
    let i0 = x0 as usize;
    let i1 = (i0 + 1).min(width - 1);
    (i0, i1, xc - x0, inside)
}

pub(super) fn forward(source: &Tensor, offsets: &Tensor) -> Result<Tensor> {
    let shape = source.shape();
    check(shape, offsets.shape())?;
    let [n, c, h, w] = shape.0;
    let src = source.data();
    let off = offsets.data();
    let mut out = vec![0.0; shape.numel()];
    for b in 0..n {
        for i in 0..h {
            let orow = &off[(b * h + i) * w..(b * h + i + 1) * w];
            for ch in 0..c {
                let base = ((b * c + ch) * h + i) * w;
                let srow = &src[base..base + w];
                for j in 0..w {
                    let (i0, i1, a, _) = taps(j, orow[j], w);
                    out[base + j] = (1.0 - a) * srow[i0] + a * srow[i1];
                }
            }
        }
    }
    Tensor::new(shape, out)
}

pub(super) fn backward(sink: &mut Sink<'_>, upstream: &[f64], source: Var, offsets: Var) {
    let src_t = sink.value(source).clone();
    let off_t = sink.value(offsets).clone();
    let [n, c, h, w] = src_t.shape().0;
    let (src, off) = (src_t.data(), off_t.data());

    sink.accumulate(source, |g| {
        for b in 0..n {
            for i in 0..h {
                let orow = &off[(b * h + i) * w..(b * h + i + 1) * w];
                for ch in 0..c {
                    let base = ((b * c + ch) * h + i) * w;
                    for j in 0..w {
                        let (i0, i1, a, _) = taps(j, orow[j], w);
                        let u = upstream[base + j];
                        g[base + i0] += u * (1.0 - a);
                        g[base + i1] += u * a;
                    }
                }
            }
        }
    });

    sink.accumulate(offsets, |g| {
        let scale = w as f64;
        for b in 0..n {
            for i in 0..h {
                let obase = (b * h + i) * w;
                for j in 0..w {
                    let (i0, i1, _, inside) = taps(j, off[obase + j], w);
                    if !inside {
                        continue;
                    }
                    let mut acc = 0.0;
                    for ch in 0..c {
                        let base = ((b * c + ch) * h + i) * w;
                        acc += upstream[base + j] * (src[base + i1] - src[base + i0]);
                    }
                    g[obase + j] += acc * scale;
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use crate::autodiff::Graph;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn zero_offsets_are_identity_bit_exact() {
        let src = Tensor::from_fn(Shape::new(2, 3, 4, 5), |n, c, h, w| ((n * 7 + c * 3 + h) as f64).sin() * w as f64 + 0.1);
        let mut g = Graph::new();
        let s = g.constant(src.clone());
        let o = g.constant(Tensor::zeros(Shape::new(2, 1, 4, 5)));
        let y = g.grid_sample_bilinear(s, o).unwrap();
        assert_eq!(g.value(y), &src);
    }

    #[test]
    fn ramp_shifted_by_one_pixel_clamps_at_border() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(Shape::new(1, 1, 1, 4), vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let o = g.constant(Tensor::full(Shape::new(1, 1, 1, 4), 0.25));
        let y = g.grid_sample_bilinear(s, o).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn half_pixel_offset_interpolates() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(Shape::new(1, 1, 1, 4), vec![0.0, 2.0, 4.0, 8.0]).unwrap());
        let o = g.constant(Tensor::full(Shape::new(1, 1, 1, 4), -0.125));
        let y = g.grid_sample_bilinear(s, o).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 3.0, 6.0]);
    }

    #[test]
    fn rejects_offsets_with_channels() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::zeros(Shape::new(1, 3, 2, 2)));
        let o = g.constant(Tensor::zeros(Shape::new(1, 3, 2, 2)));
        assert!(g.grid_sample_bilinear(s, o).is_err());
    }
}
