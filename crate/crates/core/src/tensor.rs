//! Dense rank-4 `(batch, channels, height, width)` arrays of `f64`.
//!
//! A [`Tensor`] is an immutable value once built: storage sits behind an
//! `Arc`, so cloning is cheap and tensors can be handed between threads.
//! Gradients are not stored here; they live in the [`crate::autodiff::Graph`]
//! that recorded the operations.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Extents in `(batch, channels, height, width)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }

    pub fn c(&self) -> usize {
        self.0[1]
    }

    pub fn h(&self) -> usize {
        self.0[2]
    }

    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> [usize; 4] {
        let [_, c, h, w] = self.0;
        [c * h * w, h * w, w, 1]
    }

    pub fn with_channels(&self, c: usize) -> Self {
        Shape([self.0[0], c, self.0[2], self.0[3]])
    }

    pub fn with_spatial(&self, h: usize, w: usize) -> Self {
        Shape([self.0[0], self.0[1], h, w])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("numel", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![value; shape.numel()]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f(ni, ci, hi, wi));
                    }
                }
            }
        }
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; copies the storage if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape.0;
        ((n * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(n, c, h, w)]
    }

    /// The single value of a `1x1x1x1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape != Shape::SCALAR {
            return Err(Error::shape("item", format!("expected scalar, got {}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Splits along the channel axis into pieces of the given widths.
    pub fn split_channels(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        let total: usize = widths.iter().sum();
        if total != self.shape.c() {
            return Err(Error::shape(
                "split_channels",
                format!("widths sum to {total}, tensor has {} channels", self.shape.c()),
            ));
        }
        let plane = self.shape.h() * self.shape.w();
        let mut out = Vec::with_capacity(widths.len());
        let mut start = 0;
        for &width in widths {
            let shape = self.shape.with_channels(width);
            let mut data = Vec::with_capacity(shape.numel());
            for n in 0..self.shape.n() {
                let base = self.offset(n, start, 0, 0);
                data.extend_from_slice(&self.data[base..base + width * plane]);
            }
            out.push(Tensor::new(shape, data)?);
            start += width;
        }
        Ok(out)
    }

    /// Mirrors every row (left-right flip).
    pub fn flip_horizontal(&self) -> Tensor {
        let w = self.shape.w();
        let mut data = self.data.as_ref().clone();
        for row in data.chunks_mut(w.max(1)) {
            row.reverse();
        }
        Tensor {
            shape: self.shape,
            data: Arc::new(data),
        }
    }

    /// Concatenates along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::invalid("stack", "no tensors"))?.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.0[1..] != first.0[1..] {
                return Err(Error::shape("stack", format!("{} vs {}", t.shape, first)));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n();
        }
        Tensor::new(Shape([n, first.c(), first.h(), first.w()]), data)
    }

    /// Returns a same-shape tensor with one batch item selected.
    pub fn batch_item(&self, n: usize) -> Result<Tensor> {
        if n >= self.shape.n() {
            return Err(Error::invalid(
                "batch_item",
                format!("index {n} out of range for batch {}", self.shape.n()),
            ));
        }
        let len = self.shape.numel() / self.shape.n();
        let shape = Shape([1, self.shape.c(), self.shape.h(), self.shape.w()]);
        Tensor::new(shape, self.data[n * len..(n + 1) * len].to_vec())
    }
}
