//! Hard-coded coordinate channels appended to feature maps.
//!
//! Three channels are produced for an `h x w` map: the row index and the
//! column index, each rescaled linearly to `[-1, 1]`, and the distance
//! `r = sqrt((i - ci)^2 + (j - cj)^2)` from the optical center `(ci, cj)`,
//! divided by its largest value over the four corner pixels so it spans
//! `[0, 1]`. The center defaults to `(h/2, w/2)`.

use crate::tensor::{Shape, Tensor};

fn ramp(i: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (extent - 1) as f64 - 1.0
    }
}

/// Unnormalized distance of pixel `(i, j)` from `center`.
pub fn raw_radius(i: usize, j: usize, center: (f64, f64)) -> f64 {
    let di = i as f64 - center.0;
    let dj = j as f64 - center.1;
    (di * di + dj * dj).sqrt()
}

pub fn default_center(h: usize, w: usize) -> (f64, f64) {
    (h as f64 / 2.0, w as f64 / 2.0)
}

/// `(n, 3, h, w)` tensor holding the i, j and radius channels.
pub fn coord_channels(n: usize, h: usize, w: usize, center: (f64, f64)) -> Tensor {
    let corners = [(0, 0), (0, w.saturating_sub(1)), (h.saturating_sub(1), 0), (h.saturating_sub(1), w.saturating_sub(1))];
    let max_r = corners.iter().map(|&(i, j)| raw_radius(i, j, center)).fold(0.0, f64::max);
    let norm = if max_r > 0.0 { max_r } else { 1.0 };
    Tensor::from_fn(Shape::new(n, 3, h, w), |_, c, i, j| match c {
        0 => ramp(i, h),
        1 => ramp(j, w),
        _ => raw_radius(i, j, center) / norm,
    })
}
