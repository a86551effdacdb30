//! Depth and disparity error metrics and flip post-processing.

use std::fmt;

use crate::error::{Error, Result};
use crate::photometric::disparity_to_depth;
use crate::tensor::Tensor;

/// Depths are floored here before any metric is computed.
pub const MIN_DEPTH: f64 = 1e-3;
pub const DEFAULT_CAP: f64 = 80.0;
/// Width of each post-processing blend band, as a fraction of image width.
pub const PP_BAND: f64 = 0.05;

pub const CSV_HEADER: &str = "abs_rel,sq_rel,rmse,rmse_log,d1_all,delta1,delta2,delta3";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    /// Meters.
    pub rmse: f64,
    pub rmse_log: f64,
    /// Percent of outlier pixels; only known when disparities were compared.
    pub d1_all: Option<f64>,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    /// Checks finiteness, ranges and delta ordering.
    pub fn validate(&self) -> Result<()> {
        let errors = [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log];
        let deltas = [self.delta1, self.delta2, self.delta3];
        let ok = errors.iter().all(|v| v.is_finite() && *v >= 0.0)
            && deltas.iter().all(|v| (0.0..=1.0).contains(v))
            && self.delta1 <= self.delta2
            && self.delta2 <= self.delta3
            && self.d1_all.is_none_or(|d| (0.0..=100.0).contains(&d));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("metrics", format!("inconsistent report {self:?}")))
        }
    }

    /// Field-wise mean; `d1_all` is kept only when every report has it.
    pub fn mean(reports: &[DepthMetrics]) -> Result<DepthMetrics> {
        if reports.is_empty() {
            return Err(Error::invalid("metrics", "no reports to average"));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&DepthMetrics) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let d1: Option<Vec<f64>> = reports.iter().map(|r| r.d1_all).collect();
        Ok(DepthMetrics {
            abs_rel: avg(|r| r.abs_rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: avg(|r| r.rmse),
            rmse_log: avg(|r| r.rmse_log),
            d1_all: d1.map(|v| v.iter().sum::<f64>() / n),
            delta1: avg(|r| r.delta1),
            delta2: avg(|r| r.delta2),
            delta3: avg(|r| r.delta3),
        })
    }
}

/// One CSV row in [`CSV_HEADER`] order; an unknown `d1_all` prints as `-`.
impl fmt::Display for DepthMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d1 = self.d1_all.map_or_else(|| "-".to_owned(), |d| format!("{d:.6}"));
        write!(
            f,
            "{:.6},{:.6},{:.6},{:.6},{d1},{:.6},{:.6},{:.6}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3
        )
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.shape() != mask.shape() {
        return Err(Error::shape(op, format!("{} vs {} with mask {}", a.shape(), b.shape(), mask.shape())));
    }
    Ok(())
}

/// Metrics over pixels where `mask` is non-zero and ground truth is positive.
/// Both depths are clamped to `[MIN_DEPTH, cap]` first.
/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Default)]
struct Sum {
    total: f64,
    carry: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.total + x;
        if self.total.abs() >= x.abs() {
            self.carry += (self.total - t) + x;
        } else {
            self.carry += (x - t) + self.total;
        }
        self.total = t;
    }

    fn value(self) -> f64 {
        self.total + self.carry
    }
}

pub fn compute_metrics(pred_depth: &Tensor, gt_depth: &Tensor, mask: &Tensor, cap: f64) -> Result<DepthMetrics> {
    check_same("compute_metrics", pred_depth, gt_depth, mask)?;
    if !(cap > MIN_DEPTH) {
        return Err(Error::invalid("compute_metrics", format!("cap {cap} must exceed {MIN_DEPTH}")));
    }
    let mut n = 0usize;
    let [mut abs_rel, mut sq_rel, mut sq, mut sq_log] = [Sum::default(); 4];
    let mut within = [0usize; 3];
    for ((&p, &g), &m) in pred_depth.data().iter().zip(gt_depth.data()).zip(mask.data()) {
        if m == 0.0 || !(g > 0.0) {
            continue;
        }
        if !p.is_finite() {
            return Err(Error::NonFinite { op: "compute_metrics" });
        }
        let p = p.clamp(MIN_DEPTH, cap);
        let g = g.clamp(MIN_DEPTH, cap);
        let diff = p - g;
        n += 1;
        abs_rel.add(diff.abs() / g);
        sq_rel.add(diff * diff / g);
        sq.add(diff * diff);
        sq_log.add((p.ln() - g.ln()).powi(2));
        let ratio = (p / g).max(g / p);
        for (k, count) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *count += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("compute_metrics", "mask selects no pixels with positive ground truth"));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel.value() / nf,
        sq_rel: sq_rel.value() / nf,
        rmse: (sq.value() / nf).sqrt(),
        rmse_log: (sq_log.value() / nf).sqrt(),
        d1_all: None,
        delta1: within[0] as f64 / nf,
        delta2: within[1] as f64 / nf,
        delta3: within[2] as f64 / nf,
    })
}

/// Percent of masked pixels whose error exceeds both 3 px and 5% of ground truth.
pub fn compute_d1(pred_disp: &Tensor, gt_disp: &Tensor, mask: &Tensor) -> Result<f64> {
    check_same("compute_d1", pred_disp, gt_disp, mask)?;
    let (mut n, mut bad) = (0usize, 0usize);
    for ((&p, &g), &m) in pred_disp.data().iter().zip(gt_disp.data()).zip(mask.data()) {
        if m == 0.0 {
            continue;
        }
        n += 1;
        let err = (p - g).abs();
        if err > 3.0 && err > 0.05 * g.abs() {
            bad += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("compute_d1", "empty mask"));
    }
    Ok(100.0 * bad as f64 / n as f64)
}

/// Mean |pred - gt| over masked pixels.
pub fn mean_abs_error(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<f64> {
    check_same("mean_abs_error", pred, gt, mask)?;
    let (n, sum) = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .filter(|(_, &m)| m != 0.0)
        .fold((0usize, 0.0), |(n, s), ((p, g), _)| (n + 1, s + (p - g).abs()));
    if n == 0 {
        return Err(Error::invalid("mean_abs_error", "empty mask"));
    }
    Ok(sum / n as f64)
}

/// Full report for one sample from pixel disparities. Pixels with zero
/// ground truth are ignored.
pub fn evaluate_disparity(pred_px: &Tensor, gt_px: &Tensor, baseline: f64, focal: f64, cap: f64) -> Result<DepthMetrics> {
    let mask = gt_px.map(|g| if g > 0.0 { 1.0 } else { 0.0 });
    let mut m = compute_metrics(
        &disparity_to_depth(pred_px, baseline, focal),
        &disparity_to_depth(gt_px, baseline, focal),
        &mask,
        cap,
    )?;
    m.d1_all = Some(compute_d1(pred_px, gt_px, &mask)?);
    Ok(m)
}

/// Blends a disparity map with the un-mirrored map of the flipped image.
/// Near the left border the un-mirrored map wins, near the right border the
/// direct map wins, and the middle is their average.
pub fn postprocess(disp: &Tensor, disp_of_flipped: &Tensor) -> Result<Tensor> {
    if disp.shape() != disp_of_flipped.shape() {
        return Err(Error::shape(
            "postprocess",
            format!("{} vs {}", disp.shape(), disp_of_flipped.shape()),
        ));
    }
    let unflipped = disp_of_flipped.flip_horizontal();
    let w = disp.shape().w();
    let left_weight = |x: usize| {
        let t = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 };
        1.0 - ((t - PP_BAND) / PP_BAND).clamp(0.0, 1.0)
    };
    Ok(Tensor::from_fn(disp.shape(), |n, c, y, x| {
        let l = left_weight(x);
        let r = left_weight(w - 1 - x);
        let (a, b) = (disp.at(n, c, y, x), unflipped.at(n, c, y, x));
        r * a + l * b + (1.0 - l - r) * 0.5 * (a + b)
    }))
}
