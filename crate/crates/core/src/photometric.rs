//! View synthesis and the self-supervised training objective.
//!
//! Disparities are in fractions of the image width. A left-view pixel at
//! column `x` with disparity `d` appears in the right view at `x - d·W`, so
//! the left view is rebuilt by sampling the right image at `-d` and the
//! right view by sampling the left image at `+d`.

use crate::arch::{DisparitySet, NUM_SCALES};
use crate::autodiff::{Graph, ReduceKind, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Smallest disparity, in pixels, used in depth conversion.
pub const DEPTH_EPS: f64 = 1e-6;

/// A rectified stereo pair with calibration.
#[derive(Clone, Debug)]
pub struct StereoSample {
    pub left: Tensor,
    pub right: Tensor,
    /// Camera separation in meters.
    pub baseline: f64,
    /// Focal length in pixels.
    pub focal: f64,
    /// Left-view disparity in pixels, evaluation only.
    pub gt_disparity: Option<Tensor>,
}

impl StereoSample {
    pub fn new(left: Tensor, right: Tensor, baseline: f64, focal: f64, gt_disparity: Option<Tensor>) -> Result<Self> {
        if left.shape() != right.shape() {
            return Err(Error::shape("stereo sample", format!("left {} vs right {}", left.shape(), right.shape())));
        }
        if !(baseline > 0.0 && focal > 0.0) {
            return Err(Error::invalid("stereo sample", format!("baseline {baseline} and focal {focal} must be positive")));
        }
        if let Some(gt) = &gt_disparity {
            let s = left.shape();
            if gt.shape() != Shape::new(s.n(), 1, s.h(), s.w()) {
                return Err(Error::shape("stereo sample", format!("ground truth {} for images {s}", gt.shape())));
            }
        }
        Ok(StereoSample {
            left,
            right,
            baseline,
            focal,
            gt_disparity,
        })
    }

    pub fn width(&self) -> usize {
        self.left.shape().w()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_ssim: f64,
    /// Scaled by `1/2^s` at scale `s`.
    pub smoothness: f64,
    pub lr_consistency: f64,
    pub occlusion: f64,
    pub scale_factors: [f64; NUM_SCALES],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_ssim: 0.85,
            smoothness: 0.1,
            lr_consistency: 1.0,
            occlusion: 0.01,
            scale_factors: [1.0, 0.5, 0.25, 0.125],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_ssim) {
            return Err(Error::Config(format!("loss.alpha_ssim must lie in [0, 1], got {}", self.alpha_ssim)));
        }
        let rest = [self.smoothness, self.lr_consistency, self.occlusion];
        if rest.iter().chain(&self.scale_factors).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Which auxiliary terms enter the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub appearance: bool,
    pub smoothness: bool,
    pub lr_consistency: bool,
    pub occlusion: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        appearance: true,
        smoothness: true,
        lr_consistency: true,
        occlusion: true,
    };

    /// Final fine-tuning stage: no smoothness and no occlusion regularizer.
    pub const FINE_TUNE: LossTerms = LossTerms {
        appearance: true,
        smoothness: false,
        lr_consistency: true,
        occlusion: false,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Rebuild the left view from the right image.
    Left,
    /// Rebuild the right view from the left image.
    Right,
}

pub fn reconstruct(g: &mut Graph, source: Var, disparity: Var, direction: Direction) -> Result<Var> {
    let offsets = match direction {
        Direction::Left => g.scale(disparity, -1.0)?,
        Direction::Right => disparity,
    };
    g.grid_sample_bilinear(source, offsets)
}

/// Per-pixel SSIM over 3x3 windows (unpadded, so 2 pixels smaller per axis).
pub fn ssim_map(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let mu_x = g.avg_pool(x, 3, 1)?;
    let mu_y = g.avg_pool(y, 3, 1)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let mu_xx = g.mul(mu_x, mu_x)?;
    let mu_yy = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let e_xx = g.avg_pool(xx, 3, 1)?;
    let e_yy = g.avg_pool(yy, 3, 1)?;
    let e_xy = g.avg_pool(xy, 3, 1)?;
    let sigma_x = g.sub(e_xx, mu_xx)?;
    let sigma_y = g.sub(e_yy, mu_yy)?;
    let sigma_xy = g.sub(e_xy, mu_xy)?;

    let n1 = g.scale(mu_xy, 2.0)?;
    let n1 = g.add_scalar(n1, SSIM_C1)?;
    let n2 = g.scale(sigma_xy, 2.0)?;
    let n2 = g.add_scalar(n2, SSIM_C2)?;
    let num = g.mul(n1, n2)?;
    let d1 = g.add(mu_xx, mu_yy)?;
    let d1 = g.add_scalar(d1, SSIM_C1)?;
    let d2 = g.add(sigma_x, sigma_y)?;
    let d2 = g.add_scalar(d2, SSIM_C2)?;
    let den = g.mul(d1, d2)?;
    g.div(num, den)
}

/// `alpha·mean(clamp((1 - SSIM)/2, 0, 1)) + (1 - alpha)·mean|target - recon|`.
pub fn appearance_loss(g: &mut Graph, target: Var, reconstruction: Var, alpha_ssim: f64) -> Result<Var> {
    let (ts, rs) = (g.shape(target), g.shape(reconstruction));
    if ts != rs {
        return Err(Error::shape("appearance_loss", format!("target {ts} vs reconstruction {rs}")));
    }
    let diff = g.sub(target, reconstruction)?;
    let abs = g.abs(diff)?;
    let l1 = g.mean(abs)?;
    let l1 = g.scale(l1, 1.0 - alpha_ssim)?;
    if alpha_ssim == 0.0 {
        return Ok(l1);
    }
    let ssim = ssim_map(g, target, reconstruction)?;
    let dissim = g.scale(ssim, -0.5)?;
    let dissim = g.add_scalar(dissim, 0.5)?;
    let dissim = g.clamp(dissim, 0.0, 1.0)?;
    let dissim = g.mean(dissim)?;
    let dissim = g.scale(dissim, alpha_ssim)?;
    g.add(dissim, l1)
}

/// Forward difference along `axis` (2 = rows, 3 = columns).
fn gradient(g: &mut Graph, x: Var, axis: usize) -> Result<Var> {
    let len = g.shape(x).0[axis] - 1;
    let a = g.narrow(x, axis, 0, len)?;
    let b = g.narrow(x, axis, 1, len)?;
    g.sub(a, b)
}

/// Edge-aware first-order penalty `|∂d|·exp(-mean_c |∂I|)`, averaged per
/// direction and summed over both directions.
pub fn smoothness_loss(g: &mut Graph, disparity: Var, image: Var) -> Result<Var> {
    let (ds, is) = (g.shape(disparity), g.shape(image));
    if ds.n() != is.n() || ds.h() != is.h() || ds.w() != is.w() {
        return Err(Error::shape("smoothness_loss", format!("disparity {ds} vs image {is}")));
    }
    let mut total: Option<Var> = None;
    for axis in [3, 2] {
        if g.shape(disparity).0[axis] < 2 {
            continue;
        }
        let dd = gradient(g, disparity, axis)?;
        let dd = g.abs(dd)?;
        let di = gradient(g, image, axis)?;
        let di = g.abs(di)?;
        let di = g.reduce(di, ReduceKind::Mean, &[1])?;
        let di = g.scale(di, -1.0)?;
        let weight = g.exp(di)?;
        let term = g.mul(dd, weight)?;
        let term = g.mean(term)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(Tensor::scalar(0.0))),
    }
}

/// Mean `|d_l - d_r(x - d_l)|` and its mirror for the right view, averaged.
pub fn lr_consistency_loss(g: &mut Graph, disp_left: Var, disp_right: Var) -> Result<Var> {
    let (ls, rs) = (g.shape(disp_left), g.shape(disp_right));
    if ls != rs {
        return Err(Error::shape("lr_consistency_loss", format!("left {ls} vs right {rs}")));
    }
    let right_in_left = reconstruct(g, disp_right, disp_left, Direction::Left)?;
    let left_in_right = reconstruct(g, disp_left, disp_right, Direction::Right)?;
    let a = g.sub(disp_left, right_in_left)?;
    let a = g.abs(a)?;
    let a = g.mean(a)?;
    let b = g.sub(disp_right, left_in_right)?;
    let b = g.abs(b)?;
    let b = g.mean(b)?;
    let sum = g.add(a, b)?;
    g.scale(sum, 0.5)
}

/// Mean absolute disparity.
pub fn occlusion_reg(g: &mut Graph, disparity: Var) -> Result<Var> {
    let a = g.abs(disparity)?;
    g.mean(a)
}

/// Images of one stereo pair at every scale, as graph constants.
pub struct ImagePyramid {
    pub left: [Var; NUM_SCALES],
    pub right: [Var; NUM_SCALES],
}

impl ImagePyramid {
    /// Downsamples with 2x2 average pooling per scale.
    pub fn build(g: &mut Graph, left: &Tensor, right: &Tensor) -> Result<Self> {
        let mut l = g.constant(left.clone());
        let mut r = g.constant(right.clone());
        let mut lefts = [l; NUM_SCALES];
        let mut rights = [r; NUM_SCALES];
        for s in 1..NUM_SCALES {
            l = g.avg_pool(l, 2, 2)?;
            r = g.avg_pool(r, 2, 2)?;
            lefts[s] = l;
            rights[s] = r;
        }
        Ok(ImagePyramid {
            left: lefts,
            right: rights,
        })
    }
}

/// Weighted sum over `active_scales` of the per-scale objective for both
/// views. Terms switched off in `terms` are never evaluated.
pub fn total_loss(
    g: &mut Graph,
    left: &DisparitySet,
    right: &DisparitySet,
    images: &ImagePyramid,
    weights: &LossWeights,
    active_scales: &[usize],
    terms: LossTerms,
) -> Result<Var> {
    if active_scales.is_empty() {
        return Err(Error::invalid("total_loss", "no active scales"));
    }
    if let Some(&s) = active_scales.iter().find(|&&s| s >= NUM_SCALES) {
        return Err(Error::invalid("total_loss", format!("scale {s} out of range")));
    }
    let mut total = g.constant(Tensor::scalar(0.0));
    for &s in active_scales {
        let (dl, dr) = (left.maps[s], right.maps[s]);
        let (il, ir) = (images.left[s], images.right[s]);
        let mut parts: Vec<(Var, f64)> = Vec::new();

        if terms.appearance {
            let rec_l = reconstruct(g, ir, dl, Direction::Left)?;
            let rec_r = reconstruct(g, il, dr, Direction::Right)?;
            let a = appearance_loss(g, il, rec_l, weights.alpha_ssim)?;
            let b = appearance_loss(g, ir, rec_r, weights.alpha_ssim)?;
            let ab = g.add(a, b)?;
            parts.push((ab, 0.5));
        }
        if terms.smoothness && weights.smoothness > 0.0 {
            let a = smoothness_loss(g, dl, il)?;
            let b = smoothness_loss(g, dr, ir)?;
            let ab = g.add(a, b)?;
            parts.push((ab, 0.5 * weights.smoothness / (1u64 << s) as f64));
        }
        if terms.lr_consistency && weights.lr_consistency > 0.0 {
            let lr = lr_consistency_loss(g, dl, dr)?;
            parts.push((lr, weights.lr_consistency));
        }
        if terms.occlusion && weights.occlusion > 0.0 {
            let a = occlusion_reg(g, dl)?;
            let b = occlusion_reg(g, dr)?;
            let ab = g.add(a, b)?;
            parts.push((ab, 0.5 * weights.occlusion));
        }

        for (term, w) in parts {
            let weighted = g.scale(term, w * weights.scale_factors[s])?;
            total = g.add(total, weighted)?;
        }
    }
    Ok(total)
}

/// Metric depth `b·f/d` from a disparity map in pixels.
pub fn disparity_to_depth(disparity: &Tensor, baseline: f64, focal: f64) -> Tensor {
    let bf = baseline * focal;
    disparity.map(|d| bf / d.max(DEPTH_EPS))
}

/// Disparity in pixels from metric depth.
pub fn depth_to_disparity(depth: &Tensor, baseline: f64, focal: f64) -> Tensor {
    let bf = baseline * focal;
    depth.map(|z| bf / z)
}

/// Converts a width-normalized disparity map to pixels.
pub fn to_pixels(disparity: &Tensor) -> Tensor {
    let w = disparity.shape().w() as f64;
    disparity.map(|d| d * w)
}
