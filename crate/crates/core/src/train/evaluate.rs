use std::fmt::Write as _;

use crate::arch::{infer, Network};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_disparity, postprocess, DepthMetrics, CSV_HEADER};
use crate::photometric::{to_pixels, StereoSample};
use crate::tensor::Tensor;

/// Full-resolution left-view disparity in pixels, optionally blended with
/// the prediction for the mirrored image.
pub fn predict_disparity(net: &Network, image: &Tensor, pp: bool) -> Result<Tensor> {
    let [direct, ..] = infer(net, image)?;
    let disp = if pp {
        let [mirrored, ..] = infer(net, &image.flip_horizontal())?;
        postprocess(&direct, &mirrored)?
    } else {
        direct
    };
    Ok(to_pixels(&disp))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_sample: Vec<DepthMetrics>,
    pub aggregate: DepthMetrics,
}

impl EvalReport {
    /// Header, one row per sample, then the aggregate row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for m in self.per_sample.iter().chain([&self.aggregate]) {
            writeln!(s, "{m}").expect("string write");
        }
        s
    }
}

pub fn evaluate(net: &Network, samples: &[StereoSample], pp: bool, cap: f64) -> Result<EvalReport> {
    let mut per_sample = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let gt = s
            .gt_disparity
            .as_ref()
            .ok_or_else(|| Error::invalid("evaluate", format!("sample {i} has no ground truth")))?;
        let pred = predict_disparity(net, &s.left, pp)?;
        per_sample.push(evaluate_disparity(&pred, gt, s.baseline, s.focal, cap)?);
    }
    let aggregate = DepthMetrics::mean(&per_sample)?;
    Ok(EvalReport { per_sample, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;
    use crate::data::{render_stereo, SceneSpec};

    #[test]
    fn report_has_row_per_sample_plus_aggregate() {
        let net = Network::new(ArchConfig::with_levels(3, 4), 2).unwrap();
        let samples: Vec<_> = (0..2).map(|k| render_stereo(&SceneSpec::random(k, 16, 16, 0.5, 16.0)).unwrap()).collect();
        for pp in [false, true] {
            let report = evaluate(&net, &samples, pp, 80.0).unwrap();
            report.aggregate.validate().unwrap();
            let csv = report.to_csv();
            assert_eq!(csv.lines().count(), 4);
            assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        }
        assert!(evaluate(&net, &[], false, 80.0).is_err());
    }
}
