//! On-disk stereo datasets.
//!
//! ```text
//! DIR/manifest.txt        baseline=0.5
//!                         focal=64
//!                         000000
//!                         000001
//! DIR/000000_left.ppm
//! DIR/000000_right.ppm
//! DIR/000000_disp.pgm     optional ground truth
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::pnm::{read_image, write_image};
use crate::error::{Error, Result};
use crate::photometric::StereoSample;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub baseline: f64,
    pub focal: f64,
    pub indices: Vec<u32>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = format!("baseline={}\nfocal={}\n", self.baseline, self.focal);
        for i in &self.indices {
            writeln!(s, "{i:06}").expect("string write");
        }
        s
    }
}

/// Blank lines and `#` comments are ignored; both calibration keys are required.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut baseline = None;
    let mut focal = None;
    let mut indices = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |detail: String| Error::format("manifest", format!("line {}: {detail}", n + 1));
        if let Some((key, value)) = line.split_once('=') {
            let value: f64 = value.trim().parse().map_err(|_| bad(format!("cannot parse {:?}", value.trim())))?;
            if !(value > 0.0 && value.is_finite()) {
                return Err(bad(format!("{} must be positive", key.trim())));
            }
            let slot = match key.trim() {
                "baseline" => &mut baseline,
                "focal" => &mut focal,
                other => return Err(bad(format!("unknown key {other:?}"))),
            };
            if slot.replace(value).is_some() {
                return Err(bad(format!("duplicate key {:?}", key.trim())));
            }
        } else {
            if !line.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad(format!("expected an index, found {line:?}")));
            }
            indices.push(line.parse().map_err(|_| bad(format!("index {line} out of range")))?);
        }
    }
    Ok(Manifest {
        baseline: baseline.ok_or_else(|| Error::format("manifest", "missing baseline="))?,
        focal: focal.ok_or_else(|| Error::format("manifest", "missing focal="))?,
        indices,
    })
}

pub fn sample_paths(dir: &Path, index: u32) -> [PathBuf; 3] {
    ["left.ppm", "right.ppm", "disp.pgm"].map(|suffix| dir.join(format!("{index:06}_{suffix}")))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text)
}

/// Writes `samples` with indices 0.. and a manifest. All samples must share
/// the first sample's calibration; `calibration` is used when `samples` is empty.
pub fn write_dataset(dir: &Path, samples: &[StereoSample], calibration: (f64, f64)) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (baseline, focal) = samples.first().map_or(calibration, |s| (s.baseline, s.focal));
    for (i, s) in samples.iter().enumerate() {
        if s.baseline != baseline || s.focal != focal {
            return Err(Error::invalid("write_dataset", format!("sample {i} has different calibration")));
        }
        let [left, right, disp] = sample_paths(dir, i as u32);
        write_image(&left, &s.left)?;
        write_image(&right, &s.right)?;
        if let Some(gt) = &s.gt_disparity {
            write_image(&disp, gt)?;
        }
    }
    let manifest = Manifest {
        baseline,
        focal,
        indices: (0..samples.len() as u32).collect(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))
}

/// Loads every sample listed in the manifest. Disparity files are optional.
pub fn load_dataset(dir: &Path) -> Result<Vec<StereoSample>> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.indices.len());
    for &i in &manifest.indices {
        let [left, right, disp] = sample_paths(dir, i);
        let gt = if disp.exists() { Some(read_image(&disp)?) } else { None };
        samples.push(StereoSample::new(
            read_image(&left)?,
            read_image(&right)?,
            manifest.baseline,
            manifest.focal,
            gt,
        )?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{render_stereo, SceneSpec};

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            baseline: 0.54,
            focal: 721.5,
            indices: vec![0, 7, 123456],
        };
        assert_eq!(parse_manifest(&m.render()).unwrap(), m);
        assert!(m.render().contains("\n000007\n"));
    }

    #[test]
    fn manifest_errors() {
        for text in ["focal=1\n", "baseline=1\n", "baseline=1\nfocal=x\n", "baseline=1\nfocal=2\nabc\n", "baseline=-1\nfocal=2\n", "baseline=1\nbaseline=1\nfocal=2\n", "b=1\n"] {
            assert!(parse_manifest(text).is_err(), "{text:?}");
        }
        let m = parse_manifest("# cal\nbaseline = 0.5\n\nfocal=64 # px\n000003\n").unwrap();
        assert_eq!(m.indices, vec![3]);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<_> = (0..2)
            .map(|seed| render_stereo(&SceneSpec::random(seed, 32, 16, 0.5, 32.0)).unwrap())
            .collect();
        write_dataset(dir.path(), &samples, (1.0, 1.0)).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in samples.iter().zip(&back) {
            assert!(a.left.max_abs_diff(&b.left) <= 0.5 / 255.0 + 1e-15);
            assert_eq!(a.gt_disparity, b.gt_disparity);
            assert_eq!((b.baseline, b.focal), (0.5, 32.0));
        }
    }

    #[test]
    fn empty_dataset_has_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[], (0.5, 64.0)).unwrap();
        let m = read_manifest(dir.path()).unwrap();
        assert!(m.indices.is_empty());
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }
}
