//! Flat `key = value` configuration files.
//!
//! ```text
//! # comments run to end of line
//! arch.levels = 5
//! arch.widths = 16,32,64,128,256
//! loss.alpha_ssim = 0.85
//! train.lr = 1e-4
//! train.stages = 25,5,5
//! train.data_dir = data
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::adam::AdamHyper;
use crate::arch::{ArchConfig, NUM_SCALES};
use crate::error::{Error, Result};
use crate::photometric::LossWeights;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamHyper,
    pub batch_size: usize,
    /// Epochs of the all-scales, two-scales and fine-tuning stages.
    pub stages: [usize; 3],
    pub seed: u64,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub arch: ArchConfig,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamHyper::default(),
            batch_size: 1,
            stages: [25, 5, 5],
            seed: 0,
            data_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            arch: ArchConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.adam.lr)));
        }
        if !((0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2)) {
            return Err(Error::Config("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if !(self.adam.eps > 0.0) {
            return Err(Error::Config("train.eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        self.arch.validate()?;
        self.loss.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().sum()
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_array<T: FromStr + Copy + Default, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let items: Vec<T> = parse_list(key, value)?;
    items
        .try_into()
        .map_err(|v: Vec<T>| Error::Config(format!("{key}: expected {N} values, got {}", v.len())))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

/// Splits `text` into `(line, key, value)` triples, rejecting repeated keys.
fn entries(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out: Vec<(usize, &str, &str)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, found {line:?}", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if out.iter().any(|(_, k, _)| *k == key) {
            return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
        }
        out.push((n + 1, key, value));
    }
    Ok(out)
}

fn apply_arch(arch: &mut ArchConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "arch.levels" => {
            let levels: usize = parse(key, value)?;
            // Keep the width list consistent unless widths are given too.
            if arch.widths.len() != levels {
                *arch = ArchConfig {
                    widths: ArchConfig::with_levels(levels, arch.widths[0]).widths,
                    ..arch.clone()
                };
            }
            arch.levels = levels;
        }
        "arch.widths" => arch.widths = parse_list(key, value)?,
        "arch.kernel" => arch.kernel = parse(key, value)?,
        "arch.reservation" => arch.reservation = parse(key, value)?,
        "arch.d_max" => arch.d_max = parse(key, value)?,
        "arch.principal_point" => {
            arch.principal_point = match value {
                "none" | "" => None,
                _ => {
                    let [r, c] = parse_array::<f64, 2>(key, value)?;
                    Some((r, c))
                }
            }
        }
        "arch.coordconv" => arch.coordconv = parse_bool(key, value)?,
        "arch.fusion" => arch.fusion = parse_bool(key, value)?,
        "arch.refinement" => arch.refinement = parse_bool(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_loss(loss: &mut LossWeights, key: &str, value: &str) -> Result<bool> {
    match key {
        "loss.alpha_ssim" => loss.alpha_ssim = parse(key, value)?,
        "loss.smoothness" => loss.smoothness = parse(key, value)?,
        "loss.lr_consistency" => loss.lr_consistency = parse(key, value)?,
        "loss.occlusion" => loss.occlusion = parse(key, value)?,
        "loss.scale_factors" => loss.scale_factors = parse_array::<f64, NUM_SCALES>(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn apply_train(cfg: &mut TrainConfig, key: &str, value: &str, base: &Path) -> Result<bool> {
    match key {
        "train.lr" => cfg.adam.lr = parse(key, value)?,
        "train.beta1" => cfg.adam.beta1 = parse(key, value)?,
        "train.beta2" => cfg.adam.beta2 = parse(key, value)?,
        "train.eps" => cfg.adam.eps = parse(key, value)?,
        "train.batch_size" => cfg.batch_size = parse(key, value)?,
        "train.stages" => cfg.stages = parse_array::<usize, 3>(key, value)?,
        "train.seed" => cfg.seed = parse(key, value)?,
        "train.data_dir" => cfg.data_dir = base.join(value),
        "train.checkpoint_dir" => cfg.checkpoint_dir = base.join(value),
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses a training configuration. Unset keys keep their defaults; unknown
/// keys are errors. Relative paths are joined onto `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        data_dir: base.join("data"),
        checkpoint_dir: base.join("checkpoints"),
        ..TrainConfig::default()
    };
    for (line, key, value) in entries(text)? {
        let known = apply_arch(&mut cfg.arch, key, value)?
            || apply_loss(&mut cfg.loss, key, value)?
            || apply_train(&mut cfg, key, value, base)?;
        if !known {
            return Err(Error::Config(format!("line {line}: unknown key {key}")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config(&text, base)
}

/// `arch.*` lines that [`parse_arch`] reads back to an equal configuration.
pub fn arch_to_text(arch: &ArchConfig) -> String {
    let widths: Vec<String> = arch.widths.iter().map(usize::to_string).collect();
    let mut s = String::new();
    writeln!(s, "arch.levels = {}", arch.levels).unwrap();
    writeln!(s, "arch.widths = {}", widths.join(",")).unwrap();
    writeln!(s, "arch.kernel = {}", arch.kernel).unwrap();
    // `{:?}` prints the shortest text that parses back to the same f64.
    writeln!(s, "arch.reservation = {:?}", arch.reservation).unwrap();
    writeln!(s, "arch.d_max = {:?}", arch.d_max).unwrap();
    match arch.principal_point {
        Some((r, c)) => writeln!(s, "arch.principal_point = {r:?},{c:?}").unwrap(),
        None => writeln!(s, "arch.principal_point = none").unwrap(),
    }
    writeln!(s, "arch.coordconv = {}", arch.coordconv).unwrap();
    writeln!(s, "arch.fusion = {}", arch.fusion).unwrap();
    writeln!(s, "arch.refinement = {}", arch.refinement).unwrap();
    s
}

pub fn parse_arch(text: &str) -> Result<ArchConfig> {
    let mut arch = ArchConfig::default();
    for (line, key, value) in entries(text)? {
        if !apply_arch(&mut arch, key, value)? {
            return Err(Error::Config(format!("line {line}: unknown key {key}")));
        }
    }
    arch.validate()?;
    Ok(arch)
}
