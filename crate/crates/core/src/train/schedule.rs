use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, OptimizerState};
use super::config::{arch_to_text, parse_arch, TrainConfig};
use crate::arch::{checkpoint, DisparitySet, Network, NUM_SCALES};
use crate::autodiff::{Graph, Var};
use crate::data::load_dataset;
use crate::error::{Error, Result};
use crate::photometric::{total_loss, ImagePyramid, LossTerms, LossWeights, StereoSample};
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "epoch,stage,mean_loss";

/// Scales and loss terms of one training stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub scales: &'static [usize],
    pub terms: LossTerms,
}

pub const STAGES: [Stage; 3] = [
    Stage {
        scales: &[0, 1, 2, 3],
        terms: LossTerms::ALL,
    },
    Stage {
        scales: &[0, 1],
        terms: LossTerms::ALL,
    },
    Stage {
        scales: &[0, 1],
        terms: LossTerms::FINE_TUNE,
    },
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based over the whole run.
    pub epoch: usize,
    /// 1-based.
    pub stage: usize,
    pub mean_loss: f64,
}

pub struct TrainOutcome {
    pub network: Network,
    pub log: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Disparities of both views. The right view runs through the network
/// mirrored, so it looks like a left view, and the result is mirrored back.
pub fn stereo_forward(net: &Network, g: &mut Graph, left: &Tensor, right: &Tensor) -> Result<(DisparitySet, DisparitySet, Vec<Var>)> {
    let mut fw = net.bind(g);
    let left_set = fw.predict(left)?;
    let r = fw.graph.constant(right.clone());
    let r_flipped = fw.graph.flip_horizontal(r)?;
    let mirrored = fw.forward(r_flipped)?;
    let mut maps = mirrored.maps;
    for m in &mut maps {
        *m = fw.graph.flip_horizontal(*m)?;
    }
    Ok((left_set, DisparitySet { maps }, fw.into_param_vars()))
}

/// Builds the training objective for a batch on `g`; returns the loss and the
/// parameter leaves in store order.
pub fn stereo_loss(
    net: &Network,
    g: &mut Graph,
    left: &Tensor,
    right: &Tensor,
    weights: &LossWeights,
    stage: Stage,
) -> Result<(Var, Vec<Var>)> {
    let (l, r, vars) = stereo_forward(net, g, left, right)?;
    let images = ImagePyramid::build(g, left, right)?;
    let loss = total_loss(g, &l, &r, &images, weights, stage.scales, stage.terms)?;
    Ok((loss, vars))
}

/// Sidecar holding the architecture of a checkpoint: `x.fdpt` → `x.arch`.
pub fn arch_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("arch")
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    checkpoint::save(path, net.params())?;
    let sidecar = arch_path(path);
    fs::write(&sidecar, arch_to_text(net.config())).map_err(|e| Error::io(&sidecar, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let sidecar = arch_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let mut net = Network::new(parse_arch(&text)?, 0)?;
    net.load_params(checkpoint::load(path)?)?;
    Ok(net)
}

fn check_samples(samples: &[StereoSample], net: &Network) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("train", "dataset has no samples"))?
        .left
        .shape();
    let m = net.config().required_multiple();
    if first.h() % m != 0 || first.w() % m != 0 || first.c() != 3 {
        return Err(Error::invalid(
            "train",
            format!("images are {first}; need 3 channels and extents divisible by {m}"),
        ));
    }
    // SSIM needs a 3x3 window at the coarsest scale.
    let min = 3 << (NUM_SCALES - 1);
    if first.h() < min || first.w() < min {
        return Err(Error::invalid("train", format!("images are {first}; need at least {min}x{min}")));
    }
    if let Some(i) = samples.iter().position(|s| s.left.shape() != first) {
        return Err(Error::invalid("train", format!("sample {i} is {}, expected {first}", samples[i].left.shape())));
    }
    Ok(())
}

/// Trains from scratch on the dataset in `cfg.data_dir`.
pub fn run_schedule(cfg: &TrainConfig) -> Result<TrainOutcome> {
    run_schedule_with(cfg, |_| {})
}

/// As [`run_schedule`], calling `on_epoch` after each epoch.
pub fn run_schedule_with(cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = load_dataset(&cfg.data_dir)?;
    let mut net = Network::new(cfg.arch.clone(), cfg.seed)?;
    check_samples(&samples, &net)?;

    fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    let log_path = cfg.checkpoint_dir.join(LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    writeln!(log_file, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let mut state = OptimizerState::new(net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut epoch = 0;

    for (k, (&stage, &epochs)) in STAGES.iter().zip(&cfg.stages).enumerate() {
        for _ in 0..epochs {
            epoch += 1;
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let left = Tensor::stack(&batch.iter().map(|&i| samples[i].left.clone()).collect::<Vec<_>>())?;
                let right = Tensor::stack(&batch.iter().map(|&i| samples[i].right.clone()).collect::<Vec<_>>())?;
                let mut g = Graph::new();
                let (loss, vars) = stereo_loss(&net, &mut g, &left, &right, &cfg.loss, stage)?;
                sum += g.value(loss).item()? * batch.len() as f64;
                g.backward(loss)?;
                let grads: Vec<Option<&[f64]>> = vars.iter().map(|&v| g.grad(v)).collect();
                adam_step(net.params_mut(), &grads, &mut state, cfg.adam)?;
            }
            let record = EpochRecord {
                epoch,
                stage: k + 1,
                mean_loss: sum / samples.len() as f64,
            };
            writeln!(log_file, "{},{},{}", record.epoch, record.stage, record.mean_loss)
                .and_then(|_| log_file.flush())
                .map_err(|e| Error::io(&log_path, e))?;
            on_epoch(&record);
            log.push(record);
        }
        let name = if k + 1 == STAGES.len() { "final.fdpt".to_owned() } else { format!("stage{}.fdpt", k + 1) };
        let path = cfg.checkpoint_dir.join(name);
        save_checkpoint(&path, &net)?;
        checkpoints.push(path);
    }

    Ok(TrainOutcome {
        network: net,
        log,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;
    use crate::data::{render_stereo, write_dataset, SceneSpec};

    fn tiny() -> ArchConfig {
        ArchConfig::with_levels(3, 4)
    }

    fn pair(seed: u64) -> StereoSample {
        render_stereo(&SceneSpec::random(seed, 32, 24, 0.5, 32.0)).unwrap()
    }

    #[test]
    fn stage_three_ignores_smoothness_weight() {
        let net = Network::new(tiny(), 1).unwrap();
        let s = pair(4);
        let loss_with = |smoothness: f64| {
            let weights = LossWeights { smoothness, occlusion: 50.0 * smoothness, ..Default::default() };
            let mut g = Graph::new();
            let (loss, _) = stereo_loss(&net, &mut g, &s.left, &s.right, &weights, STAGES[2]).unwrap();
            g.value(loss).item().unwrap()
        };
        assert_eq!(loss_with(0.1), loss_with(100.0));
    }

    #[test]
    fn missing_dataset_fails_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            data_dir: dir.path().join("absent"),
            checkpoint_dir: dir.path().join("ckpt"),
            arch: tiny(),
            ..Default::default()
        };
        assert!(matches!(run_schedule(&cfg), Err(Error::Io { .. })));
        assert!(!cfg.checkpoint_dir.exists());
    }

    #[test]
    fn short_run_writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        write_dataset(&data, &[pair(1), pair(2), pair(3)], (0.5, 32.0)).unwrap();
        let cfg = TrainConfig {
            data_dir: data,
            checkpoint_dir: dir.path().join("ckpt"),
            arch: tiny(),
            stages: [1, 1, 1],
            batch_size: 2,
            ..Default::default()
        };
        let out = run_schedule(&cfg).unwrap();
        let log = fs::read_to_string(cfg.checkpoint_dir.join(LOG_FILE)).unwrap();
        let lines: Vec<_> = log.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,3,"));
        assert_eq!(out.checkpoints.len(), 3);
        let back = load_checkpoint(&out.checkpoints[2]).unwrap();
        assert_eq!(back.params(), out.network.params());
        assert_eq!(back.config(), &tiny());
    }
}
