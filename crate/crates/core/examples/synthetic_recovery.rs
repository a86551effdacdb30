//! Trains the default network on generated scenes and reports how well the
//! ground-truth disparity is recovered.
//!
//! cargo run --release --example synthetic_recovery -- [samples] [s1,s2,s3] [lr]

use std::time::Instant;

use fusiondepth::data::{render, write_dataset, SceneSpec};
use fusiondepth::metrics::mean_abs_error;
use fusiondepth::train::{predict_disparity, run_schedule_with, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let count: u64 = args.get(1).map_or(Ok(40), |s| s.parse())?;
    let mut cfg = TrainConfig::default();
    if let Some(s) = args.get(2) {
        let v: Vec<usize> = s.split(',').map(str::parse).collect::<Result<_, _>>()?;
        cfg.stages = [v[0], v[1], v[2]];
    }
    if let Some(lr) = args.get(3) {
        cfg.adam.lr = lr.parse()?;
    }

    let dir = std::env::temp_dir().join(format!("fusiondepth-recovery-{}", std::process::id()));
    let scenes: Vec<_> = (0..count).map(|k| render(&SceneSpec::random(k, 64, 64, 0.5, 64.0))).collect::<Result<_, _>>()?;
    let samples: Vec<_> = scenes.iter().map(|r| r.sample.clone()).collect();
    write_dataset(&dir.join("data"), &samples, (0.5, 64.0))?;
    cfg.data_dir = dir.join("data");
    cfg.checkpoint_dir = dir.join("checkpoints");

    let start = Instant::now();
    let out = run_schedule_with(&cfg, |r| {
        println!("epoch {:>3} stage {} loss {:.5} ({:.0?})", r.epoch, r.stage, r.mean_loss, start.elapsed());
    })?;

    let mut total = 0.0;
    for r in &scenes {
        let pred = predict_disparity(&out.network, &r.sample.left, false)?;
        total += mean_abs_error(&pred, r.sample.gt_disparity.as_ref().unwrap(), &r.non_occluded)?;
    }
    println!("mean abs disparity error {:.4} px over {} scenes", total / scenes.len() as f64, scenes.len());
    if std::env::var_os("FD_KEEP").is_some() {
        println!("kept {}", dir.display());
    } else {
        std::fs::remove_dir_all(&dir)?;
    }
    Ok(())
}
