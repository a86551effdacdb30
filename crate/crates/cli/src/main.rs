use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fusiondepth::data::{read_image, read_manifest, render_stereo, write_dataset, write_image, SceneSpec};
use fusiondepth::metrics::DEFAULT_CAP;
use fusiondepth::photometric::disparity_to_depth;
use fusiondepth::train::{evaluate, load_checkpoint, load_config, predict_disparity, run_schedule_with};

#[derive(Parser)]
#[command(name = "fusiondepth", version, about = "Self-supervised stereo-trained monocular depth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stereo dataset with exact ground truth.
    GenData(GenData),
    /// Train from a configuration file.
    Train(Train),
    /// Print CSV metrics of a checkpoint on a dataset.
    Eval(Eval),
    /// Predict a disparity (or depth) map for one image.
    Predict(Predict),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: u64,
    /// Scene `k` is generated from seed `seed + k`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Meters.
    #[arg(long, default_value_t = 0.5)]
    baseline: f64,
    /// Pixels; defaults to the image width.
    #[arg(long)]
    focal: Option<f64>,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    no_fusion: bool,
    #[arg(long)]
    no_coordconv: bool,
    #[arg(long)]
    no_refinement: bool,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also report metrics after flip post-processing.
    #[arg(long)]
    pp: bool,
    /// Depth cap in meters.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: f64,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// 16-bit PGM, values scaled by 256.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pp: bool,
    /// Write metric depth instead of disparity.
    #[arg(long)]
    depth: bool,
    /// Overrides the manifest next to the image.
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    focal: Option<f64>,
}

fn gen_data(a: GenData) -> Result<()> {
    let focal = a.focal.unwrap_or(a.width as f64);
    if a.width == 0 || a.height == 0 {
        bail!("--width and --height must be positive");
    }
    let samples = (0..a.count)
        .map(|k| render_stereo(&SceneSpec::random(a.seed.wrapping_add(k), a.width, a.height, a.baseline, focal)))
        .collect::<fusiondepth::Result<Vec<_>>>()?;
    write_dataset(&a.out, &samples, (a.baseline, focal))?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let mut cfg = load_config(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    cfg.arch.fusion &= !a.no_fusion;
    cfg.arch.coordconv &= !a.no_coordconv;
    cfg.arch.refinement &= !a.no_refinement;
    let total = cfg.total_epochs();
    let out = run_schedule_with(&cfg, |r| {
        eprintln!("epoch {}/{total} stage {} mean_loss {:.6}", r.epoch, r.stage, r.mean_loss);
    })?;
    for path in &out.checkpoints {
        println!("{}", path.display());
    }
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let samples = fusiondepth::data::load_dataset(&a.data)?;
    if samples.is_empty() {
        bail!("{} lists no samples", a.data.display());
    }
    let raw = evaluate(&net, &samples, false, a.cap)?;
    if a.pp {
        eprintln!("raw predictions:");
    }
    print!("{}", raw.to_csv());
    if a.pp {
        let pp = evaluate(&net, &samples, true, a.cap)?;
        eprintln!("post-processed predictions:");
        println!();
        print!("{}", pp.to_csv());
    }
    Ok(())
}

fn calibration(a: &Predict) -> Result<(f64, f64)> {
    if let (Some(b), Some(f)) = (a.baseline, a.focal) {
        return Ok((b, f));
    }
    let dir = a.image.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let m = read_manifest(dir).context("--depth needs --baseline and --focal or a manifest.txt beside the image")?;
    Ok((a.baseline.unwrap_or(m.baseline), a.focal.unwrap_or(m.focal)))
}

fn predict(a: Predict) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let image = read_image(&a.image)?;
    if image.shape().c() != 3 {
        bail!("{} is not a color image", a.image.display());
    }
    let mut out = predict_disparity(&net, &image, a.pp)?;
    if a.depth {
        let (baseline, focal) = calibration(&a)?;
        out = disparity_to_depth(&out, baseline, focal);
    }
    write_image(&a.out, &out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
