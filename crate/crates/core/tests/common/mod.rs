//! Finite-difference gradient checking shared by the integration tests.
#![allow(dead_code)]

pub mod structural;

use fusiondepth::arch::{ArchConfig, Network};
use fusiondepth::autodiff::{Graph, ReduceKind, Var};
use fusiondepth::data::{render_stereo, SceneSpec};
use fusiondepth::photometric::{
    appearance_loss, lr_consistency_loss, occlusion_reg, smoothness_loss, ssim_map, LossWeights,
};
use fusiondepth::train::{stereo_loss, STAGES};
use fusiondepth::{Result, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// `‖a - n‖ / max(‖a‖, ‖n‖)`, or 0 when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values in `[lo, hi]` kept at least `gap` away from every point in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| loop {
        let v = rng.gen_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

/// Random values whose horizontal and vertical neighbor differences all stay
/// at least `gap` away from zero.
fn separated(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64, gap: f64) -> Tensor {
    loop {
        let t = uniform(rng, shape, lo, hi);
        let (h, w) = (shape.h(), shape.w());
        let ok = (0..shape.n() * shape.c()).all(|p| {
            let at = |y: usize, x: usize| t.data()[(p * h + y) * w + x];
            (0..h).all(|y| (0..w).all(|x| (x + 1 == w || (at(y, x + 1) - at(y, x)).abs() > gap) && (y + 1 == h || (at(y + 1, x) - at(y, x)).abs() > gap)))
        });
        if ok {
            break t;
        }
    }
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// Bilinear sampling offsets whose sample points avoid integer columns and
/// the clamping borders, where the sampler is not differentiable.
fn offsets(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    let w = shape.w() as f64;
    Tensor::from_fn(shape, |_, _, _, j| {
        let x = loop {
            let x = rng.gen_range(-2.0..w + 1.0);
            let frac = x - x.floor();
            let clear_border = (x - 0.0).abs() > 0.05 && (x - (w - 1.0)).abs() > 0.05;
            if frac > 0.05 && frac < 0.95 && clear_border {
                break x;
            }
        };
        (x - j as f64) / w
    })
}

/// Every differentiable primitive plus the photometric building blocks.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let s = Shape::new;
    let img = |r: &mut ChaCha8Rng, shape| uniform(r, shape, 0.05, 0.95);
    vec![
        case(
            "conv2d_3x3_s1",
            vec![uniform(r, s(2, 3, 5, 5), -1.0, 1.0), uniform(r, s(4, 3, 3, 3), -1.0, 1.0), uniform(r, s(1, 4, 1, 1), -1.0, 1.0)],
            |g, v| g.conv2d(v[0], v[1], v[2], 1, 1),
        ),
        case(
            "conv2d_3x3_s2",
            vec![uniform(r, s(1, 2, 6, 7), -1.0, 1.0), uniform(r, s(3, 2, 3, 3), -1.0, 1.0), uniform(r, s(1, 3, 1, 1), -1.0, 1.0)],
            |g, v| g.conv2d(v[0], v[1], v[2], 2, 1),
        ),
        case(
            "conv2d_1x1",
            vec![uniform(r, s(1, 3, 4, 4), -1.0, 1.0), uniform(r, s(2, 3, 1, 1), -1.0, 1.0), uniform(r, s(1, 2, 1, 1), -1.0, 1.0)],
            |g, v| g.conv2d(v[0], v[1], v[2], 1, 0),
        ),
        case("elu", vec![away_from(r, s(1, 2, 3, 4), -2.0, 2.0, &[0.0], 1e-3)], |g, v| g.elu(v[0])),
        case("sigmoid", vec![uniform(r, s(1, 2, 3, 4), -4.0, 4.0)], |g, v| g.sigmoid(v[0])),
        case("abs", vec![away_from(r, s(1, 2, 3, 4), -1.0, 1.0, &[0.0], 0.05)], |g, v| g.abs(v[0])),
        case("exp", vec![uniform(r, s(1, 2, 3, 4), -2.0, 2.0)], |g, v| g.exp(v[0])),
        case("square", vec![uniform(r, s(1, 2, 3, 4), -2.0, 2.0)], |g, v| g.square(v[0])),
        case("add_broadcast", vec![uniform(r, s(2, 3, 4, 4), -1.0, 1.0), uniform(r, s(1, 3, 1, 1), -1.0, 1.0)], |g, v| {
            g.add(v[0], v[1])
        }),
        case("sub_broadcast", vec![uniform(r, s(1, 1, 3, 3), -1.0, 1.0), uniform(r, s(2, 2, 3, 3), -1.0, 1.0)], |g, v| {
            g.sub(v[0], v[1])
        }),
        case("mul_broadcast", vec![uniform(r, s(2, 3, 4, 4), -1.0, 1.0), uniform(r, s(2, 1, 4, 4), -1.0, 1.0)], |g, v| {
            g.mul(v[0], v[1])
        }),
        case("div_broadcast", vec![uniform(r, s(1, 3, 4, 4), -1.0, 1.0), uniform(r, s(1, 3, 1, 4), 0.5, 2.0)], |g, v| {
            g.div(v[0], v[1])
        }),
        case("scale", vec![uniform(r, s(1, 2, 2, 3), -1.0, 1.0)], |g, v| g.scale(v[0], -2.5)),
        case("add_scalar", vec![uniform(r, s(1, 2, 2, 3), -1.0, 1.0)], |g, v| g.add_scalar(v[0], 0.7)),
        case("clamp", vec![away_from(r, s(1, 2, 3, 4), -1.0, 1.0, &[-0.5, 0.5], 1e-3)], |g, v| g.clamp(v[0], -0.5, 0.5)),
        case("upsample_nearest", vec![uniform(r, s(1, 2, 3, 4), -1.0, 1.0)], |g, v| g.upsample_nearest(v[0], 2)),
        case("pixel_shuffle", vec![uniform(r, s(2, 8, 3, 2), -1.0, 1.0)], |g, v| g.pixel_shuffle(v[0], 2)),
        case("grid_sample", vec![img(r, s(2, 3, 4, 6)), offsets(r, s(2, 1, 4, 6))], |g, v| g.grid_sample_bilinear(v[0], v[1])),
        case("reduce_mean_spatial", vec![uniform(r, s(2, 3, 3, 4), -1.0, 1.0)], |g, v| {
            g.reduce(v[0], ReduceKind::Mean, &[2, 3])
        }),
        case("reduce_sum_channels", vec![uniform(r, s(2, 3, 3, 4), -1.0, 1.0)], |g, v| g.reduce(v[0], ReduceKind::Sum, &[1])),
        case("mean", vec![uniform(r, s(2, 3, 3, 4), -1.0, 1.0)], |g, v| g.mean(v[0])),
        case("concat_channels", vec![uniform(r, s(2, 1, 3, 3), -1.0, 1.0), uniform(r, s(2, 4, 3, 3), -1.0, 1.0)], |g, v| {
            g.concat_channels(&[v[1], v[0], v[1]])
        }),
        case("narrow_width", vec![uniform(r, s(1, 2, 3, 5), -1.0, 1.0)], |g, v| g.narrow(v[0], 3, 1, 3)),
        case("narrow_channels", vec![uniform(r, s(1, 4, 2, 2), -1.0, 1.0)], |g, v| g.narrow(v[0], 1, 2, 2)),
        case("avg_pool_3_s1", vec![uniform(r, s(1, 2, 5, 6), -1.0, 1.0)], |g, v| g.avg_pool(v[0], 3, 1)),
        case("avg_pool_2_s2", vec![uniform(r, s(1, 2, 4, 6), -1.0, 1.0)], |g, v| g.avg_pool(v[0], 2, 2)),
        case("flip_horizontal", vec![uniform(r, s(1, 2, 3, 5), -1.0, 1.0)], |g, v| g.flip_horizontal(v[0])),
        case("ssim_map", vec![img(r, s(1, 3, 5, 6)), img(r, s(1, 3, 5, 6))], |g, v| ssim_map(g, v[0], v[1])),
        case("appearance_loss", vec![img(r, s(1, 3, 5, 6)), img(r, s(1, 3, 5, 6))], |g, v| {
            appearance_loss(g, v[0], v[1], 0.85)
        }),
        case("smoothness_loss", vec![separated(r, s(1, 1, 5, 6), 0.0, 0.3, 1e-3), separated(r, s(1, 3, 5, 6), 0.0, 1.0, 1e-3)], |g, v| {
            smoothness_loss(g, v[0], v[1])
        }),
        case("lr_consistency_loss", vec![uniform(r, s(1, 1, 4, 8), 0.02, 0.2), uniform(r, s(1, 1, 4, 8), 0.02, 0.2)], |g, v| {
            lr_consistency_loss(g, v[0], v[1])
        }),
        case("occlusion_reg", vec![uniform(r, s(1, 1, 3, 4), 0.01, 0.3)], |g, v| occlusion_reg(g, v[0])),
    ]
}

/// Scalar objective `sum(f(inputs) · R)` with a fixed random `R`.
fn objective(case: &OpCase, inputs: &[Tensor], weights_seed: u64, want_grads: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let r = g.constant(uniform(&mut rng, g.shape(out), -1.0, 1.0));
    let prod = g.mul(out, r)?;
    let loss = g.sum(prod)?;
    let value = g.value(loss).item()?;
    let mut grads = Vec::new();
    if want_grads {
        g.backward(loss)?;
        for (v, t) in vars.iter().zip(inputs) {
            grads.push(g.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec));
        }
    }
    Ok((value, grads))
}

/// Relative error between backprop and central differences, over all inputs.
pub fn check_case(case: &OpCase, seed: u64) -> Result<f64> {
    let (_, analytic) = objective(case, &case.inputs, seed, true)?;
    let mut worst: f64 = 0.0;
    for (i, input) in case.inputs.iter().enumerate() {
        let mut numeric = Vec::with_capacity(input.numel());
        for k in 0..input.numel() {
            let mut shifted = case.inputs.clone();
            let mut eval = |delta: f64| -> Result<f64> {
                let mut t = input.clone();
                t.data_mut()[k] += delta;
                shifted[i] = t;
                Ok(objective(case, &shifted, seed, false)?.0)
            };
            let plus = eval(STEP)?;
            let minus = eval(-STEP)?;
            numeric.push((plus - minus) / (2.0 * STEP));
        }
        worst = worst.max(rel_error(&analytic[i], &numeric));
    }
    Ok(worst)
}

pub fn small_network_config() -> ArchConfig {
    ArchConfig::with_levels(3, 4)
}

/// Relative error of the full two-view stage-1 objective with respect to a
/// random subset of the weights of a small network.
pub fn check_end_to_end(seed: u64, probes: usize) -> Result<f64> {
    let net = Network::new(small_network_config(), seed)?;
    let sample = render_stereo(&SceneSpec::random(seed, 32, 32, 0.5, 32.0))?;
    let weights = LossWeights::default();
    let loss_of = |net: &Network| -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = stereo_loss(net, &mut g, &sample.left, &sample.right, &weights, STAGES[0])?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let (loss, vars) = stereo_loss(&net, &mut g, &sample.left, &sample.right, &weights, STAGES[0])?;
    g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for _ in 0..probes {
        let p = rng.gen_range(0..net.params().len());
        let name = net.params().iter().nth(p).unwrap().name.clone();
        let k = rng.gen_range(0..net.params().iter().nth(p).unwrap().value.numel());
        analytic.push(g.grad(vars[p]).map_or(0.0, |gr| gr[k]));
        let probe = |delta: f64| -> Result<f64> {
            let mut shifted = net.clone();
            shifted.params_mut().by_name_mut(&name).unwrap().value.data_mut()[k] += delta;
            loss_of(&shifted)
        };
        let plus = probe(STEP)?;
        let minus = probe(-STEP)?;
        numeric.push((plus - minus) / (2.0 * STEP));
    }
    Ok(rel_error(&analytic, &numeric))
}
