//! Architecture checks run for several pyramid depths. Each returns a
//! description of the first violation.
#![allow(dead_code)]

use fusiondepth::arch::coordconv::{coord_channels, default_center, raw_radius};
use fusiondepth::arch::{fusion_budget, infer, ArchConfig, Network, NUM_SCALES, REFINE_CHANNELS};
use fusiondepth::autodiff::Graph;
use fusiondepth::{Shape, Tensor};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn config(levels: usize) -> ArchConfig {
    ArchConfig::with_levels(levels, 4)
}

pub fn image(levels: usize) -> Tensor {
    let side = 1 << levels.max(NUM_SCALES + 1);
    Tensor::from_fn(Shape::new(1, 3, side, side), |_, c, h, w| ((h * 5 + w * 3 + c * 7) % 11) as f64 / 10.0)
}

fn shape_of(net: &Network, name: &str) -> Result<Shape, String> {
    net.params().by_name(name).map(|p| p.value.shape()).ok_or_else(|| format!("missing parameter {name}"))
}

/// Level 1 fuses only itself and level 2, level L only L-1 and L, interior
/// levels all three neighbors, with the same-level slice never smaller.
pub fn fusion_boundaries(levels: usize) -> Check {
    let cfg = config(levels);
    let net = Network::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let fw = net.bind(&mut g);
    for p in 1..=levels {
        let expected: Vec<usize> = (p.max(2) - 1..=(p + 1).min(levels)).collect();
        ensure!(fw.fusion_inputs(p) == expected, "L={levels} p={p}: inputs {:?}", fw.fusion_inputs(p));
        let names = net.params().names();
        let has = |part: &str| names.contains(&format!("fuse.{p}.{part}.weight").as_str());
        ensure!(has("from_finer") == (p > 1), "L={levels} p={p}: from_finer presence");
        ensure!(has("from_coarser") == (p < levels), "L={levels} p={p}: from_coarser presence");
        let neighbors = expected.len() - 1;
        let (same, each) = fusion_budget(cfg.widths[p - 1], cfg.reservation, neighbors);
        ensure!(shape_of(&net, &format!("fuse.{p}.same.weight"))?.n() == same, "L={levels} p={p}: same width");
        ensure!(same >= each && same + each * neighbors == cfg.widths[p - 1], "L={levels} p={p}: budget {same}/{each}");
        if p > 1 {
            let s = shape_of(&net, &format!("fuse.{p}.from_finer.weight"))?;
            ensure!(s == Shape::new(each, cfg.widths[p - 2] + 3, 3, 3), "L={levels} p={p}: from_finer {s}");
        }
    }

    // Fused features keep each level's width and resolution.
    let mut g = Graph::new();
    let mut fw = net.bind(&mut g);
    let x = fw.graph.constant(image(levels));
    let pyramid = fw.encode(x).map_err(|e| e.to_string())?;
    let augmented = fw.augment_pyramid(&pyramid).map_err(|e| e.to_string())?;
    for p in 1..=levels {
        let fused = fw.fuse_level(&augmented, p).map_err(|e| e.to_string())?;
        let (fs, es) = (fw.graph.shape(fused), fw.graph.shape(pyramid.level(p)));
        ensure!(fs == es, "L={levels} p={p}: fused {fs} vs encoder {es}");
    }
    ensure!(fw.fuse_level(&augmented, 0).is_err() && fw.fuse_level(&augmented, levels + 1).is_err(), "out-of-range level accepted");
    Ok(())
}

/// Coordinate channels: radius 0 at the center, corner radius
/// `sqrt(h²/4 + w²/4)` before normalization, ramps spanning [-1, 1].
pub fn coordconv_values(levels: usize) -> Check {
    let net = Network::new(config(levels), 0).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let mut fw = net.bind(&mut g);
    let x = fw.graph.constant(image(levels));
    let pyramid = fw.encode(x).map_err(|e| e.to_string())?;
    let augmented = fw.augment_pyramid(&pyramid).map_err(|e| e.to_string())?;
    for p in 1..=levels {
        let f = fw.graph.value(augmented.level(p)).clone();
        let s = f.shape();
        let (h, w) = (s.h(), s.w());
        let c0 = s.c() - 3;
        let center = default_center(h, w);
        // The default center is a pixel only for even extents.
        if h % 2 == 0 && w % 2 == 0 {
            ensure!(f.at(0, c0 + 2, h / 2, w / 2) == 0.0, "L={levels} p={p}: center radius");
        }
        let corner = raw_radius(0, 0, center);
        let expected = ((h * h) as f64 / 4.0 + (w * w) as f64 / 4.0).sqrt();
        ensure!((corner - expected).abs() < 1e-12, "L={levels} p={p}: corner radius {corner} vs {expected}");
        ensure!(f.at(0, c0 + 2, 0, 0) == 1.0, "L={levels} p={p}: normalized corner {}", f.at(0, c0 + 2, 0, 0));
        if h > 1 {
            ensure!(f.at(0, c0, 0, 0) == -1.0 && f.at(0, c0, h - 1, 0) == 1.0, "L={levels} p={p}: row ramp");
        }
        if w > 1 {
            ensure!(f.at(0, c0 + 1, 0, 0) == -1.0 && f.at(0, c0 + 1, 0, w - 1) == 1.0, "L={levels} p={p}: column ramp");
        }
        let coords = coord_channels(1, h, w, center);
        let appended = f.split_channels(&[c0, 3]).map_err(|e| e.to_string())?;
        ensure!(appended[1] == coords, "L={levels} p={p}: appended channels differ");
        ensure!(appended[0] == *fw.graph.value(pyramid.level(p)), "L={levels} p={p}: feature channels altered");
    }
    Ok(())
}

/// Residual branch 32 → 32 → 16 → 4 → shuffle → 1 channel at twice the
/// resolution; coarse path 1 → 4 → shuffle; output convs 1 → 8 → 1.
pub fn refinement_trace(levels: usize) -> Check {
    let cfg = config(levels);
    let net = Network::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    for s in 0..NUM_SCALES - 1 {
        let mut in_c = cfg.decoder_width(s + 1);
        for (i, &c) in REFINE_CHANNELS.iter().enumerate() {
            let shape = shape_of(&net, &format!("refine.{s}.res.{i}.weight"))?;
            ensure!(shape == Shape::new(c, in_c, 3, 3), "L={levels} s={s} res.{i}: {shape}");
            in_c = c;
        }
        ensure!(shape_of(&net, &format!("refine.{s}.coarse.weight"))? == Shape::new(4, 1, 3, 3), "coarse path");
        ensure!(shape_of(&net, &format!("refine.{s}.out.0.weight"))? == Shape::new(8, 1, 3, 3), "out.0");
        ensure!(shape_of(&net, &format!("refine.{s}.out.1.weight"))? == Shape::new(1, 8, 3, 3), "out.1");
        ensure!(net.params().by_name(&format!("head.{s}.weight")).is_none(), "head at refined scale {s}");
    }
    ensure!(net.params().by_name("head.3.weight").is_some(), "missing coarsest head");

    let mut g = Graph::new();
    let mut fw = net.bind(&mut g);
    let side = 1 << (NUM_SCALES + 1);
    for s in 0..NUM_SCALES - 1 {
        let (h, w) = (side >> (s + 1), side >> (s + 1));
        let feats = fw.graph.constant(Tensor::full(Shape::new(2, cfg.decoder_width(s + 1), h, w), 0.1));
        let coarse = fw.graph.constant(Tensor::full(Shape::new(2, 1, h, w), 0.05));
        let residual = fw.refine_residual(s, feats).map_err(|e| e.to_string())?;
        let up = fw.refine_coarse_path(s, coarse).map_err(|e| e.to_string())?;
        let out = fw.refine(s, coarse, feats).map_err(|e| e.to_string())?;
        let want = Shape::new(2, 1, 2 * h, 2 * w);
        for (what, v) in [("residual", residual), ("coarse path", up), ("output", out)] {
            ensure!(fw.graph.shape(v) == want, "L={levels} s={s}: {what} {}", fw.graph.shape(v));
        }
    }
    Ok(())
}

/// Four maps at `H/2^s x W/2^s`, all within `(0, d_max)`.
pub fn output_shapes(levels: usize) -> Check {
    let cfg = config(levels);
    let net = Network::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let img = image(levels);
    let maps = infer(&net, &img).map_err(|e| e.to_string())?;
    let (h, w) = (img.shape().h(), img.shape().w());
    for (s, m) in maps.iter().enumerate() {
        ensure!(m.shape() == Shape::new(1, 1, h >> s, w >> s), "L={levels} s={s}: {}", m.shape());
        ensure!(m.data().iter().all(|&d| d > 0.0 && d < cfg.d_max), "L={levels} s={s}: disparity out of range");
    }
    let bad = Tensor::zeros(Shape::new(1, 3, h + (1 << levels) / 2, w));
    ensure!(infer(&net, &bad).is_err(), "L={levels}: indivisible input accepted");
    ensure!(infer(&net, &Tensor::zeros(Shape::new(1, 1, h, w))).is_err(), "L={levels}: gray input accepted");
    Ok(())
}

/// Zeroing the last residual conv leaves exactly the coarse path.
pub fn residual_zeroing(levels: usize) -> Check {
    let mut net = Network::new(config(levels), 3).map_err(|e| e.to_string())?;
    for s in 0..NUM_SCALES - 1 {
        let (wname, bname) = net.refine_residual_head(s).ok_or("no residual head")?;
        for name in [wname, bname] {
            let p = net.params_mut().by_name_mut(&name).ok_or("missing residual parameter")?;
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let mut g = Graph::new();
    let mut fw = net.bind(&mut g);
    let x = fw.graph.constant(image(levels));
    let set = fw.forward(x).map_err(|e| e.to_string())?;
    for s in 0..NUM_SCALES - 1 {
        let up = fw.refine_coarse_path(s, set.maps[s + 1]).map_err(|e| e.to_string())?;
        let alone = fw.refine_output(s, up).map_err(|e| e.to_string())?;
        let (a, b) = (fw.graph.value(alone), fw.graph.value(set.maps[s]));
        ensure!(a == b, "L={levels} s={s}: residual-free output differs by {}", a.max_abs_diff(b));
    }
    Ok(())
}

/// Turning CoordConv off changes only the input widths of consumers of
/// augmented features, each by exactly 3 channels.
pub fn coordconv_ablation(levels: usize) -> Check {
    let on = Network::new(config(levels), 0).map_err(|e| e.to_string())?;
    let off = Network::new(ArchConfig { coordconv: false, ..config(levels) }, 0).map_err(|e| e.to_string())?;
    ensure!(on.params().names() == off.params().names(), "L={levels}: parameter names differ");
    let mut widened = 0;
    for (a, b) in on.params().iter().zip(off.params().iter()) {
        let (sa, sb) = (a.value.shape(), b.value.shape());
        ensure!(sa.n() == sb.n() && sa.h() == sb.h() && sa.w() == sb.w(), "{}: {sa} vs {sb}", a.name);
        match sa.c() - sb.c() {
            0 => {}
            3 => widened += 1,
            d => return Err(format!("{}: channel difference {d}", a.name)),
        }
    }
    ensure!(widened > 0, "L={levels}: no consumer widened");
    let maps = infer(&off, &image(levels)).map_err(|e| e.to_string())?;
    ensure!(maps.iter().all(Tensor::all_finite), "L={levels}: ablated forward not finite");
    Ok(())
}

/// Without fusion each level keeps a single mixing conv over its own feature.
pub fn fusion_ablation(levels: usize) -> Check {
    let cfg = ArchConfig { fusion: false, ..config(levels) };
    let net = Network::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let fused: Vec<&str> = net.params().names().into_iter().filter(|n| n.starts_with("fuse.")).collect();
    ensure!(fused.len() == 2 * levels, "L={levels}: fusion params {fused:?}");
    for p in 1..=levels {
        let s = shape_of(&net, &format!("fuse.{p}.mix.weight"))?;
        ensure!(s == Shape::new(cfg.widths[p - 1], cfg.widths[p - 1] + 3, 3, 3), "L={levels} p={p}: mix {s}");
    }
    let maps = infer(&net, &image(levels)).map_err(|e| e.to_string())?;
    ensure!(maps.iter().all(Tensor::all_finite), "L={levels}: ablated forward not finite");
    Ok(())
}

pub const ALL: [(&str, fn(usize) -> Check); 7] = [
    ("fusion boundary law", fusion_boundaries),
    ("coordconv channel values", coordconv_values),
    ("refinement channel trace", refinement_trace),
    ("four-scale output shapes", output_shapes),
    ("residual zeroing leaves coarse path", residual_zeroing),
    ("coordconv ablation widths", coordconv_ablation),
    ("fusion ablation", fusion_ablation),
];
