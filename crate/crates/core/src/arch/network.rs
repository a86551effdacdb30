//! Feature-fusion encoder/decoder with CoordConv and residual refinement.
//!
//! Data flow for one image:
//!
//! ```text
//! image -> encoder levels F^1..F^L (stride-2 blocks)
//!       -> coordinate channels appended to every level
//!       -> fusion: level p mixes reshaped F^{p-1}, F^p, F^{p+1}
//!       -> top-down decoder; each stage concatenates the coordinate-augmented
//!          fused level as its skip
//!       -> disparity head at scale 3, refinement modules up to scale 0
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{fusion_budget, ArchConfig, NUM_SCALES};
use super::coordconv::{coord_channels, default_center};
use super::params::{ParamId, ParamStore};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Channel widths of the refinement residual branch before the shuffle.
pub const REFINE_CHANNELS: [usize; 4] = [32, 32, 16, 4];

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize) -> Self {
        let fan_in = in_c * k * k;
        let weight = store.push_uniform(format!("{name}.weight"), Shape::new(out_c, in_c, k, k), fan_in, rng);
        let bias = store.push_uniform(format!("{name}.bias"), Shape::new(1, out_c, 1, 1), fan_in, rng);
        Conv {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    fn apply(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, vars[self.weight.0], vars[self.bias.0], self.stride, self.pad)
    }

    fn apply_elu(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let y = self.apply(g, vars, x)?;
        g.elu(y)
    }
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    down: Conv,
    conv: Conv,
}

#[derive(Clone, Debug)]
struct FusionLevel {
    same: Option<Conv>,
    from_finer: Option<Conv>,
    from_coarser: Option<Conv>,
    mix: Conv,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    /// Upsample-then-convolve from the coarser stage; absent at the top.
    up: Option<Conv>,
    merge: Conv,
}

#[derive(Clone, Debug)]
struct Refiner {
    residual: Vec<Conv>,
    coarse: Conv,
    out: Vec<Conv>,
}

/// Ordered encoder or fused features; index 0 holds level 1.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

impl FeaturePyramid {
    /// Feature at 1-based level `p`.
    pub fn level(&self, p: usize) -> Var {
        self.levels[p - 1]
    }
}

/// Disparity maps at scales 0..4, each `(n, 1, H/2^s, W/2^s)`, in
/// fractions of the image width.
#[derive(Clone, Copy, Debug)]
pub struct DisparitySet {
    pub maps: [Var; NUM_SCALES],
}

/// Decoder outputs: per-level features (index = level, 0 is full
/// resolution when present) and the coarsest disparity.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub features: Vec<Option<Var>>,
    pub heads: Vec<Option<Var>>,
}

#[derive(Clone, Debug)]
pub struct Network {
    cfg: ArchConfig,
    params: ParamStore,
    encoder: Vec<EncoderLevel>,
    fusion: Vec<FusionLevel>,
    decoder: Vec<Option<DecoderLevel>>,
    heads: Vec<Option<Conv>>,
    refiners: Vec<Option<Refiner>>,
}

impl Network {
    /// Builds the network with freshly initialized weights.
    pub fn new(cfg: ArchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k = cfg.kernel;
        let l = cfg.levels;
        let w = |p: usize| cfg.widths[p - 1];

        let mut encoder = Vec::with_capacity(l);
        for p in 1..=l {
            let in_c = if p == 1 { 3 } else { w(p - 1) };
            encoder.push(EncoderLevel {
                down: Conv::new(&mut store, &mut rng, &format!("enc.{p}.down"), in_c, w(p), k, 2),
                conv: Conv::new(&mut store, &mut rng, &format!("enc.{p}.conv"), w(p), w(p), k, 1),
            });
        }

        let mut fusion = Vec::with_capacity(l);
        for p in 1..=l {
            let own = cfg.augmented(w(p));
            let level = if cfg.fusion {
                let finer = p >= 2;
                let coarser = p < l;
                let (same_c, nb_c) = fusion_budget(w(p), cfg.reservation, finer as usize + coarser as usize);
                let name = |part: &str| format!("fuse.{p}.{part}");
                FusionLevel {
                    same: Some(Conv::new(&mut store, &mut rng, &name("same"), own, same_c, 1, 1)),
                    from_finer: finer.then(|| Conv::new(&mut store, &mut rng, &name("from_finer"), cfg.augmented(w(p - 1)), nb_c, k, 2)),
                    from_coarser: coarser.then(|| Conv::new(&mut store, &mut rng, &name("from_coarser"), cfg.augmented(w(p + 1)), nb_c, 1, 1)),
                    mix: Conv::new(&mut store, &mut rng, &name("mix"), w(p), w(p), k, 1),
                }
            } else {
                FusionLevel {
                    same: None,
                    from_finer: None,
                    from_coarser: None,
                    mix: Conv::new(&mut store, &mut rng, &format!("fuse.{p}.mix"), own, w(p), k, 1),
                }
            };
            fusion.push(level);
        }

        // Decoder stages run from level L down to level 1, plus level 0 when
        // the refinement modules are disabled.
        let lowest = if cfg.refinement { 1 } else { 0 };
        let mut decoder: Vec<Option<DecoderLevel>> = vec![None; l + 1];
        for p in (lowest..=l).rev() {
            let dw = cfg.decoder_width(p);
            let skip = if p == 0 { cfg.augmented(0) } else { cfg.augmented(w(p)) };
            decoder[p] = Some(if p == l {
                DecoderLevel {
                    up: None,
                    merge: Conv::new(&mut store, &mut rng, &format!("dec.{p}.merge"), skip, dw, k, 1),
                }
            } else {
                DecoderLevel {
                    up: Some(Conv::new(&mut store, &mut rng, &format!("dec.{p}.up"), cfg.decoder_width(p + 1), dw, k, 1)),
                    merge: Conv::new(&mut store, &mut rng, &format!("dec.{p}.merge"), dw + skip, dw, k, 1),
                }
            });
        }
        let mut heads = vec![None; NUM_SCALES];
        let mut refiners = vec![None; NUM_SCALES];
        for s in (0..NUM_SCALES).rev() {
            if cfg.refinement && s + 1 < NUM_SCALES {
                let name = |part: &str| format!("refine.{s}.{part}");
                let mut in_c = cfg.decoder_width(s + 1);
                let mut residual = Vec::new();
                for (i, &c) in REFINE_CHANNELS.iter().enumerate() {
                    residual.push(Conv::new(&mut store, &mut rng, &name(&format!("res.{i}")), in_c, c, k, 1));
                    in_c = c;
                }
                let coarse = Conv::new(&mut store, &mut rng, &name("coarse"), 1, 4, k, 1);
                let out = vec![
                    Conv::new(&mut store, &mut rng, &name("out.0"), 1, 8, k, 1),
                    Conv::new(&mut store, &mut rng, &name("out.1"), 8, 1, k, 1),
                ];
                refiners[s] = Some(Refiner { residual, coarse, out });
            } else {
                heads[s] = Some(Conv::new(&mut store, &mut rng, &format!("head.{s}"), cfg.decoder_width(s), 1, k, 1));
            }
        }

        Ok(Network {
            cfg,
            params: store,
            encoder,
            fusion,
            decoder,
            heads,
            refiners,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count_parameters()
    }

    /// Registers every weight as a differentiable leaf of `graph`.
    pub fn bind<'a>(&'a self, graph: &'a mut Graph) -> Forward<'a> {
        let vars = self.params.iter().map(|p| graph.param(p.value.clone())).collect();
        Forward { net: self, graph, vars }
    }

    /// Names of the parameters of refinement module `s` that produce the
    /// residual; zeroing the last of them zeroes the residual exactly.
    pub fn refine_residual_head(&self, s: usize) -> Option<(String, String)> {
        self.refiners.get(s)?.as_ref()?;
        let name = format!("refine.{s}.res.{}", REFINE_CHANNELS.len() - 1);
        Some((format!("{name}.weight"), format!("{name}.bias")))
    }
}

/// A network bound to one graph for a forward pass.
pub struct Forward<'a> {
    net: &'a Network,
    pub graph: &'a mut Graph,
    vars: Vec<Var>,
}

impl Forward<'_> {
    /// Graph leaves of the parameters, in store order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn into_param_vars(self) -> Vec<Var> {
        self.vars
    }

    fn cfg(&self) -> &ArchConfig {
        &self.net.cfg
    }

    /// Stride-2 encoder producing levels 1..=L.
    pub fn encode(&mut self, image: Var) -> Result<FeaturePyramid> {
        let shape = self.graph.shape(image);
        let m = self.cfg().required_multiple();
        if shape.c() != 3 {
            return Err(Error::shape("encode", format!("expected a 3-channel image, got {shape}")));
        }
        if !shape.h().is_multiple_of(m) || !shape.w().is_multiple_of(m) || shape.h() == 0 || shape.w() == 0 {
            return Err(Error::invalid(
                "encode",
                format!("image extents {}x{} must be non-zero multiples of {m}", shape.h(), shape.w()),
            ));
        }
        let mut levels = Vec::with_capacity(self.cfg().levels);
        let mut x = image;
        for level in &self.net.encoder {
            x = level.down.apply_elu(self.graph, &self.vars, x)?;
            x = level.conv.apply_elu(self.graph, &self.vars, x)?;
            levels.push(x);
        }
        Ok(FeaturePyramid { levels })
    }

    /// Optical center at pyramid level `p` (0 = input resolution).
    pub fn principal_point(&self, p: usize, h: usize, w: usize) -> (f64, f64) {
        match self.cfg().principal_point {
            Some((r, c)) => {
                let s = (1u64 << p) as f64;
                (r / s, c / s)
            }
            None => default_center(h, w),
        }
    }

    /// Appends the three coordinate channels centered at `center`.
    pub fn coordconv_augment(&mut self, feature: Var, center: (f64, f64)) -> Result<Var> {
        let s = self.graph.shape(feature);
        let coords = self.graph.constant(coord_channels(s.n(), s.h(), s.w(), center));
        self.graph.concat_channels(&[feature, coords])
    }

    /// Coordinate augmentation of level `p` when enabled, identity otherwise.
    fn augment_level(&mut self, feature: Var, p: usize) -> Result<Var> {
        if !self.cfg().coordconv {
            return Ok(feature);
        }
        let s = self.graph.shape(feature);
        let center = self.principal_point(p, s.h(), s.w());
        self.coordconv_augment(feature, center)
    }

    /// Augments every level of an encoder pyramid before fusion.
    pub fn augment_pyramid(&mut self, pyramid: &FeaturePyramid) -> Result<FeaturePyramid> {
        let mut levels = Vec::with_capacity(pyramid.levels.len());
        for (i, &f) in pyramid.levels.iter().enumerate() {
            levels.push(self.augment_level(f, i + 1)?);
        }
        Ok(FeaturePyramid { levels })
    }

    /// Levels whose features feed fused level `p`.
    pub fn fusion_inputs(&self, p: usize) -> Vec<usize> {
        let l = self.cfg().levels;
        if !self.cfg().fusion {
            return vec![p];
        }
        (p.saturating_sub(1).max(1)..=(p + 1).min(l)).collect()
    }

    /// Fused feature `FF^p` from the augmented pyramid.
    pub fn fuse_level(&mut self, pyramid: &FeaturePyramid, p: usize) -> Result<Var> {
        let l = self.cfg().levels;
        if p == 0 || p > l || pyramid.levels.len() != l {
            return Err(Error::invalid(
                "fuse_level",
                format!("level {p} outside 1..={l} (pyramid has {} levels)", pyramid.levels.len()),
            ));
        }
        let fl = &self.net.fusion[p - 1];
        let own = pyramid.level(p);
        let Some(same) = &fl.same else {
            return fl.mix.apply_elu(self.graph, &self.vars, own);
        };
        let mut parts = vec![same.apply_elu(self.graph, &self.vars, own)?];
        if let Some(conv) = &fl.from_finer {
            parts.push(conv.apply_elu(self.graph, &self.vars, pyramid.level(p - 1))?);
        }
        if let Some(conv) = &fl.from_coarser {
            let up = self.graph.upsample_nearest(pyramid.level(p + 1), 2)?;
            parts.push(conv.apply_elu(self.graph, &self.vars, up)?);
        }
        let fused = self.graph.concat_channels(&parts)?;
        fl.mix.apply_elu(self.graph, &self.vars, fused)
    }

    /// Top-down decoder over fused features, which also serve as skips.
    pub fn decode(&mut self, fused: &FeaturePyramid) -> Result<Decoded> {
        let l = self.cfg().levels;
        if fused.levels.len() != l {
            return Err(Error::invalid(
                "decode",
                format!("expected {l} fused levels, got {}", fused.levels.len()),
            ));
        }
        let lowest = if self.cfg().refinement { 1 } else { 0 };
        let mut features = vec![None; l + 1];
        let mut x: Option<Var> = None;
        for p in (lowest..=l).rev() {
            let stage = self.net.decoder[p].as_ref().expect("decoder stage exists for every decoded level");
            let skip = if p == 0 {
                if self.cfg().coordconv {
                    let s = self.graph.shape(x.expect("level 1 decoded"));
                    let (h, w) = (s.h() * 2, s.w() * 2);
                    let center = self.principal_point(0, h, w);
                    Some(self.graph.constant(coord_channels(s.n(), h, w, center)))
                } else {
                    None
                }
            } else {
                Some(self.augment_level(fused.level(p), p)?)
            };
            let input = match (&stage.up, x) {
                (Some(up), Some(prev)) => {
                    let u = self.graph.upsample_nearest(prev, 2)?;
                    let u = up.apply_elu(self.graph, &self.vars, u)?;
                    match skip {
                        Some(s) => self.graph.concat_channels(&[u, s])?,
                        None => u,
                    }
                }
                _ => skip.expect("top level always has a skip"),
            };
            let y = stage.merge.apply_elu(self.graph, &self.vars, input)?;
            features[p] = Some(y);
            x = Some(y);
        }

        let mut heads = vec![None; NUM_SCALES];
        for (s, head) in self.net.heads.iter().enumerate() {
            if let Some(conv) = head {
                let feat = features[s].ok_or_else(|| Error::invalid("decode", format!("no decoder features at scale {s}")))?;
                heads[s] = Some(self.disparity_head(conv, feat)?);
            }
        }
        Ok(Decoded { features, heads })
    }

    fn disparity_head(&mut self, conv: &Conv, x: Var) -> Result<Var> {
        let z = conv.apply(self.graph, &self.vars, x)?;
        let s = self.graph.sigmoid(z)?;
        self.graph.scale(s, self.net.cfg.d_max)
    }

    /// Sub-pixel upsampling of a coarse disparity: 4-channel conv + shuffle.
    pub fn refine_coarse_path(&mut self, s: usize, coarse_disp: Var) -> Result<Var> {
        let r = refiner(self.net, s)?;
        let c = r.coarse.apply(self.graph, &self.vars, coarse_disp)?;
        self.graph.pixel_shuffle(c, 2)
    }

    /// Residual depth from decoder features at scale `s + 1`, super-resolved
    /// to scale `s`.
    pub fn refine_residual(&mut self, s: usize, features: Var) -> Result<Var> {
        let r = refiner(self.net, s)?;
        let mut x = features;
        let last = r.residual.len() - 1;
        for (i, conv) in r.residual.iter().enumerate() {
            x = if i == last {
                conv.apply(self.graph, &self.vars, x)?
            } else {
                conv.apply_elu(self.graph, &self.vars, x)?
            };
        }
        self.graph.pixel_shuffle(x, 2)
    }

    /// Maps the fused (upsampled coarse + residual) disparity through the
    /// stride-1 output convolutions and the positive sigmoid rescale.
    pub fn refine_output(&mut self, s: usize, fused: Var) -> Result<Var> {
        let r = refiner(self.net, s)?;
        let h = r.out[0].apply_elu(self.graph, &self.vars, fused)?;
        let z = r.out[1].apply(self.graph, &self.vars, h)?;
        let sig = self.graph.sigmoid(z)?;
        self.graph.scale(sig, self.net.cfg.d_max)
    }

    /// Refined disparity at scale `s` from the disparity and decoder
    /// features at scale `s + 1`.
    pub fn refine(&mut self, s: usize, coarse_disp: Var, features: Var) -> Result<Var> {
        let cs = self.graph.shape(coarse_disp);
        let fs = self.graph.shape(features);
        if cs.c() != 1 || cs.h() != fs.h() || cs.w() != fs.w() {
            return Err(Error::shape("refine", format!("coarse disparity {cs} vs features {fs}")));
        }
        let up = self.refine_coarse_path(s, coarse_disp)?;
        let residual = self.refine_residual(s, features)?;
        let sum = self.graph.add(up, residual)?;
        self.refine_output(s, sum)
    }


    /// Whole pipeline: image `(n, 3, H, W)` to four disparity maps.
    pub fn forward(&mut self, image: Var) -> Result<DisparitySet> {
        let pyramid = self.encode(image)?;
        let augmented = self.augment_pyramid(&pyramid)?;
        let mut fused = Vec::with_capacity(augmented.levels.len());
        for p in 1..=self.cfg().levels {
            fused.push(self.fuse_level(&augmented, p)?);
        }
        let fused = FeaturePyramid { levels: fused };
        let decoded = self.decode(&fused)?;

        let mut maps: [Option<Var>; NUM_SCALES] = [None; NUM_SCALES];
        for s in (0..NUM_SCALES).rev() {
            maps[s] = match decoded.heads[s] {
                Some(head) => Some(head),
                None => {
                    let coarse = maps[s + 1].expect("coarser scale computed first");
                    let feats = decoded.features[s + 1].expect("decoder reaches every refined scale");
                    Some(self.refine(s, coarse, feats)?)
                }
            };
        }
        Ok(DisparitySet {
            maps: maps.map(|m| m.expect("every scale produced")),
        })
    }

    /// Forward pass on a constant image tensor.
    pub fn predict(&mut self, image: &Tensor) -> Result<DisparitySet> {
        let x = self.graph.constant(image.clone());
        self.forward(x)
    }
}

fn refiner(net: &Network, s: usize) -> Result<&Refiner> {
    net.refiners
        .get(s)
        .and_then(|r| r.as_ref())
        .ok_or_else(|| Error::invalid("refine", format!("no refinement module at scale {s}")))
}

/// Runs the network on `image` without keeping the graph; returns the four
/// disparity maps as tensors.
pub fn infer(net: &Network, image: &Tensor) -> Result<[Tensor; NUM_SCALES]> {
    let mut graph = Graph::new();
    let mut fw = net.bind(&mut graph);
    let set = fw.predict(image)?;
    Ok(set.maps.map(|v| graph.value(v).clone()))
}
