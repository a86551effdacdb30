//! Layered fronto-parallel scenes rendered as exact rectified stereo pairs.
//!
//! Every layer is a textured rectangle at a fixed depth whose disparity
//! `b·f/depth` is a whole number of pixels, so the right view is an exact
//! integer shift of each layer and the ground truth is exact. Textures are
//! procedural functions of integer pixel coordinates and are defined
//! outside the rectangle too, which gives the right view real content where
//! a layer slides in from beyond the left image border.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::photometric::StereoSample;
use crate::tensor::{Shape, Tensor};

/// Largest disparity a scene may contain, as a fraction of image width.
pub const MAX_DISPARITY_FRACTION: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureKind {
    Checker,
    Noise,
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn full(width: usize, height: usize) -> Self {
        Rect { x: 0, y: 0, width, height }
    }

    fn contains_row(&self, y: usize) -> bool {
        y >= self.y && y < self.y + self.height
    }

    fn contains_col(&self, x: i64) -> bool {
        x >= self.x as i64 && x < (self.x + self.width) as i64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// Meters from the camera.
    pub depth: f64,
    pub texture: TextureKind,
    pub rect: Rect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub baseline: f64,
    pub focal: f64,
    pub layers: Vec<Layer>,
}

/// A rendered pair plus the left-view pixels that are visible in the right
/// view (1.0) or occluded / out of view (0.0).
#[derive(Clone, Debug)]
pub struct Rendered {
    pub sample: StereoSample,
    pub non_occluded: Tensor,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_unit(parts: &[u64]) -> f64 {
    let h = parts.iter().fold(0x1234_5678_9ABC_DEF0u64, |acc, &p| splitmix(acc ^ p));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Per-layer texture parameters drawn from the scene seed.
#[derive(Clone, Debug)]
struct Texture {
    kind: TextureKind,
    key: u64,
    cell: i64,
    colors: [[f64; 3]; 2],
    period: f64,
    phase: f64,
}

impl Texture {
    fn new(kind: TextureKind, seed: u64, layer: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(layer as u64 + 1)));
        let mut color = |lo: f64, hi: f64| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
        let colors = [color(0.05, 0.35), color(0.65, 0.95)];
        Texture {
            kind,
            key: rng.gen(),
            cell: rng.gen_range(4..=6),
            colors,
            period: rng.gen_range(40.0..80.0),
            phase: rng.gen_range(0.0..1.0),
        }
    }

    fn sample(&self, x: i64, y: i64, c: usize) -> f64 {
        match self.kind {
            TextureKind::Checker => {
                let parity = (x.div_euclid(self.cell) + y.div_euclid(self.cell)).rem_euclid(2) as usize;
                self.colors[parity][c]
            }
            TextureKind::Noise => {
                // Value noise: random lattice values every `cell` pixels,
                // bilinearly interpolated, mapped into [lo, hi].
                let (cx, fx) = (x.div_euclid(self.cell), x.rem_euclid(self.cell) as f64 / self.cell as f64);
                let (cy, fy) = (y.div_euclid(self.cell), y.rem_euclid(self.cell) as f64 / self.cell as f64);
                let v = |i: i64, j: i64| hash_unit(&[self.key, i as u64, j as u64, c as u64]);
                let top = v(cx, cy) * (1.0 - fx) + v(cx + 1, cy) * fx;
                let bottom = v(cx, cy + 1) * (1.0 - fx) + v(cx + 1, cy + 1) * fx;
                let t = top * (1.0 - fy) + bottom * fy;
                let [lo, hi] = self.colors;
                lo[c] + (hi[c] - lo[c]) * t
            }
            TextureKind::Gradient => {
                // Triangle wave along x with a slight vertical tilt; stays in [lo, hi].
                let t = (x as f64 + 0.25 * y as f64) / self.period + self.phase;
                let tri = 1.0 - (2.0 * (t - t.floor()) - 1.0).abs();
                let [lo, hi] = self.colors;
                lo[c] + (hi[c] - lo[c]) * tri
            }
        }
    }
}

impl SceneSpec {
    /// Disparity of each layer in whole pixels.
    pub fn layer_disparities(&self) -> Result<Vec<usize>> {
        let bf = self.baseline * self.focal;
        let limit = MAX_DISPARITY_FRACTION * self.width as f64;
        self.layers
            .iter()
            .map(|layer| {
                let d = bf / layer.depth;
                let rounded = d.round();
                if (d - rounded).abs() > 1e-9 * d.max(1.0) {
                    return Err(Error::invalid(
                        "render_stereo",
                        format!("layer at depth {} m has non-integer disparity {d} px", layer.depth),
                    ));
                }
                if d > limit {
                    return Err(Error::invalid(
                        "render_stereo",
                        format!("disparity {d} px exceeds {MAX_DISPARITY_FRACTION} of width {}", self.width),
                    ));
                }
                Ok(rounded as usize)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene", "image extents must be positive"));
        }
        if !(self.baseline > 0.0 && self.focal > 0.0) {
            return Err(Error::invalid("scene", "baseline and focal must be positive"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if !(layer.depth > 0.0 && layer.depth.is_finite()) {
                return Err(Error::invalid("scene", format!("layer {i} has depth {}", layer.depth)));
            }
            if self.layers[..i].iter().any(|other| other.depth == layer.depth) {
                return Err(Error::invalid("scene", format!("layer {i} repeats depth {}", layer.depth)));
            }
            let r = layer.rect;
            if r.width == 0 || r.height == 0 || r.x + r.width > self.width || r.y + r.height > self.height {
                return Err(Error::invalid(
                    "scene",
                    format!("layer {i} rectangle {r:?} outside {}x{}", self.width, self.height),
                ));
            }
        }
        Ok(())
    }

    /// A background wall with a value-noise texture and, for roughly half
    /// of the seeds, a nearer checkered box. Disparities are fixed
    /// fractions of the width, rounded to whole pixels.
    pub fn random(seed: u64, width: usize, height: usize, baseline: f64, focal: f64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bf = baseline * focal;
        let px = |fraction: f64| ((fraction * width as f64).round()).max(1.0);
        let d_far = px(1.0 / 32.0);
        let d_near = px(5.0 / 64.0).max(d_far + 1.0);
        let mut layers = vec![Layer {
            depth: bf / d_far,
            texture: TextureKind::Noise,
            rect: Rect::full(width, height),
        }];
        if rng.gen_bool(0.5) {
            let bw = rng.gen_range(width / 4..=width / 2).max(1);
            let bh = rng.gen_range(height / 4..=height / 2).max(1);
            layers.push(Layer {
                depth: bf / d_near,
                texture: TextureKind::Checker,
                rect: Rect {
                    x: rng.gen_range(0..=width - bw),
                    y: rng.gen_range(0..=height - bh),
                    width: bw,
                    height: bh,
                },
            });
        }
        SceneSpec {
            seed,
            width,
            height,
            baseline,
            focal,
            layers,
        }
    }
}

/// Renders the pair and its ground truth; see [`render`].
pub fn render_stereo(spec: &SceneSpec) -> Result<StereoSample> {
    Ok(render(spec)?.sample)
}

pub fn render(spec: &SceneSpec) -> Result<Rendered> {
    spec.validate()?;
    let disparities = spec.layer_disparities()?;
    let textures: Vec<Texture> = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| Texture::new(l.texture, spec.seed, i))
        .collect();
    let (w, h) = (spec.width, spec.height);

    // Nearest layer covering a point given in left-view coordinates.
    let nearest = |x: i64, y: usize, shift: bool| -> Option<usize> {
        (0..spec.layers.len())
            .filter(|&k| {
                let r = spec.layers[k].rect;
                let lx = if shift { x + disparities[k] as i64 } else { x };
                r.contains_row(y) && r.contains_col(lx)
            })
            .max_by_key(|&k| disparities[k])
    };

    let mut left_owner = vec![None; w * h];
    let mut right_owner = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            left_owner[y * w + x] = nearest(x as i64, y, false);
            right_owner[y * w + x] = nearest(x as i64, y, true);
        }
    }

    let shape = Shape::new(1, 3, h, w);
    let left = Tensor::from_fn(shape, |_, c, y, x| match left_owner[y * w + x] {
        Some(k) => textures[k].sample(x as i64, y as i64, c),
        None => 0.0,
    });
    let right = Tensor::from_fn(shape, |_, c, y, x| match right_owner[y * w + x] {
        Some(k) => textures[k].sample((x + disparities[k]) as i64, y as i64, c),
        None => 0.0,
    });
    let map = Shape::new(1, 1, h, w);
    let gt = Tensor::from_fn(map, |_, _, y, x| left_owner[y * w + x].map_or(0.0, |k| disparities[k] as f64));
    let non_occluded = Tensor::from_fn(map, |_, _, y, x| match left_owner[y * w + x] {
        Some(k) if x >= disparities[k] && right_owner[y * w + x - disparities[k]] == Some(k) => 1.0,
        _ => 0.0,
    });

    Ok(Rendered {
        sample: StereoSample::new(left, right, spec.baseline, spec.focal, Some(gt))?,
        non_occluded,
    })
}
