//! Procedural 4-class dataset of upright glyphs.
//!
//! Each image shows one filled glyph (triangle, T, L or U) in a random
//! bright color over a dark tinted background with pixel noise. Glyph size
//! and position jitter per image. None of the glyphs is invariant under a
//! quarter turn, so rotation prediction is learnable.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Image, LabeledDataset};
use crate::error::Result;
use crate::rng::{stream_rng, Stream};

pub const GLYPH_NAMES: [&str; 4] = ["triangle", "tee", "ell", "cup"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub image_size: usize,
    pub per_class: usize,
    pub noise_std: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { image_size: 32, per_class: 500, noise_std: 0.05, seed: 0 }
    }
}

pub struct SyntheticShapes;

impl SyntheticShapes {
    pub const NUM_CLASSES: usize = 4;

    /// Generates split `split` (distinct splits never share images).
    /// Classes are interleaved: example `i` has class `i % 4`.
    pub fn generate(config: &SyntheticConfig, split: u64) -> Result<LabeledDataset> {
        let n = config.per_class * Self::NUM_CLASSES;
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % Self::NUM_CLASSES;
            let mut rng = stream_rng(config.seed, Stream::Synthetic, (split << 32) | i as u64);
            images.push(render(class, config, &mut rng)?);
            labels.push(Some(class));
        }
        let id = format!("shapes{}-s{}-n{}-split{}", config.image_size, config.seed, config.per_class, split);
        LabeledDataset::new(id, images, labels, Self::NUM_CLASSES)
    }
}

/// Whether the glyph covers `(x, y)` in its unit frame (`y` grows downward).
fn inside(class: usize, x: f32, y: f32) -> bool {
    let rect = |x0: f32, x1: f32, y0: f32, y1: f32| x >= x0 && x <= x1 && y >= y0 && y <= y1;
    match class {
        0 => (-1.0..=1.0).contains(&y) && x.abs() <= (y + 1.0) / 2.0,
        1 => rect(-1.0, 1.0, -1.0, -0.45) || rect(-0.25, 0.25, -0.45, 1.0),
        2 => rect(-0.8, -0.3, -1.0, 1.0) || rect(-0.8, 0.8, 0.5, 1.0),
        _ => rect(-0.9, -0.45, -1.0, 1.0) || rect(0.45, 0.9, -1.0, 1.0) || rect(-0.9, 0.9, 0.55, 1.0),
    }
}

fn render(class: usize, config: &SyntheticConfig, rng: &mut impl Rng) -> Result<Image> {
    let s = config.image_size;
    let sf = s as f32;
    let half = rng.gen_range(0.22..0.34) * sf;
    let cx = sf / 2.0 + rng.gen_range(-0.09..0.09) * sf;
    let cy = sf / 2.0 + rng.gen_range(-0.09..0.09) * sf;
    let fg: [f32; 3] = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
    let bg: [f32; 3] = [rng.gen_range(-0.95..-0.6), rng.gen_range(-0.95..-0.6), rng.gen_range(-0.95..-0.6)];
    let noise = Normal::new(0.0f32, config.noise_std.max(0.0)).expect("finite std");
    let mut pixels = vec![0.0f32; s * s * 3];
    for py in 0..s {
        for px in 0..s {
            // 2x2 supersampling for soft edges.
            let mut cover = 0.0f32;
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let ux = (px as f32 + ox - cx) / half;
                let uy = (py as f32 + oy - cy) / half;
                if inside(class, ux, uy) {
                    cover += 0.25;
                }
            }
            for c in 0..3 {
                let v = bg[c] + cover * (fg[c] - bg[c]) + noise.sample(rng);
                pixels[(py * s + px) * 3 + c] = v.clamp(-1.0, 1.0);
            }
        }
    }
    Image::new(s, 3, pixels)
}
