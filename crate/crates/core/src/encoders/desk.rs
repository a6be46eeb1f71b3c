//! Procedural joint encoder for offline runs.
//!
//! The image tower embeds 4x4 pixel patches with a fixed random projection,
//! squashes them with `tanh`, mean-pools over the image and projects into the
//! joint space; the embedding of a flat mid-gray image is subtracted so gray
//! sits at the origin. The text tower renders every content word of a phrase
//! as a deterministic color/texture swatch (palette, pattern and frequency
//! derived from a hash of the word) and embeds the swatches with the image
//! tower, so text and images share one space by construction.

use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImageEncoder, Param, PixelNorm, TextEncoder};
use crate::error::{Error, Result};

const INPUT_SIZE: usize = 64;
const PATCH: usize = 4;
const HIDDEN: usize = 96;
const EMBED_DIM: usize = 64;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "by", "in", "on", "to", "and", "with", "style",
];

#[derive(Debug, Clone)]
pub struct DeskImageEncoder {
    proj: Param,
    bias: Param,
    out: Param,
    center: Param,
}

impl DeskImageEncoder {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
        let token = 3 * PATCH * PATCH;
        let mut uniform = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let proj = uniform(token * HIDDEN, (3.0 / token as f64).sqrt());
        let bias = uniform(HIDDEN, 0.5);
        let out = uniform(HIDDEN * EMBED_DIM, (3.0 / HIDDEN as f64).sqrt());
        let mut enc = Self {
            proj: Param::from_vec(proj, &[token, HIDDEN])?,
            bias: Param::from_vec(bias, &[HIDDEN])?,
            out: Param::from_vec(out, &[HIDDEN, EMBED_DIM])?,
            center: Param::from_vec(vec![0.0; EMBED_DIM], &[EMBED_DIM])?,
        };
        let gray = Tensor::full(0.5f64, (1, 3, INPUT_SIZE, INPUT_SIZE), &Device::Cpu)?;
        let center = enc.encode(&PixelNorm::CLIP.apply(&gray)?)?.reshape(EMBED_DIM)?;
        enc.center = Param::new(center)?;
        Ok(enc)
    }
}

impl ImageEncoder for DeskImageEncoder {
    fn input_size(&self) -> usize {
        INPUT_SIZE
    }

    fn pixel_norm(&self) -> PixelNorm {
        PixelNorm::CLIP
    }

    fn embed_dim(&self) -> usize {
        EMBED_DIM
    }

    fn encode(&self, pixels: &Tensor) -> candle_core::Result<Tensor> {
        let (n, c, h, w) = pixels.dims4()?;
        if c != 3 || h != INPUT_SIZE || w != INPUT_SIZE {
            candle_core::bail!("desk encoder expects (N, 3, {INPUT_SIZE}, {INPUT_SIZE}), got {:?}", pixels.dims());
        }
        let dt = pixels.dtype();
        let g = INPUT_SIZE / PATCH;
        let tokens = pixels
            .reshape((n, 3, g, PATCH, g, PATCH))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((n, g * g, 3 * PATCH * PATCH))?;
        let hidden = tokens
            .broadcast_matmul(self.proj.get(dt))?
            .broadcast_add(self.bias.get(dt))?
            .tanh()?
            .mean(1)?;
        hidden
            .matmul(self.out.get(dt))?
            .broadcast_sub(self.center.get(dt))
    }
}

/// Text tower that embeds rendered word swatches with a [`DeskImageEncoder`].
#[derive(Debug, Clone)]
pub struct SwatchTextEncoder {
    image: Arc<DeskImageEncoder>,
}

impl SwatchTextEncoder {
    pub fn new(image: Arc<DeskImageEncoder>) -> Self {
        Self { image }
    }
}

/// Lowercased alphanumeric words, stopwords dropped unless nothing else remains.
pub fn content_words(text: &str) -> Vec<String> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let content: Vec<String> = words
        .iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .cloned()
        .collect();
    if content.is_empty() {
        words
    } else {
        content
    }
}

impl TextEncoder for SwatchTextEncoder {
    fn embed_dim(&self) -> usize {
        EMBED_DIM
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut words = content_words(text);
        if words.is_empty() {
            let t = text.trim();
            if t.is_empty() {
                return Err(Error::InvalidInput("cannot embed empty text".into()));
            }
            words.push(t.to_string());
        }
        let mut batch = Vec::with_capacity(words.len() * 3 * INPUT_SIZE * INPUT_SIZE);
        for w in &words {
            batch.extend(render_swatch(w, INPUT_SIZE).into_iter().map(f64::from));
        }
        let x = Tensor::from_vec(batch, (words.len(), 3, INPUT_SIZE, INPUT_SIZE), &Device::Cpu)?;
        let e = self.image.encode(&PixelNorm::CLIP.apply(&x)?)?.mean(0)?;
        Ok(e.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Planar RGB swatch for one word, values in `[0, 1]`.
pub fn render_swatch(word: &str, size: usize) -> Vec<f32> {
    use std::f64::consts::TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word));
    let c1: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let c2: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let pattern = rng.random_range(0..4u32);
    let freq = rng.random_range(2.0..10.0);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (cx, cy) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    let (ct, st) = (theta.cos(), theta.sin());
    let n = size * size;
    let mut out = vec![0f32; 3 * n];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
            let s = match pattern {
                0 => 0.5 + 0.5 * (TAU * freq * (u * ct + v * st)).sin(),
                1 => 0.5 + 0.5 * (4.0 * (TAU * freq * u).sin() * (TAU * freq * v).sin()).tanh(),
                2 => 0.5 + 0.5 * (TAU * freq * ((u - cx).hypot(v - cy))).sin(),
                _ => {
                    0.5 + 0.25 * (TAU * freq * (u * ct + v * st)).sin()
                        + 0.25 * (TAU * freq * 1.7 * (v * ct - u * st)).sin()
                }
            };
            for c in 0..3 {
                out[c * n + y * size + x] = (c1[c] * (1.0 - s) + c2[c] * s) as f32;
            }
        }
    }
    out
}
