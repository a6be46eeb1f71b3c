//! Small linear encoders with closed-form behavior, for exact tests.

use std::collections::HashMap;

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureExtractor, ImageEncoder, Param, PixelNorm, TextEncoder};
use crate::error::{Error, Result};

/// `E(x) = W · vec(x)` with seeded Gaussian-ish weights.
#[derive(Debug, Clone)]
pub struct LinearImageEncoder {
    size: usize,
    dim: usize,
    weight_t: Param,
}

impl LinearImageEncoder {
    pub fn new(size: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = 3 * size * size;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        Ok(Self {
            size,
            dim,
            weight_t: Param::from_vec(w, &[fan_in, dim])?,
        })
    }
}

impl ImageEncoder for LinearImageEncoder {
    fn input_size(&self) -> usize {
        self.size
    }
    fn pixel_norm(&self) -> PixelNorm {
        PixelNorm::IDENTITY
    }
    fn embed_dim(&self) -> usize {
        self.dim
    }
    fn encode(&self, pixels: &Tensor) -> candle_core::Result<Tensor> {
        let n = pixels.dim(0)?;
        pixels
            .reshape((n, 3 * self.size * self.size))?
            .matmul(self.weight_t.get(pixels.dtype()))
    }
}

/// Maps each vocabulary entry to its one-hot vector.
#[derive(Debug, Clone)]
pub struct OneHotTextEncoder {
    vocab: Vec<String>,
}

impl OneHotTextEncoder {
    pub fn new<S: Into<String>>(vocab: impl IntoIterator<Item = S>) -> Self {
        Self {
            vocab: vocab.into_iter().map(Into::into).collect(),
        }
    }
}

impl TextEncoder for OneHotTextEncoder {
    fn embed_dim(&self) -> usize {
        self.vocab.len()
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let idx = self
            .vocab
            .iter()
            .position(|v| v == text)
            .ok_or_else(|| Error::InvalidInput(format!("{text:?} not in stub vocabulary")))?;
        let mut v = vec![0.0; self.vocab.len()];
        v[idx] = 1.0;
        Ok(v)
    }
}

/// Returns fixed vectors for known strings.
#[derive(Debug, Clone, Default)]
pub struct TableTextEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl TableTextEncoder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn with(mut self, text: &str, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.dim);
        self.table.insert(text.to_string(), v);
        self
    }
}

impl TextEncoder for TableTextEncoder {
    fn embed_dim(&self) -> usize {
        self.dim
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("{text:?} not in stub table")))
    }
}

/// Every requested layer is the input crop itself.
#[derive(Debug, Clone, Copy)]
pub struct IdentityFeatures {
    pub size: usize,
}

impl FeatureExtractor for IdentityFeatures {
    fn input_size(&self) -> usize {
        self.size
    }
    fn pixel_norm(&self) -> PixelNorm {
        PixelNorm::IDENTITY
    }
    fn extract(&self, pixels: &Tensor, layers: &[&str]) -> candle_core::Result<Vec<Tensor>> {
        Ok(layers.iter().map(|_| pixels.clone()).collect())
    }
}

/// Layer `conv4_2` is the crop, every other layer a 2x2 average pool of it.
#[derive(Debug, Clone, Copy)]
pub struct PooledFeatures {
    pub size: usize,
}

impl FeatureExtractor for PooledFeatures {
    fn input_size(&self) -> usize {
        self.size
    }
    fn pixel_norm(&self) -> PixelNorm {
        PixelNorm::IDENTITY
    }
    fn extract(&self, pixels: &Tensor, layers: &[&str]) -> candle_core::Result<Vec<Tensor>> {
        layers
            .iter()
            .map(|l| {
                if *l == "conv4_2" {
                    Ok(pixels.clone())
                } else {
                    pixels.avg_pool2d(2)
                }
            })
            .collect()
    }
}
