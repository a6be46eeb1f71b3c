//! Encoder backends the losses are built over.
//!
//! A bundle holds a text encoder and an image encoder that share one embedding
//! space, plus a perceptual feature extractor exposing VGG-style named layers.
//! Each image-side encoder declares its input resolution and pixel
//! normalization; the losses resize and normalize before every call.

use std::sync::Arc;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

mod conv;
pub mod desk;
pub mod stub;
pub mod vgg;

pub use desk::{DeskImageEncoder, SwatchTextEncoder};
pub use vgg::VggFeatures;

/// Layers compared by the content loss.
pub const CONTENT_LAYERS: [&str; 2] = ["conv4_2", "conv5_2"];

/// Per-channel `(x - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl PixelNorm {
    pub const IDENTITY: PixelNorm = PixelNorm {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
    pub const CLIP: PixelNorm = PixelNorm {
        mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
        std: [0.268_629_54, 0.261_302_58, 0.275_777_11],
    };
    pub const IMAGENET: PixelNorm = PixelNorm {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    /// Normalizes an `(N, 3, H, W)` tensor.
    pub fn apply(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        if *self == PixelNorm::IDENTITY {
            return Ok(x.clone());
        }
        let mean = Tensor::new(&self.mean, x.device())?
            .to_dtype(x.dtype())?
            .reshape((1, 3, 1, 1))?;
        let inv_std = Tensor::new(&self.std.map(|s| 1.0 / s), x.device())?
            .to_dtype(x.dtype())?
            .reshape((1, 3, 1, 1))?;
        x.broadcast_sub(&mean)?.broadcast_mul(&inv_std)
    }
}

/// Differentiable image tower of a joint text-image embedding.
pub trait ImageEncoder: Send + Sync {
    /// Square input side length.
    fn input_size(&self) -> usize;
    fn pixel_norm(&self) -> PixelNorm;
    fn embed_dim(&self) -> usize;
    /// `(N, 3, S, S)` normalized pixels to `(N, D)` embeddings.
    fn encode(&self, pixels: &Tensor) -> candle_core::Result<Tensor>;
}

/// Text tower of the joint embedding. Text embeddings are constants of the optimization.
pub trait TextEncoder: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn encode_text(&self, text: &str) -> Result<Vec<f64>>;
}

/// Differentiable perceptual feature extractor with named layers.
pub trait FeatureExtractor: Send + Sync {
    /// Default square working resolution.
    fn input_size(&self) -> usize;
    fn pixel_norm(&self) -> PixelNorm;
    /// Feature maps for the requested layers, in request order.
    fn extract(&self, pixels: &Tensor, layers: &[&str]) -> candle_core::Result<Vec<Tensor>>;
}

#[derive(Clone)]
pub struct EncoderBundle {
    pub text: Arc<dyn TextEncoder>,
    pub image: Arc<dyn ImageEncoder>,
    pub features: Arc<dyn FeatureExtractor>,
}

impl std::fmt::Debug for EncoderBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncoderBundle")
            .field("embed_dim", &self.image.embed_dim())
            .field("image_input", &self.image.input_size())
            .field("feature_input", &self.features.input_size())
            .finish()
    }
}

impl EncoderBundle {
    pub fn new(
        text: Arc<dyn TextEncoder>,
        image: Arc<dyn ImageEncoder>,
        features: Arc<dyn FeatureExtractor>,
    ) -> Result<Self> {
        if text.embed_dim() != image.embed_dim() {
            return Err(Error::Config(format!(
                "text ({}) and image ({}) encoders embed into different spaces",
                text.embed_dim(),
                image.embed_dim()
            )));
        }
        Ok(Self {
            text,
            image,
            features,
        })
    }

    /// Offline procedural bundle: swatch-rendering joint encoder plus a
    /// randomly initialized VGG-layout extractor.
    pub fn desk(seed: u64) -> Result<Self> {
        let image = Arc::new(DeskImageEncoder::new(seed)?);
        let text = Arc::new(SwatchTextEncoder::new(image.clone()));
        let features = Arc::new(VggFeatures::desk(seed.wrapping_add(1))?);
        Self::new(text, image, features)
    }

    /// Same as [`EncoderBundle::desk`] with the extractor replaced.
    pub fn with_features(mut self, features: Arc<dyn FeatureExtractor>) -> Self {
        self.features = features;
        self
    }

    /// Text embedding as a `(D,)` tensor.
    pub fn text_tensor(&self, text: &str, dtype: DType, device: &Device) -> Result<Tensor> {
        let v = self.text.encode_text(text)?;
        Ok(Tensor::from_vec(v, self.text.embed_dim(), device)?.to_dtype(dtype)?)
    }
}

/// Weight tensor kept in both float widths so losses can run in either.
#[derive(Clone, Debug)]
pub(crate) struct Param {
    f32: Tensor,
    f64: Tensor,
}

impl Param {
    pub(crate) fn new(t: Tensor) -> candle_core::Result<Self> {
        Ok(Self {
            f32: t.to_dtype(DType::F32)?,
            f64: t.to_dtype(DType::F64)?,
        })
    }

    pub(crate) fn from_vec(v: Vec<f64>, shape: &[usize]) -> candle_core::Result<Self> {
        Self::new(Tensor::from_vec(v, shape, &Device::Cpu)?)
    }

    pub(crate) fn get(&self, dtype: DType) -> &Tensor {
        match dtype {
            DType::F64 => &self.f64,
            _ => &self.f32,
        }
    }
}
