//! VGG-layout convolutional feature extractor.
//!
//! Layers are named `conv{block}_{index}` and their outputs are taken before
//! the ReLU. Weights are either seeded random (offline desk runs) or loaded
//! from a torchvision-style safetensors file (`features.{i}.weight`).

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::FixedConv3x3;
use super::{FeatureExtractor, Param, PixelNorm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VggVariant {
    Vgg16,
    Vgg19,
}

impl VggVariant {
    fn convs_per_block(self) -> [usize; 5] {
        match self {
            VggVariant::Vgg16 => [2, 2, 3, 3, 3],
            VggVariant::Vgg19 => [2, 2, 4, 4, 4],
        }
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    name: String,
    weight: Param,
    bias: Param,
    op: FixedConv3x3,
}

impl ConvLayer {
    fn new(name: String, weight: Param, bias: Param) -> candle_core::Result<Self> {
        let op = FixedConv3x3::new(weight.get(DType::F64), bias.get(DType::F64))?;
        Ok(Self {
            name,
            weight,
            bias,
            op,
        })
    }
}

#[derive(Debug, Clone)]
pub struct VggFeatures {
    blocks: Vec<Vec<ConvLayer>>,
    input_size: usize,
}

const DESK_WIDTHS: [usize; 5] = [8, 16, 24, 32, 32];

impl VggFeatures {
    /// Narrow VGG16 layout with seeded He-uniform weights.
    pub fn desk(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut blocks = Vec::new();
        for (b, (&width, &count)) in DESK_WIDTHS
            .iter()
            .zip(&VggVariant::Vgg16.convs_per_block())
            .enumerate()
        {
            let mut layers = Vec::new();
            for i in 0..count {
                let fan_in = cin * 9;
                let bound = (6.0 / fan_in as f64).sqrt();
                let w: Vec<f64> = (0..width * fan_in)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                layers.push(ConvLayer::new(
                    format!("conv{}_{}", b + 1, i + 1),
                    Param::from_vec(w, &[width, cin, 3, 3])?,
                    Param::from_vec(vec![0.0; width], &[width])?,
                )?);
                cin = width;
            }
            blocks.push(layers);
        }
        Ok(Self {
            blocks,
            input_size: 224,
        })
    }

    /// Loads pretrained weights laid out like torchvision's `vgg.features`.
    pub fn from_safetensors(path: impl AsRef<Path>, variant: VggVariant) -> Result<Self> {
        let path = path.as_ref();
        let tensors = candle_core::safetensors::load(path, &Device::Cpu).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut idx = 0;
        let mut blocks = Vec::new();
        let mut cin = 3;
        for (b, &count) in variant.convs_per_block().iter().enumerate() {
            let mut layers = Vec::new();
            for i in 0..count {
                let get = |suffix: &str| {
                    let key = format!("features.{idx}.{suffix}");
                    tensors
                        .get(&key)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("{} lacks tensor {key}", path.display())))
                };
                let weight = get("weight")?;
                let bias = get("bias")?;
                let (cout, wc, kh, kw) = weight.dims4()?;
                if wc != cin || kh != 3 || kw != 3 || bias.dims() != [cout] {
                    return Err(Error::Config(format!(
                        "features.{idx}.weight has unexpected shape {:?}",
                        weight.dims()
                    )));
                }
                layers.push(ConvLayer::new(
                    format!("conv{}_{}", b + 1, i + 1),
                    Param::new(weight)?,
                    Param::new(bias)?,
                )?);
                cin = cout;
                idx += 2; // conv + relu
            }
            idx += 1; // max pool
            blocks.push(layers);
        }
        Ok(Self {
            blocks,
            input_size: 224,
        })
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .flatten()
            .map(|l| l.name.as_str())
            .collect()
    }

    /// Writes the weights in torchvision layout.
    pub fn save_safetensors(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut map = std::collections::HashMap::new();
        let mut idx = 0;
        for block in &self.blocks {
            for layer in block {
                map.insert(format!("features.{idx}.weight"), layer.weight.get(DType::F32).clone());
                map.insert(format!("features.{idx}.bias"), layer.bias.get(DType::F32).clone());
                idx += 2;
            }
            idx += 1;
        }
        candle_core::safetensors::save(&map, path.as_ref())?;
        Ok(())
    }
}

impl FeatureExtractor for VggFeatures {
    fn input_size(&self) -> usize {
        self.input_size
    }

    fn pixel_norm(&self) -> PixelNorm {
        PixelNorm::IMAGENET
    }

    fn extract(&self, pixels: &Tensor, layers: &[&str]) -> candle_core::Result<Vec<Tensor>> {
        let mut found: Vec<Option<Tensor>> = vec![None; layers.len()];
        let mut remaining = layers.len();
        let mut x = pixels.clone();
        'blocks: for (b, block) in self.blocks.iter().enumerate() {
            if b > 0 {
                x = x.max_pool2d(2)?;
            }
            for layer in block {
                let z = layer.op.forward(&x.contiguous()?)?;
                for (slot, want) in found.iter_mut().zip(layers) {
                    if slot.is_none() && *want == layer.name {
                        *slot = Some(z.clone());
                        remaining -= 1;
                    }
                }
                if remaining == 0 {
                    break 'blocks;
                }
                x = z.relu()?;
            }
        }
        found
            .into_iter()
            .zip(layers)
            .map(|(t, name)| t.ok_or_else(|| candle_core::Error::Msg(format!("unknown layer {name}"))))
            .collect()
    }
}
