//! Inference-time optimization of a fresh style network per region.

use std::io::Write as _;
use std::path::Path;

use candle_core::{DType, Device, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::EncoderBundle;
use crate::error::{Error, Result};
use crate::grounding::{Grounder, RegionStyleTask, StyleDirective};
use crate::imaging::{composite, hex_digest, BoundingBox, ImageTensor};
use crate::losses::{
    sample_patches, text_delta, LossBreakdown, LossWeights, Objective, ObjectiveOptions,
    PatchBox, Perspective,
};

pub mod adam;
pub mod network;

pub use adam::Adam;
pub use network::{FeatureMap, StyleNetwork, StyleNetworkSpec};

/// Salt separating the patch stream from the network-init stream of one seed.
const PATCH_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
/// Salt of the fixed patch set used to score the initial and final networks.
const PROBE_STREAM: u64 = 0xc2b2_ae3d_27d4_eb4f;
/// Corner jitter of the optional perspective augmentation.
const PERSPECTIVE_DISTORTION: f64 = 0.5;

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub weights: LossWeights,
    pub patch_count: usize,
    pub patch_size: usize,
    pub resolution: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub source_text: String,
    /// Side of the content-loss crops; the extractor's own size when unset.
    pub content_resolution: Option<usize>,
    /// Random perspective warp on patch pairs.
    pub augment: bool,
    pub network: StyleNetworkSpec,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            patch_count: 64,
            patch_size: 100,
            resolution: 512,
            learning_rate: 5e-4,
            iterations: 200,
            seed: 0,
            source_text: "a Photo".into(),
            content_resolution: None,
            augment: false,
            network: StyleNetworkSpec::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.weights.validate()?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let stride = self.network.stride();
        if self.resolution == 0 || self.resolution % stride != 0 {
            return Err(Error::Config(format!(
                "resolution {} is not a positive multiple of {stride}",
                self.resolution
            )));
        }
        if self.patch_count == 0 || self.patch_size == 0 {
            return Err(Error::Config("patch count and size must be positive".into()));
        }
        if self.content_resolution == Some(0) {
            return Err(Error::Config("content resolution must be positive".into()));
        }
        if self.source_text.trim().is_empty() {
            return Err(Error::Config("source text is empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_digest(h)
    }
}

/// One line of the run trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss_total: f64,
    pub loss_dir: f64,
    pub loss_patch: f64,
    pub loss_content: f64,
    pub loss_tv: f64,
}

impl IterationRecord {
    fn new(iter: usize, b: &LossBreakdown) -> Self {
        Self {
            iter,
            loss_total: b.total,
            loss_dir: b.dir,
            loss_patch: b.patch,
            loss_content: b.content,
            loss_tv: b.tv,
        }
    }
}

/// Seeds a region run was derived from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub network: u64,
    pub patches: u64,
    pub probe: u64,
}

impl RunSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            network: seed,
            patches: seed ^ PATCH_STREAM,
            probe: seed ^ PROBE_STREAM,
        }
    }
}

/// Output of one region optimization.
#[derive(Clone, Debug)]
pub struct StylizedResult {
    /// Composite of the final network output over the content background.
    pub image: ImageTensor,
    pub loss_trace: Vec<IterationRecord>,
    pub task: RegionStyleTask,
    pub config: EngineConfig,
    pub config_fingerprint: String,
    pub seeds: RunSeeds,
    /// Objective of the initial and final networks on one fixed patch set.
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
}

/// Freshly initialized style network.
pub fn init_style_network(spec: &StyleNetworkSpec, seed: u64) -> Result<StyleNetwork<f32>> {
    StyleNetwork::new(spec.clone(), seed)
}

fn feature_map(img: &ImageTensor) -> FeatureMap<f32> {
    FeatureMap::from_vec(3, img.height(), img.width(), img.data().to_vec())
}

fn to_image(map: &FeatureMap<f32>) -> Result<ImageTensor> {
    ImageTensor::new(
        map.height,
        map.width,
        map.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}

/// Applies the style network to an image.
pub fn run_network(net: &StyleNetwork<f32>, img: &ImageTensor) -> Result<ImageTensor> {
    to_image(&net.forward(&feature_map(img))?)
}

struct Step {
    breakdown: LossBreakdown,
    grad: Option<Vec<f32>>,
}

fn evaluate(
    obj: &Objective,
    output: &FeatureMap<f32>,
    patches: &[PatchBox],
    warps: Option<&[Perspective]>,
    with_grad: bool,
) -> Result<Step> {
    let dims = (1, 3, output.height, output.width);
    let var = Var::from_slice(&output.data, dims, &Device::Cpu)?;
    let (total, breakdown) = obj.evaluate(var.as_tensor(), patches, warps)?;
    if !with_grad || !breakdown.is_finite() {
        return Ok(Step {
            breakdown,
            grad: None,
        });
    }
    let grads = total.backward()?;
    let grad = match grads.get(var.as_tensor()) {
        Some(g) => g.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?,
        None => vec![0.0; output.data.len()],
    };
    Ok(Step {
        breakdown,
        grad: Some(grad),
    })
}

/// Optimizes a fresh network for one region and composites its output.
pub fn optimize_region(
    content: &ImageTensor,
    task: &RegionStyleTask,
    cfg: &EngineConfig,
    enc: &EncoderBundle,
) -> Result<StylizedResult> {
    cfg.validate()?;
    if content.height() != cfg.resolution || content.width() != cfg.resolution {
        return Err(Error::InvalidInput(format!(
            "content is {}x{}, engine resolution is {}",
            content.width(),
            content.height(),
            cfg.resolution
        )));
    }
    if !content.same_shape(task.mask()) {
        return Err(Error::InvalidInput("task mask does not match the content image".into()));
    }
    if task.mask().is_empty() {
        return Err(Error::EmptyRegion("task mask is empty".into()));
    }
    let seeds = RunSeeds::from_seed(cfg.seed);
    let dt = text_delta(task.style_phrase(), &cfg.source_text, enc)?;
    let options = ObjectiveOptions {
        content_resolution: cfg.content_resolution,
    };
    let obj = Objective::new(
        enc,
        content,
        task.mask(),
        *task.bbox(),
        dt,
        cfg.weights,
        &options,
        DType::F32,
    )?;
    let bbox: BoundingBox = *task.bbox();
    let mut net = init_style_network(&cfg.network, seeds.network)?;
    let mut adam = Adam::new(net.num_params(), cfg.learning_rate);
    let mut patch_rng = ChaCha8Rng::seed_from_u64(seeds.patches);
    let draw = |rng: &mut ChaCha8Rng| {
        let patches = sample_patches(&bbox, cfg.patch_count, cfg.patch_size, rng);
        let warps = cfg.augment.then(|| {
            (0..patches.len())
                .map(|_| Perspective::sample(rng, PERSPECTIVE_DISTORTION))
                .collect::<Vec<_>>()
        });
        (patches, warps)
    };
    let (probe_patches, probe_warps) = draw(&mut ChaCha8Rng::seed_from_u64(seeds.probe));
    let x = feature_map(content);

    let initial = net.forward(&x)?;
    let initial_loss = evaluate(&obj, &initial, &probe_patches, probe_warps.as_deref(), false)?.breakdown;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let tape = net.forward_tape(&x)?;
        let (patches, warps) = draw(&mut patch_rng);
        let step = evaluate(&obj, tape.output(), &patches, warps.as_deref(), true)?;
        trace.push(IterationRecord::new(iter, &step.breakdown));
        let grad = match step.grad {
            Some(g) if g.iter().all(|v| v.is_finite()) => g,
            _ => {
                return Err(Error::Divergence {
                    iteration: iter,
                    trace,
                })
            }
        };
        let param_grad = net.backward(&tape, &grad);
        adam.step(net.params_mut(), &param_grad);
        log::debug!("iter {iter}: total {:.6}", step.breakdown.total);
    }
    let output = net.forward(&x)?;
    let final_loss = evaluate(&obj, &output, &probe_patches, probe_warps.as_deref(), false)?.breakdown;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            iteration: cfg.iterations,
            trace,
        });
    }
    let image = composite(&to_image(&output)?, content, task.mask())?;
    Ok(StylizedResult {
        image,
        loss_trace: trace,
        task: task.clone(),
        config: cfg.clone(),
        config_fingerprint: cfg.fingerprint(),
        seeds,
        initial_loss,
        final_loss,
    })
}

/// Something that stylizes one grounded region.
pub trait RegionStylizer {
    fn stylize(&self, content: &ImageTensor, task: &RegionStyleTask, cfg: &EngineConfig) -> Result<StylizedResult>;
}

/// Inference-time optimization against an encoder bundle.
pub struct Optimizer<'a> {
    pub enc: &'a EncoderBundle,
}

impl RegionStylizer for Optimizer<'_> {
    fn stylize(&self, content: &ImageTensor, task: &RegionStyleTask, cfg: &EngineConfig) -> Result<StylizedResult> {
        optimize_region(content, task, cfg, self.enc)
    }
}

/// Final image and the per-region results in directive order.
#[derive(Clone, Debug)]
pub struct MultiRegionResult {
    pub image: ImageTensor,
    pub regions: Vec<StylizedResult>,
}

/// Grounds and stylizes each directive against the current image, feeding each
/// composite into the next region. Region `i` uses seed `cfg.seed + i`.
pub fn stylize_multi(
    content: &ImageTensor,
    directives: &[StyleDirective],
    grounder: &dyn Grounder,
    cfg: &EngineConfig,
    enc: &EncoderBundle,
) -> Result<MultiRegionResult> {
    stylize_multi_with(content, directives, grounder, cfg, &Optimizer { enc })
}

pub fn stylize_multi_with(
    content: &ImageTensor,
    directives: &[StyleDirective],
    grounder: &dyn Grounder,
    cfg: &EngineConfig,
    stylizer: &dyn RegionStylizer,
) -> Result<MultiRegionResult> {
    if directives.is_empty() {
        return Err(Error::InvalidInput("no style directives given".into()));
    }
    let mut current = content.clone();
    let mut regions = Vec::with_capacity(directives.len());
    for (i, directive) in directives.iter().enumerate() {
        let region_cfg = EngineConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let outcome = grounder
            .ground(&current, directive)
            .and_then(|task| stylizer.stylize(&current, &task, &region_cfg));
        match outcome {
            Ok(result) => {
                current = result.image.clone();
                regions.push(result);
            }
            Err(e) => {
                return Err(Error::Region {
                    region: i,
                    source: Box::new(e),
                    partial: (i > 0).then(|| Box::new(current)),
                })
            }
        }
    }
    Ok(MultiRegionResult {
        image: current,
        regions,
    })
}

/// Writes the trace as JSONL, one record per iteration.
pub fn write_trace(path: impl AsRef<Path>, trace: &[IterationRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in trace {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<IterationRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Provenance record written next to each output image.
#[derive(Clone, Debug, Serialize)]
pub struct Sidecar<'a> {
    pub config_fingerprint: &'a str,
    pub config: &'a EngineConfig,
    pub seeds: RunSeeds,
    pub region_phrase: &'a str,
    pub style_phrase: &'a str,
    pub mask_checksum: String,
    pub bbox: BoundingBox,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
}

impl StylizedResult {
    pub fn sidecar(&self) -> Sidecar<'_> {
        Sidecar {
            config_fingerprint: &self.config_fingerprint,
            config: &self.config,
            seeds: self.seeds,
            region_phrase: self.task.region_phrase(),
            style_phrase: self.task.style_phrase(),
            mask_checksum: self.task.mask().checksum(),
            bbox: *self.task.bbox(),
            initial_loss: self.initial_loss,
            final_loss: self.final_loss,
        }
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}
