//! The four masked objectives and their weighted total.
//!
//! Every term is built on candle tensors so the gradient with respect to the
//! stylized image is available through `backward()`. [`Objective`] caches the
//! content-side quantities of one region task; the free functions evaluate a
//! single term on plain images.

use candle_core::{DType, Device, Tensor, D};
use nalgebra::{SMatrix, SVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderBundle, CONTENT_LAYERS};
use crate::error::{Error, Result};
use crate::grounding::RegionStyleTask;
use crate::imaging::{BinaryMask, BoundingBox, ImageTensor, Shape2};
use crate::resample;

pub const EPS: f64 = 1e-8;

/// `E_T(style) - E_T(source)`, constant during optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct TextDelta {
    vector: Vec<f64>,
}

impl TextDelta {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateStyle("text delta is not finite".into()));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < EPS {
            return Err(Error::DegenerateStyle(format!(
                "text delta norm {norm:e} below {EPS:e}"
            )));
        }
        Ok(Self { vector })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn tensor(&self, dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
        Tensor::from_slice(&self.vector, self.vector.len(), device)?.to_dtype(dtype)
    }
}

pub fn text_delta(style: &str, source_text: &str, enc: &EncoderBundle) -> Result<TextDelta> {
    if style.trim().is_empty() || source_text.trim().is_empty() {
        return Err(Error::InvalidInput("style and source text must be non-empty".into()));
    }
    let s = enc.text.encode_text(style)?;
    let t = enc.text.encode_text(source_text)?;
    TextDelta::new(s.iter().zip(&t).map(|(a, b)| a - b).collect())
        .map_err(|_| Error::DegenerateStyle(format!("{style:?} embeds like {source_text:?}")))
}

/// Square patch with top-left corner `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchBox {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

/// `count` uniform patches of side `min(patch_size, box width, box height)` inside `bbox`.
pub fn sample_patches<R: Rng + ?Sized>(
    bbox: &BoundingBox,
    count: usize,
    patch_size: usize,
    rng: &mut R,
) -> Vec<PatchBox> {
    let s = patch_size.max(1).min(bbox.width()).min(bbox.height());
    if s == 1 && patch_size > 1 {
        log::warn!("box {bbox:?} only admits 1-pixel patches");
    }
    (0..count)
        .map(|_| PatchBox {
            x: rng.random_range(bbox.x0..=bbox.x1 - s),
            y: rng.random_range(bbox.y0..=bbox.y1 - s),
            size: s,
        })
        .collect()
}

/// Random perspective warp applied identically to a content/stylized patch pair.
///
/// Each corner of the unit square moves inward by up to `distortion / 2` of
/// the side; output pixels whose source falls outside the crop read 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Perspective {
    /// Maps output pixel coordinates to source coordinates (row-major 3x3).
    homography: [f64; 9],
}

impl Perspective {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, distortion: f64) -> Self {
        let d = distortion / 2.0;
        let mut jitter = || rng.random_range(0.0..=d);
        let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let dst = [
            (jitter(), jitter()),
            (1.0 - jitter(), jitter()),
            (1.0 - jitter(), 1.0 - jitter()),
            (jitter(), 1.0 - jitter()),
        ];
        Self::from_corners(dst, src)
    }

    pub fn identity() -> Self {
        Self {
            homography: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Homography sending each `from` corner to the matching `to` corner.
    fn from_corners(from: [(f64, f64); 4], to: [(f64, f64); 4]) -> Self {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for (i, (&(x, y), &(u, v))) in from.iter().zip(&to).enumerate() {
            let r = 2 * i;
            a.row_mut(r)
                .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            a.row_mut(r + 1)
                .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b[r] = u;
            b[r + 1] = v;
        }
        match a.lu().solve(&b) {
            Some(h) => {
                let mut homography = [1.0; 9];
                homography[..8].copy_from_slice(h.as_slice());
                Self { homography }
            }
            None => Self::identity(),
        }
    }

    /// Bilinear taps `(index, weight)` per output pixel of an `s x s` grid, four per pixel.
    fn taps(&self, s: usize) -> (Vec<u32>, Vec<f64>) {
        let h = &self.homography;
        let mut idx = vec![0u32; 4 * s * s];
        let mut wts = vec![0f64; 4 * s * s];
        let n = s * s;
        for oy in 0..s {
            for ox in 0..s {
                let (u, v) = ((ox as f64 + 0.5) / s as f64, (oy as f64 + 0.5) / s as f64);
                let w = h[6] * u + h[7] * v + h[8];
                let sx = (h[0] * u + h[1] * v + h[2]) / w * s as f64 - 0.5;
                let sy = (h[3] * u + h[4] * v + h[5]) / w * s as f64 - 0.5;
                let (fx, fy) = (sx.floor(), sy.floor());
                let (ax, ay) = (sx - fx, sy - fy);
                let p = oy * s + ox;
                let corners = [
                    (fx, fy, (1.0 - ax) * (1.0 - ay)),
                    (fx + 1.0, fy, ax * (1.0 - ay)),
                    (fx, fy + 1.0, (1.0 - ax) * ay),
                    (fx + 1.0, fy + 1.0, ax * ay),
                ];
                for (k, &(cx, cy, wt)) in corners.iter().enumerate() {
                    if cx >= 0.0 && cy >= 0.0 && cx < s as f64 && cy < s as f64 {
                        idx[k * n + p] = (cy as usize * s + cx as usize) as u32;
                        wts[k * n + p] = wt;
                    }
                }
            }
        }
        (idx, wts)
    }

    /// Warps an `(3, s, s)` tensor.
    fn apply(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (c, s, _) = x.dims3()?;
        let (idx, wts) = self.taps(s);
        let n = s * s;
        let flat = x.reshape((c, n))?;
        let mut out: Option<Tensor> = None;
        for k in 0..4 {
            let i = Tensor::from_slice(&idx[k * n..(k + 1) * n], n, x.device())?;
            let w = Tensor::from_slice(&wts[k * n..(k + 1) * n], (1, n), x.device())?
                .to_dtype(x.dtype())?;
            let term = flat.index_select(&i, 1)?.broadcast_mul(&w)?;
            out = Some(match out {
                Some(acc) => (acc + term)?,
                None => term,
            });
        }
        out.expect("four taps").reshape((c, s, s))
    }
}

/// Loss coefficients of the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_dir: f64,
    pub lambda_patch: f64,
    pub lambda_content: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dir: 500.0,
            lambda_patch: 1000.0,
            lambda_content: 150.0,
            lambda_tv: 2e-3,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_dir: 0.0,
        lambda_patch: 0.0,
        lambda_content: 0.0,
        lambda_tv: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_dir, self.lambda_patch, self.lambda_content, self.lambda_tv];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted term values and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub dir: f64,
    pub patch: f64,
    pub content: f64,
    pub tv: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.dir, self.patch, self.content, self.tv]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn scalar(t: &Tensor) -> candle_core::Result<f64> {
    t.to_dtype(DType::F64)?.to_scalar::<f64>()
}

/// Per-row `1 - cos(ΔT, ΔI)` for `(N, D)` image deltas, with both norms floored at
/// [`EPS`]. Rows with `‖ΔI‖ < EPS` evaluate to exactly 1 while keeping the
/// gradient of the floored cosine.
pub fn directional_rows(delta_i: &Tensor, dt: &TextDelta) -> candle_core::Result<Tensor> {
    let dtype = delta_i.dtype();
    let t = dt.tensor(dtype, delta_i.device())?;
    let dot = delta_i.matmul(&t.unsqueeze(1)?)?.squeeze(1)?;
    let sumsq = delta_i.sqr()?.sum(1)?;
    let norm_i = sumsq.maximum(EPS * EPS)?.sqrt()?;
    let norm_t = dt.norm().max(EPS);
    let cos = (dot / norm_i)?.affine(1.0 / norm_t, 0.0)?.clamp(-1.0, 1.0)?;
    let small: Vec<f64> = sumsq
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?
        .into_iter()
        .map(|s| if s.sqrt() < EPS { 1.0 } else { 0.0 })
        .collect();
    let cos = if small.iter().any(|&s| s > 0.0) {
        let small = Tensor::from_vec(small, cos.dims(), cos.device())?.to_dtype(dtype)?;
        (&cos - cos.detach().mul(&small)?)?
    } else {
        cos
    };
    cos.affine(-1.0, 1.0)
}

/// Normalizes `(N, 3, h, w)` pixels to the image encoder's input and embeds them.
fn embed(enc: &EncoderBundle, pixels: &Tensor) -> candle_core::Result<Tensor> {
    let s = enc.image.input_size();
    let x = resample::resize_tensor(pixels, s, s)?;
    enc.image.encode(&enc.image.pixel_norm().apply(&x)?)
}

fn crop(x: &Tensor, x0: usize, y0: usize, w: usize, h: usize) -> candle_core::Result<Tensor> {
    x.narrow(2, y0, h)?.narrow(3, x0, w)
}

/// Patch crops of a `(1, 3, H, W)` tensor resized to `size`, optionally warped.
fn patch_batch(
    x: &Tensor,
    patches: &[PatchBox],
    size: usize,
    warps: Option<&[Perspective]>,
) -> candle_core::Result<Tensor> {
    let mut crops = Vec::with_capacity(patches.len());
    for (j, p) in patches.iter().enumerate() {
        let c = resample::resize_tensor(&crop(x, p.x, p.y, p.size, p.size)?, size, size)?;
        crops.push(match warps {
            Some(w) => w[j].apply(&c.squeeze(0)?)?.unsqueeze(0)?,
            None => c,
        });
    }
    Tensor::cat(&crops, 0)
}

fn tv(j: &Tensor) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = j.dims4()?;
    let zero = Tensor::zeros((), j.dtype(), j.device())?;
    let horiz = if w > 1 {
        (j.narrow(3, 1, w - 1)? - j.narrow(3, 0, w - 1)?)?.sqr()?.mean_all()?
    } else {
        zero.clone()
    };
    let vert = if h > 1 {
        (j.narrow(2, 1, h - 1)? - j.narrow(2, 0, h - 1)?)?.sqr()?.mean_all()?
    } else {
        zero
    };
    horiz + vert
}

/// Options that shape the objective beyond the loss weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectiveOptions {
    /// Side of the content-loss crops; the extractor's own input size when unset.
    pub content_resolution: Option<usize>,
}

/// Weighted objective for one region task with the content side precomputed.
pub struct Objective<'a> {
    enc: &'a EncoderBundle,
    dtype: DType,
    content: Tensor,
    mask: Tensor,
    bbox: BoundingBox,
    dt: TextDelta,
    content_embedding: Tensor,
    content_features: Vec<Tensor>,
    content_resolution: usize,
    weights: LossWeights,
    height: usize,
    width: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        enc: &'a EncoderBundle,
        content: &ImageTensor,
        mask: &BinaryMask,
        bbox: BoundingBox,
        dt: TextDelta,
        weights: LossWeights,
        options: &ObjectiveOptions,
        dtype: DType,
    ) -> Result<Self> {
        if !content.same_shape(mask) {
            return Err(Error::InvalidInput("content and mask shapes differ".into()));
        }
        if !bbox.fits(content.width(), content.height()) {
            return Err(Error::InvalidInput(format!("box {bbox:?} exceeds the image")));
        }
        if dt.vector().len() != enc.image.embed_dim() {
            return Err(Error::InvalidInput("text delta dimension differs from the image encoder".into()));
        }
        weights.validate()?;
        let device = Device::Cpu;
        let content_t = content.to_tensor(dtype, &device)?;
        let mask_t = mask.to_tensor(dtype, &device)?;
        let content_embedding = embed(enc, &content_t.broadcast_mul(&mask_t)?)?;
        let content_resolution = options
            .content_resolution
            .unwrap_or_else(|| enc.features.input_size());
        if content_resolution == 0 {
            return Err(Error::Config("content resolution must be positive".into()));
        }
        let mut obj = Self {
            enc,
            dtype,
            content: content_t,
            mask: mask_t,
            bbox,
            dt,
            content_embedding,
            content_features: Vec::new(),
            content_resolution,
            weights,
            height: content.height(),
            width: content.width(),
        };
        obj.content_features = obj.features(&obj.content)?;
        Ok(obj)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    fn check(&self, stylized: &Tensor) -> Result<()> {
        if stylized.dims() != [1, 3, self.height, self.width] {
            return Err(Error::InvalidInput(format!(
                "stylized tensor {:?} does not match content (1, 3, {}, {})",
                stylized.dims(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    fn features(&self, x: &Tensor) -> candle_core::Result<Vec<Tensor>> {
        let b = &self.bbox;
        let r = self.content_resolution;
        let c = resample::resize_tensor(&crop(x, b.x0, b.y0, b.width(), b.height())?, r, r)?;
        let norm = self.enc.features.pixel_norm().apply(&c)?;
        self.enc.features.extract(&norm, &CONTENT_LAYERS)
    }

    /// Directional loss on the masked full frame.
    pub fn directional(&self, stylized: &Tensor) -> Result<Tensor> {
        self.check(stylized)?;
        let e = embed(self.enc, &stylized.to_dtype(self.dtype)?.broadcast_mul(&self.mask)?)?;
        let rows = directional_rows(&(e - &self.content_embedding)?, &self.dt)?;
        Ok(rows.sum_all()?)
    }

    /// Sum of directional losses over patch pairs.
    pub fn patch(
        &self,
        stylized: &Tensor,
        patches: &[PatchBox],
        warps: Option<&[Perspective]>,
    ) -> Result<Tensor> {
        self.check(stylized)?;
        if patches.is_empty() {
            return Err(Error::InvalidInput("patch loss needs at least one patch".into()));
        }
        if let Some(w) = warps {
            if w.len() != patches.len() {
                return Err(Error::InvalidInput("one perspective warp per patch required".into()));
            }
        }
        for p in patches {
            if p.size == 0 || p.x + p.size > self.width || p.y + p.size > self.height {
                return Err(Error::InvalidInput(format!("patch {p:?} leaves the image")));
            }
        }
        let s = self.enc.image.input_size();
        let sty = patch_batch(&stylized.to_dtype(self.dtype)?, patches, s, warps)?;
        let con = patch_batch(&self.content, patches, s, warps)?;
        let norm = self.enc.image.pixel_norm();
        let e_sty = self.enc.image.encode(&norm.apply(&sty)?)?;
        let e_con = self.enc.image.encode(&norm.apply(&con)?)?;
        Ok(directional_rows(&(e_sty - e_con)?, &self.dt)?.sum_all()?)
    }

    /// Mean over content layers of the feature MSE on box crops.
    pub fn content(&self, stylized: &Tensor) -> Result<Tensor> {
        self.check(stylized)?;
        let feats = self.features(&stylized.to_dtype(self.dtype)?)?;
        let mut total: Option<Tensor> = None;
        for (a, b) in feats.iter().zip(&self.content_features) {
            let mse = (a - b)?.sqr()?.mean_all()?;
            total = Some(match total {
                Some(t) => (t + mse)?,
                None => mse,
            });
        }
        let total = total.expect("content layers are non-empty");
        Ok(total.affine(1.0 / feats.len() as f64, 0.0)?)
    }

    /// Total variation of the masked stylized image.
    pub fn tv(&self, stylized: &Tensor) -> Result<Tensor> {
        self.check(stylized)?;
        Ok(tv(&stylized.to_dtype(self.dtype)?.broadcast_mul(&self.mask)?)?)
    }

    /// Weighted total. Terms with a zero weight are evaluated on a detached
    /// input, so they are reported but contribute nothing to the graph.
    pub fn evaluate(
        &self,
        stylized: &Tensor,
        patches: &[PatchBox],
        warps: Option<&[Perspective]>,
    ) -> Result<(Tensor, LossBreakdown)> {
        let w = self.weights;
        let detached = stylized.detach();
        let pick = |weight: f64| if weight == 0.0 { &detached } else { stylized };
        let dir = self.directional(pick(w.lambda_dir))?;
        let patch = self.patch(pick(w.lambda_patch), patches, warps)?;
        let content = self.content(pick(w.lambda_content))?;
        let tv = self.tv(pick(w.lambda_tv))?;
        let mut breakdown = LossBreakdown {
            total: 0.0,
            dir: scalar(&dir)?,
            patch: scalar(&patch)?,
            content: scalar(&content)?,
            tv: scalar(&tv)?,
        };
        let mut total: Option<Tensor> = None;
        for (term, weight) in [
            (dir, w.lambda_dir),
            (patch, w.lambda_patch),
            (content, w.lambda_content),
            (tv, w.lambda_tv),
        ] {
            if weight == 0.0 {
                continue;
            }
            let t = term.affine(weight, 0.0)?;
            total = Some(match total {
                Some(acc) => (acc + t)?,
                None => t,
            });
        }
        let total = match total {
            Some(t) => t,
            None => Tensor::zeros((), self.dtype, stylized.device())?,
        };
        breakdown.total = w.lambda_dir * breakdown.dir
            + w.lambda_patch * breakdown.patch
            + w.lambda_content * breakdown.content
            + w.lambda_tv * breakdown.tv;
        Ok((total, breakdown))
    }
}

fn check_pair(content: &ImageTensor, stylized: &ImageTensor) -> Result<()> {
    if !content.same_shape(stylized) {
        return Err(Error::InvalidInput(format!(
            "content {}x{} and stylized {}x{} differ",
            content.width(),
            content.height(),
            stylized.width(),
            stylized.height()
        )));
    }
    Ok(())
}

fn eval_objective<'a>(
    enc: &'a EncoderBundle,
    content: &ImageTensor,
    mask: &BinaryMask,
    bbox: BoundingBox,
    dt: &TextDelta,
) -> Result<Objective<'a>> {
    Objective::new(
        enc,
        content,
        mask,
        bbox,
        dt.clone(),
        LossWeights::ZERO,
        &ObjectiveOptions::default(),
        DType::F64,
    )
}

fn full_box<T: Shape2>(img: &T) -> BoundingBox {
    BoundingBox {
        x0: 0,
        y0: 0,
        x1: img.width(),
        y1: img.height(),
    }
}

pub fn masked_directional_loss(
    content: &ImageTensor,
    stylized: &ImageTensor,
    mask: &BinaryMask,
    dt: &TextDelta,
    enc: &EncoderBundle,
) -> Result<f64> {
    check_pair(content, stylized)?;
    let obj = eval_objective(enc, content, mask, full_box(content), dt)?;
    Ok(scalar(&obj.directional(&stylized.to_tensor(DType::F64, &Device::Cpu)?)?)?)
}

pub fn masked_patch_loss(
    content: &ImageTensor,
    stylized: &ImageTensor,
    patches: &[PatchBox],
    dt: &TextDelta,
    enc: &EncoderBundle,
    warps: Option<&[Perspective]>,
) -> Result<f64> {
    check_pair(content, stylized)?;
    let mask = BinaryMask::full(content.height(), content.width())?;
    let obj = eval_objective(enc, content, &mask, full_box(content), dt)?;
    Ok(scalar(&obj.patch(
        &stylized.to_tensor(DType::F64, &Device::Cpu)?,
        patches,
        warps,
    )?)?)
}

pub fn masked_content_loss(
    content: &ImageTensor,
    stylized: &ImageTensor,
    bbox: &BoundingBox,
    enc: &EncoderBundle,
) -> Result<f64> {
    check_pair(content, stylized)?;
    if bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 {
        return Err(Error::InvalidInput("content loss box has zero area".into()));
    }
    let mask = BinaryMask::full(content.height(), content.width())?;
    let dt = TextDelta::new(vec![1.0; enc.image.embed_dim()])?;
    let obj = eval_objective(enc, content, &mask, *bbox, &dt)?;
    Ok(scalar(&obj.content(&stylized.to_tensor(DType::F64, &Device::Cpu)?)?)?)
}

pub fn masked_tv_loss(stylized: &ImageTensor, mask: &BinaryMask) -> Result<f64> {
    if !stylized.same_shape(mask) {
        return Err(Error::InvalidInput("stylized image and mask shapes differ".into()));
    }
    let device = Device::Cpu;
    let j = stylized
        .to_tensor(DType::F64, &device)?
        .broadcast_mul(&mask.to_tensor(DType::F64, &device)?)?;
    Ok(scalar(&tv(&j)?)?)
}

/// Weighted total and per-term values for one stylized image.
pub fn total_objective(
    content: &ImageTensor,
    stylized: &ImageTensor,
    task: &RegionStyleTask,
    dt: &TextDelta,
    patches: &[PatchBox],
    weights: &LossWeights,
    enc: &EncoderBundle,
) -> Result<LossBreakdown> {
    check_pair(content, stylized)?;
    let obj = Objective::new(
        enc,
        content,
        task.mask(),
        *task.bbox(),
        dt.clone(),
        *weights,
        &ObjectiveOptions::default(),
        DType::F64,
    )?;
    let (_, breakdown) =
        obj.evaluate(&stylized.to_tensor(DType::F64, &Device::Cpu)?, patches, None)?;
    Ok(breakdown)
}

/// Cosine similarity of two flattened tensors, norms floored at [`EPS`].
pub(crate) fn cosine(a: &Tensor, b: &Tensor) -> candle_core::Result<f64> {
    let a = a.flatten_all()?.to_dtype(DType::F64)?;
    let b = b.flatten_all()?.to_dtype(DType::F64)?;
    let dot = scalar(&(&a * &b)?.sum(D::Minus1)?)?;
    let na = scalar(&a.sqr()?.sum_all()?)?.sqrt().max(EPS);
    let nb = scalar(&b.sqr()?.sum_all()?)?.sqrt().max(EPS);
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
