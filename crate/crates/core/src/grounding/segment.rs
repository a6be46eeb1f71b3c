//! Box-prompted segmentation backends and mask post-processing.

use std::collections::VecDeque;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::rle::Rle;
use crate::error::{Error, Result};
use crate::imaging::{encode_png, BinaryMask, BoundingBox, ImageTensor, NormalizedBox};

/// Candidate mask with row-major soft values in `[0, 1]` and a confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredMask {
    pub values: Vec<f32>,
    pub score: f64,
}

impl ScoredMask {
    pub fn from_mask(mask: &BinaryMask, score: f64) -> Self {
        Self {
            values: mask.data().iter().map(|&v| v as f32).collect(),
            score,
        }
    }
}

/// Image plus box prompt in, ranked candidate masks out.
pub trait SegmentationBackend: Send + Sync {
    fn segment(&self, image: &ImageTensor, bbox: &BoundingBox) -> Result<Vec<ScoredMask>>;
}

/// Returns the box interior.
#[derive(Clone, Copy, Debug, Default)]
pub struct BoxFillSegmenter;

impl SegmentationBackend for BoxFillSegmenter {
    fn segment(&self, image: &ImageTensor, bbox: &BoundingBox) -> Result<Vec<ScoredMask>> {
        let m = BinaryMask::from_box(image.height(), image.width(), bbox)?;
        Ok(vec![ScoredMask::from_mask(&m, 1.0)])
    }
}

/// Returns a fixed candidate list regardless of input.
#[derive(Clone, Debug, Default)]
pub struct FixedSegmenter {
    pub candidates: Vec<ScoredMask>,
}

impl SegmentationBackend for FixedSegmenter {
    fn segment(&self, _image: &ImageTensor, _bbox: &BoundingBox) -> Result<Vec<ScoredMask>> {
        Ok(self.candidates.clone())
    }
}

/// Classical foreground extraction inside the box prompt.
///
/// The background color is the mean over a thin ring along the box border;
/// pixels whose color distance to it exceeds an Otsu threshold (computed over
/// the box) are foreground.
#[derive(Clone, Copy, Debug)]
pub struct ContrastSegmenter {
    pub ring: usize,
}

impl Default for ContrastSegmenter {
    fn default() -> Self {
        Self { ring: 2 }
    }
}

fn otsu(values: &[f64]) -> f64 {
    const BINS: usize = 256;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let bin = |v: f64| (((v - lo) / span) * (BINS - 1) as f64).round() as usize;
    let mut hist = [0f64; BINS];
    for &v in values {
        hist[bin(v)] += 1.0;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, h)| i as f64 * h).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0);
    for (t, &h) in hist.iter().enumerate() {
        w0 += h;
        sum0 += t as f64 * h;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    lo + (best_t as f64 + 0.5) / (BINS - 1) as f64 * span
}

impl SegmentationBackend for ContrastSegmenter {
    fn segment(&self, image: &ImageTensor, bbox: &BoundingBox) -> Result<Vec<ScoredMask>> {
        let (h, w) = (image.height(), image.width());
        let ring = self.ring.max(1);
        let on_ring = |x: usize, y: usize| {
            x < bbox.x0 + ring || x + ring >= bbox.x1 || y < bbox.y0 + ring || y + ring >= bbox.y1
        };
        let mut bg = [0f64; 3];
        let mut n = 0f64;
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                if on_ring(x, y) {
                    for (c, acc) in bg.iter_mut().enumerate() {
                        *acc += image.get(c, y, x) as f64;
                    }
                    n += 1.0;
                }
            }
        }
        bg.iter_mut().for_each(|v| *v /= n);
        let mut dist = Vec::with_capacity(bbox.area());
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                let d2: f64 = (0..3)
                    .map(|c| (image.get(c, y, x) as f64 - bg[c]).powi(2))
                    .sum();
                dist.push(d2.sqrt());
            }
        }
        let hi = dist.iter().copied().fold(0.0, f64::max);
        let lo = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let mut values = vec![0f32; h * w];
        if hi - lo < 1e-6 {
            // Nothing separates from the border; fall back to the box itself.
            return BoxFillSegmenter.segment(image, bbox);
        }
        let t = otsu(&dist);
        let bw = bbox.width();
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                if dist[(y - bbox.y0) * bw + (x - bbox.x0)] > t {
                    values[y * w + x] = 1.0;
                }
            }
        }
        Ok(vec![ScoredMask { values, score: 1.0 }])
    }
}

#[derive(Serialize)]
struct SegRequest {
    image: String,
    #[serde(rename = "box")]
    bbox: [usize; 4],
}

#[derive(Deserialize)]
struct SegReply {
    masks: Vec<Rle>,
    scores: Vec<f64>,
}

/// JSON-over-HTTP client: POST `{image, box}`, expects `{masks: [rle], scores}`.
#[derive(Clone, Debug)]
pub struct HttpSegmenter {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpSegmenter {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl SegmentationBackend for HttpSegmenter {
    fn segment(&self, image: &ImageTensor, bbox: &BoundingBox) -> Result<Vec<ScoredMask>> {
        let body = SegRequest {
            image: base64::engine::general_purpose::STANDARD.encode(encode_png(image)?),
            bbox: bbox.as_array(),
        };
        let reply: SegReply = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| Error::Backend(format!("segmentation request to {} failed: {e}", self.endpoint)))?
            .into_json()
            .map_err(|e| {
                Error::Backend(format!("segmentation reply from {} is not valid JSON: {e}", self.endpoint))
            })?;
        if reply.masks.len() != reply.scores.len() {
            return Err(Error::Backend(format!(
                "segmentation reply has {} masks but {} scores",
                reply.masks.len(),
                reply.scores.len()
            )));
        }
        reply
            .masks
            .iter()
            .zip(reply.scores)
            .map(|(rle, score)| Ok(ScoredMask::from_mask(&rle.decode()?, score)))
            .collect()
    }
}

/// Pixel box covering every pixel whose center lies in `nbox` (floor/ceil widening).
pub fn denormalize_box(nbox: &NormalizedBox, width: usize, height: usize) -> Result<BoundingBox> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("cannot denormalize into an empty image".into()));
    }
    let lo = |v: f64, n: usize| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
    let hi = |v: f64, n: usize| ((v * n as f64).ceil().max(0.0) as usize).min(n);
    BoundingBox::new(
        lo(nbox.x0, width),
        lo(nbox.y0, height),
        hi(nbox.x1, width),
        hi(nbox.y1, height),
    )
}

/// Segments `bbox` and keeps the highest-scoring candidate, binarized at 0.5.
/// A failing backend is retried once.
pub fn box_to_mask(
    image: &ImageTensor,
    bbox: &BoundingBox,
    backend: &dyn SegmentationBackend,
) -> Result<BinaryMask> {
    let (h, w) = (image.height(), image.width());
    if !bbox.fits(w, h) {
        return Err(Error::InvalidInput(format!("box {bbox:?} exceeds {w}x{h} image")));
    }
    let candidates = match backend.segment(image, bbox) {
        Ok(c) => c,
        Err(first) => {
            log::warn!("segmentation failed ({first}), retrying once");
            backend.segment(image, bbox)?
        }
    };
    let best = candidates
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(j.cmp(i)))
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Backend("segmentation returned no masks".into()))?;
    if best.values.len() != h * w {
        return Err(Error::Backend(format!(
            "segmentation mask has {} values, image has {}",
            best.values.len(),
            h * w
        )));
    }
    let mask = BinaryMask::from_soft(h, w, &best.values, 0.5)?;
    if mask.is_empty() {
        return Err(Error::EmptyRegion("segmentation returned an empty mask".into()));
    }
    Ok(mask)
}

/// Fills background holes (4-connected components not touching the border)
/// smaller than 0.1% of the image area. Foreground components are all kept.
pub fn refine_mask(mask: &BinaryMask) -> Result<BinaryMask> {
    if mask.is_empty() {
        return Err(Error::EmptyRegion("cannot refine an empty mask".into()));
    }
    let (h, w) = (mask.height(), mask.width());
    let limit = 0.001 * (h * w) as f64;
    let mut out = mask.clone();
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.data()[start] == 1 {
            continue;
        }
        component.clear();
        let mut touches_border = false;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let (y, x) = (i / w, i % w);
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                touches_border = true;
            }
            let mut visit = |j: usize| {
                if !seen[j] && mask.data()[j] == 0 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        if !touches_border && (component.len() as f64) < limit {
            for &i in &component {
                out.set(i / w, i % w, true);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyRegion("refinement emptied the mask".into()));
    }
    Ok(out)
}
