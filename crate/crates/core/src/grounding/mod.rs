//! From a free-form directive to a region mask and a style phrase.
//!
//! The pipeline asks a VLM for a normalized box and a quoted style, scales the
//! box to pixels, prompts a segmenter with it, fills pinholes in the result and
//! takes the tight box of the final mask.

use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::Serialize;

use crate::error::{Error, GroundingStage, Result};
use crate::imaging::{tight_bbox, BinaryMask, BoundingBox, ImageTensor, NormalizedBox};

pub mod rle;
pub mod segment;
pub mod vlm;

pub use rle::Rle;
pub use segment::{
    box_to_mask, denormalize_box, refine_mask, BoxFillSegmenter, ContrastSegmenter,
    FixedSegmenter, HttpSegmenter, ScoredMask, SegmentationBackend,
};
pub use vlm::{
    build_vlm_query, parse_vlm_response, parse_vlm_response_with, BoxFormat, FixtureVlm, HttpVlm,
    Transcript, VlmBackend, VlmResponse,
};

/// The user's prompt, non-empty after trimming.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StyleDirective {
    raw_text: String,
}

impl StyleDirective {
    pub fn new(raw_text: impl Into<String>) -> Result<Self> {
        let raw_text = raw_text.into();
        if raw_text.trim().is_empty() {
            return Err(Error::InvalidInput("style directive is empty".into()));
        }
        Ok(Self { raw_text })
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    /// Style and region phrases of an `apply <style> style to <region> [in the image]`
    /// directive, when it has that shape.
    pub fn template_phrases(&self) -> Option<(String, String)> {
        static TEMPLATE: LazyLock<Regex> = LazyLock::new(|| {
            Regex::new(r"(?i)^\s*apply\s+(.+?)\s+style\s+to\s+(.+?)(?:\s+in\s+the\s+image)?\s*[.!]?\s*$")
                .expect("valid regex")
        });
        let caps = TEMPLATE.captures(&self.raw_text)?;
        Some((caps[1].trim().to_string(), caps[2].trim().to_string()))
    }

    /// Region phrase for reporting: the template's region, else the whole directive.
    pub fn region_hint(&self) -> String {
        self.template_phrases()
            .map(|(_, r)| r)
            .unwrap_or_else(|| self.raw_text.trim().to_string())
    }
}

/// One grounded unit of work.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionStyleTask {
    region_phrase: String,
    style_phrase: String,
    mask: BinaryMask,
    bbox: BoundingBox,
}

impl RegionStyleTask {
    /// Builds a task; the box is always the tight box of `mask`.
    pub fn new(
        region_phrase: impl Into<String>,
        style_phrase: impl Into<String>,
        mask: BinaryMask,
    ) -> Result<Self> {
        let style_phrase = style_phrase.into();
        if style_phrase.trim().is_empty() {
            return Err(Error::InvalidInput("style phrase is empty".into()));
        }
        let bbox = tight_bbox(&mask)?;
        Ok(Self {
            region_phrase: region_phrase.into(),
            style_phrase,
            mask,
            bbox,
        })
    }

    pub fn region_phrase(&self) -> &str {
        &self.region_phrase
    }

    pub fn style_phrase(&self) -> &str {
        &self.style_phrase
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }
}

/// Intermediate values of one grounding run, for debugging output.
#[derive(Clone, Debug)]
pub struct GroundingReport {
    pub task: RegionStyleTask,
    pub raw_response: Option<String>,
    pub normalized_box: Option<NormalizedBox>,
    /// Pixel box sent to the segmenter.
    pub prompt_box: Option<BoundingBox>,
}

/// Asks the VLM and parses its reply, retrying once on any failure.
pub fn query_style(
    image: &ImageTensor,
    directive: &StyleDirective,
    vlm: &dyn VlmBackend,
    format: BoxFormat,
) -> Result<VlmResponse> {
    let query = build_vlm_query(directive);
    let attempt = || -> Result<VlmResponse> {
        let raw = vlm
            .query(image, &query)
            .map_err(|e| Error::grounding(GroundingStage::Query, e))?;
        parse_vlm_response_with(&raw, format).map_err(|e| Error::grounding(GroundingStage::Parse, e))
    };
    attempt().or_else(|first| {
        log::warn!("VLM grounding attempt failed ({first}), retrying once");
        attempt()
    })
}

/// Full grounding with intermediate values.
pub fn ground_detailed(
    image: &ImageTensor,
    directive: &StyleDirective,
    vlm: &dyn VlmBackend,
    seg: &dyn SegmentationBackend,
    format: BoxFormat,
) -> Result<GroundingReport> {
    let reply = query_style(image, directive, vlm, format)?;
    let prompt_box = denormalize_box(&reply.parsed_box, image.width(), image.height())
        .map_err(|e| Error::grounding(GroundingStage::Denormalize, e))?;
    let raw_mask =
        box_to_mask(image, &prompt_box, seg).map_err(|e| Error::grounding(GroundingStage::Segment, e))?;
    let mask = refine_mask(&raw_mask).map_err(|e| Error::grounding(GroundingStage::Refine, e))?;
    let task = RegionStyleTask::new(directive.region_hint(), reply.parsed_style.clone(), mask)
        .map_err(|e| Error::grounding(GroundingStage::TightBox, e))?;
    Ok(GroundingReport {
        task,
        raw_response: Some(reply.raw),
        normalized_box: Some(reply.parsed_box),
        prompt_box: Some(prompt_box),
    })
}

pub fn ground(
    image: &ImageTensor,
    directive: &StyleDirective,
    vlm: &dyn VlmBackend,
    seg: &dyn SegmentationBackend,
) -> Result<RegionStyleTask> {
    Ok(ground_detailed(image, directive, vlm, seg, BoxFormat::Xyxy)?.task)
}

/// Grounding with a user-supplied mask. The VLM, when present, is still asked
/// for the style phrase and its box is ignored; without one the directive must
/// follow the `apply <style> style to <region>` template.
pub fn ground_with_mask(
    image: &ImageTensor,
    directive: &StyleDirective,
    vlm: Option<&dyn VlmBackend>,
    mask: &BinaryMask,
    format: BoxFormat,
) -> Result<GroundingReport> {
    if !image.same_shape(mask) {
        return Err(Error::InvalidInput(format!(
            "mask override is {}x{}, image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let (style, raw, nbox) = match vlm {
        Some(vlm) => {
            let reply = query_style(image, directive, vlm, format)?;
            (reply.parsed_style, Some(reply.raw), Some(reply.parsed_box))
        }
        None => {
            let (style, _) = directive.template_phrases().ok_or_else(|| {
                Error::Config(format!(
                    "no VLM configured and {:?} does not read \"apply <style> style to <region>\"",
                    directive.raw_text()
                ))
            })?;
            (style, None, None)
        }
    };
    let refined = refine_mask(mask).map_err(|e| Error::grounding(GroundingStage::Refine, e))?;
    let task = RegionStyleTask::new(directive.region_hint(), style, refined)
        .map_err(|e| Error::grounding(GroundingStage::TightBox, e))?;
    Ok(GroundingReport {
        task,
        raw_response: raw,
        normalized_box: nbox,
        prompt_box: None,
    })
}

/// Anything that can turn a directive into a task against a given image.
pub trait Grounder: Send + Sync {
    fn ground(&self, image: &ImageTensor, directive: &StyleDirective) -> Result<RegionStyleTask>;
}

/// VLM plus segmenter.
#[derive(Clone)]
pub struct BackendGrounder {
    pub vlm: Arc<dyn VlmBackend>,
    pub seg: Arc<dyn SegmentationBackend>,
    pub format: BoxFormat,
}

impl Grounder for BackendGrounder {
    fn ground(&self, image: &ImageTensor, directive: &StyleDirective) -> Result<RegionStyleTask> {
        Ok(ground_detailed(image, directive, self.vlm.as_ref(), self.seg.as_ref(), self.format)?.task)
    }
}

/// Fixed mask, style from the VLM or the directive template.
#[derive(Clone)]
pub struct MaskGrounder {
    pub vlm: Option<Arc<dyn VlmBackend>>,
    pub mask: BinaryMask,
    pub format: BoxFormat,
}

impl Grounder for MaskGrounder {
    fn ground(&self, image: &ImageTensor, directive: &StyleDirective) -> Result<RegionStyleTask> {
        Ok(ground_with_mask(image, directive, self.vlm.as_deref(), &self.mask, self.format)?.task)
    }
}
