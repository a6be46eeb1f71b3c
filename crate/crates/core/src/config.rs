//! Run configuration: engine hyperparameters plus backends and output settings.
//!
//! Values are merged in layers: built-in defaults, then the
//! `LEAST_VLM_ENDPOINT` / `LEAST_SEG_ENDPOINT` environment variables, then a
//! `key = value` file, then command-line flags. Files and flags go through
//! the same [`RunConfig::set`] so both accept the same keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::grounding::BoxFormat;

pub const VLM_ENDPOINT_ENV: &str = "LEAST_VLM_ENDPOINT";
pub const SEG_ENDPOINT_ENV: &str = "LEAST_SEG_ENDPOINT";

/// Which segmentation backend to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterKind {
    /// HTTP when an endpoint is configured, the local contrast segmenter otherwise.
    #[default]
    Auto,
    Http,
    Contrast,
    Box,
}

impl std::str::FromStr for SegmenterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "http" => Ok(Self::Http),
            "contrast" => Ok(Self::Contrast),
            "box" => Ok(Self::Box),
            other => Err(Error::Config(format!(
                "unknown segmenter {other:?} (expected auto, http, contrast or box)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub vlm_endpoint: Option<String>,
    pub seg_endpoint: Option<String>,
    pub segmenter: SegmenterKind,
    pub box_format: BoxFormat,
    pub timeout_secs: u64,
    pub output_dir: PathBuf,
    pub verbosity: u8,
    pub encoder_seed: u64,
    /// torchvision-layout VGG16 weights for the content loss.
    pub vgg_weights: Option<PathBuf>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            vlm_endpoint: None,
            seg_endpoint: None,
            segmenter: SegmenterKind::Auto,
            box_format: BoxFormat::Xyxy,
            timeout_secs: 120,
            output_dir: PathBuf::from("out"),
            verbosity: 0,
            encoder_seed: 0,
            vgg_weights: None,
            workers: 1,
        }
    }
}

/// Every key accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "lambda_dir",
    "lambda_patch",
    "lambda_content",
    "lambda_tv",
    "patch_count",
    "patch_size",
    "resolution",
    "learning_rate",
    "iterations",
    "seed",
    "source_text",
    "content_resolution",
    "augment",
    "vlm_endpoint",
    "seg_endpoint",
    "segmenter",
    "box_format",
    "timeout_secs",
    "output_dir",
    "verbosity",
    "encoder_seed",
    "vgg_weights",
    "workers",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn optional(value: &str) -> Option<String> {
    match value {
        "" | "none" => None,
        v => Some(v.to_string()),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.engine;
        match key {
            "lambda_dir" => e.weights.lambda_dir = parse(key, value)?,
            "lambda_patch" => e.weights.lambda_patch = parse(key, value)?,
            "lambda_content" => e.weights.lambda_content = parse(key, value)?,
            "lambda_tv" => e.weights.lambda_tv = parse(key, value)?,
            "patch_count" => e.patch_count = parse(key, value)?,
            "patch_size" => e.patch_size = parse(key, value)?,
            "resolution" => e.resolution = parse(key, value)?,
            "learning_rate" => e.learning_rate = parse(key, value)?,
            "iterations" => e.iterations = parse(key, value)?,
            "seed" => e.seed = parse(key, value)?,
            "source_text" => e.source_text = value.to_string(),
            "content_resolution" => {
                e.content_resolution = optional(value).map(|v| parse(key, &v)).transpose()?
            }
            "augment" => e.augment = parse(key, value)?,
            "vlm_endpoint" => self.vlm_endpoint = optional(value),
            "seg_endpoint" => self.seg_endpoint = optional(value),
            "segmenter" => self.segmenter = value.parse()?,
            "box_format" => self.box_format = value.parse()?,
            "timeout_secs" => self.timeout_secs = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "verbosity" => self.verbosity = parse(key, value)?,
            "encoder_seed" => self.encoder_seed = parse(key, value)?,
            "vgg_weights" => self.vgg_weights = optional(value).map(PathBuf::from),
            "workers" => self.workers = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = &'a (String, String)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Endpoint defaults from the environment, looked up through `env`.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) {
        if let Some(v) = env(VLM_ENDPOINT_ENV).filter(|v| !v.is_empty()) {
            self.vlm_endpoint = Some(v);
        }
        if let Some(v) = env(SEG_ENDPOINT_ENV).filter(|v| !v.is_empty()) {
            self.seg_endpoint = Some(v);
        }
    }

    /// Defaults, then environment, then file pairs, then flag pairs.
    pub fn merge(
        env: impl Fn(&str) -> Option<String>,
        file: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_env(env);
        cfg.apply(file)?;
        cfg.apply(flags)?;
        Ok(cfg)
    }
}

/// Parses `key = value` lines. `#` starts a comment line; values may be
/// wrapped in double quotes to keep surrounding spaces.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
        }
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
