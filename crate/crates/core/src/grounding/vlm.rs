//! Vision-language model query, reply grammar and backends.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{LazyLock, Mutex};
use std::time::Duration;

use base64::Engine as _;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::StyleDirective;
use crate::error::{Error, Result};
use crate::imaging::{encode_png, ImageTensor, NormalizedBox};

const QUERY_PREFIX: &str = "For a given user prompt: '";
const QUERY_SUFFIX: &str = "', give the bounding box coordinates of the object that should be stylized. Also return the corresponding style in quotes.";

/// The grounding question sent to the VLM, with the directive substituted verbatim.
pub fn build_vlm_query(directive: &StyleDirective) -> String {
    format!("{QUERY_PREFIX}{}{QUERY_SUFFIX}", directive.raw_text())
}

/// Coordinate layout of the 4-tuple in VLM replies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxFormat {
    /// `[x0, y0, x1, y1]`
    #[default]
    Xyxy,
    /// `[y0, x0, y1, x1]`
    Yxyx,
    /// `[cx, cy, w, h]`
    Cxcywh,
}

impl std::str::FromStr for BoxFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyxy" => Ok(BoxFormat::Xyxy),
            "yxyx" => Ok(BoxFormat::Yxyx),
            "cxcywh" => Ok(BoxFormat::Cxcywh),
            other => Err(Error::Config(format!(
                "unknown box format {other:?} (expected xyxy, yxyx or cxcywh)"
            ))),
        }
    }
}

impl std::fmt::Display for BoxFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoxFormat::Xyxy => "xyxy",
            BoxFormat::Yxyx => "yxyx",
            BoxFormat::Cxcywh => "cxcywh",
        })
    }
}

impl BoxFormat {
    fn to_corners(self, v: [f64; 4]) -> [f64; 4] {
        match self {
            BoxFormat::Xyxy => v,
            BoxFormat::Yxyx => [v[1], v[0], v[3], v[2]],
            BoxFormat::Cxcywh => [
                v[0] - v[2] / 2.0,
                v[1] - v[3] / 2.0,
                v[0] + v[2] / 2.0,
                v[1] + v[3] / 2.0,
            ],
        }
    }
}

/// A parsed VLM reply.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VlmResponse {
    pub raw: String,
    pub parsed_box: NormalizedBox,
    pub parsed_style: String,
}

const NUM: &str = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)";

static TUPLE: LazyLock<Regex> = LazyLock::new(|| {
    let sep = r"\s*,\s*";
    Regex::new(&format!(r"\[\s*{NUM}{sep}{NUM}{sep}{NUM}{sep}{NUM}\s*\]")).expect("valid regex")
});

static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"]*)""#).expect("valid regex"));

/// Parses `[x0, y0, x1, y1]` and the first double-quoted span.
pub fn parse_vlm_response(raw: &str) -> Result<VlmResponse> {
    parse_vlm_response_with(raw, BoxFormat::Xyxy)
}

pub fn parse_vlm_response_with(raw: &str, format: BoxFormat) -> Result<VlmResponse> {
    let fail = |reason: &str| Error::Parse {
        reason: reason.to_string(),
        raw: raw.to_string(),
    };
    if raw.trim().is_empty() {
        return Err(fail("empty reply"));
    }
    let caps = TUPLE
        .captures(raw)
        .ok_or_else(|| fail("no bracketed 4-tuple of numbers"))?;
    let mut v = [0f64; 4];
    for (i, slot) in v.iter_mut().enumerate() {
        *slot = caps[i + 1]
            .parse::<f64>()
            .map_err(|_| fail("malformed coordinate"))?;
    }
    let [x0, y0, x1, y1] = format.to_corners(v).map(|c| c.clamp(0.0, 1.0));
    if !(x0 < x1 && y0 < y1) {
        return Err(fail("degenerate box after clamping"));
    }
    let style = QUOTED
        .captures(raw)
        .map(|c| c[1].to_string())
        .ok_or_else(|| fail("no double-quoted style"))?;
    if style.trim().is_empty() {
        return Err(fail("empty quoted style"));
    }
    Ok(VlmResponse {
        raw: raw.to_string(),
        parsed_box: NormalizedBox::new(x0, y0, x1, y1).map_err(|_| fail("invalid box"))?,
        parsed_style: style,
    })
}

/// Text-in, text-out vision-language model.
pub trait VlmBackend: Send + Sync {
    fn query(&self, image: &ImageTensor, prompt: &str) -> Result<String>;
}

#[derive(Serialize)]
struct VlmRequest<'a> {
    image: String,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct VlmReply {
    text: String,
}

/// JSON-over-HTTP client: POST `{image, prompt}`, expects `{text}`.
#[derive(Clone, Debug)]
pub struct HttpVlm {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpVlm {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl VlmBackend for HttpVlm {
    fn query(&self, image: &ImageTensor, prompt: &str) -> Result<String> {
        let body = VlmRequest {
            image: base64::engine::general_purpose::STANDARD.encode(encode_png(image)?),
            prompt,
        };
        let reply: VlmReply = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| Error::Backend(format!("VLM request to {} failed: {e}", self.endpoint)))?
            .into_json()
            .map_err(|e| Error::Backend(format!("VLM reply from {} is not valid JSON: {e}", self.endpoint)))?;
        Ok(reply.text)
    }
}

/// One recorded exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt: String,
    pub response_text: String,
}

/// Replays recorded transcripts.
///
/// A transcript matches when its `prompt` equals the full query or the raw
/// directive embedded in it. Repeated queries walk through the matching
/// transcripts in file order and then stay on the last one.
#[derive(Debug, Default)]
pub struct FixtureVlm {
    transcripts: Vec<Transcript>,
    cursor: Mutex<HashMap<String, usize>>,
}

impl FixtureVlm {
    pub fn new(transcripts: Vec<Transcript>) -> Self {
        Self {
            transcripts,
            cursor: Mutex::new(HashMap::new()),
        }
    }

    /// Reads a JSONL file of `{prompt, response_text}` records.
    pub fn from_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut transcripts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: Transcript = serde_json::from_str(line).map_err(|e| {
                Error::Config(format!("{}:{}: bad transcript: {e}", path.display(), n + 1))
            })?;
            transcripts.push(t);
        }
        Ok(Self::new(transcripts))
    }

    pub fn transcripts(&self) -> &[Transcript] {
        &self.transcripts
    }
}

fn directive_of(query: &str) -> Option<&str> {
    query.strip_prefix(QUERY_PREFIX)?.strip_suffix(QUERY_SUFFIX)
}

impl VlmBackend for FixtureVlm {
    fn query(&self, _image: &ImageTensor, prompt: &str) -> Result<String> {
        let directive = directive_of(prompt);
        let matches: Vec<&Transcript> = self
            .transcripts
            .iter()
            .filter(|t| t.prompt == prompt || Some(t.prompt.as_str()) == directive)
            .collect();
        if matches.is_empty() {
            return Err(Error::Backend(format!("no fixture transcript for prompt {prompt:?}")));
        }
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let slot = cursor.entry(prompt.to_string()).or_insert(0);
        let t = matches[(*slot).min(matches.len() - 1)];
        *slot += 1;
        Ok(t.response_text.clone())
    }
}
