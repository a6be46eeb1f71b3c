use std::fmt;
use std::path::PathBuf;

use crate::engine::IterationRecord;
use crate::imaging::ImageTensor;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a grounding failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundingStage {
    Query,
    Parse,
    Denormalize,
    Segment,
    Refine,
    TightBox,
}

impl fmt::Display for GroundingStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GroundingStage::Query => "vlm-query",
            GroundingStage::Parse => "parse",
            GroundingStage::Denormalize => "denormalize",
            GroundingStage::Segment => "segment",
            GroundingStage::Refine => "refine",
            GroundingStage::TightBox => "tight-box",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cannot decode image {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("cannot parse VLM response ({reason}): {raw:?}")]
    Parse { reason: String, raw: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("degenerate style: {0}")]
    DegenerateStyle(String),

    #[error("optimization diverged at iteration {iteration}: non-finite loss")]
    Divergence {
        iteration: usize,
        trace: Vec<IterationRecord>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("grounding failed at {stage} stage: {source}")]
    Grounding {
        stage: GroundingStage,
        #[source]
        source: Box<Error>,
    },

    #[error("region {region} failed: {source}")]
    Region {
        region: usize,
        #[source]
        source: Box<Error>,
        /// Composite after the last successful region, if any region succeeded.
        partial: Option<Box<ImageTensor>>,
    },

    #[error("benchmark run failed: {failed} of {total} entries failed")]
    RunFailed { failed: usize, total: usize },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn grounding(stage: GroundingStage, source: Error) -> Self {
        Error::Grounding {
            stage,
            source: Box::new(source),
        }
    }

    /// Innermost error, looking through grounding and region wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Grounding { source, .. } | Error::Region { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the failure comes from an unparseable VLM reply.
    pub fn is_parse_failure(&self) -> bool {
        matches!(self.root(), Error::Parse { .. })
    }

    /// Grounding stage, if the failure happened during grounding.
    pub fn grounding_stage(&self) -> Option<GroundingStage> {
        match self {
            Error::Grounding { stage, .. } => Some(*stage),
            Error::Region { source, .. } => source.grounding_stage(),
            _ => None,
        }
    }
}
