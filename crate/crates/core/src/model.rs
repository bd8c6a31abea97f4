//! Shared domain types.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constraints::ConstraintSpec;
use crate::dsl::Action;
use crate::text::word_count;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("image payload is empty")]
    EmptyImage,
    #[error("image payload is neither PNG nor JPEG")]
    UnknownMediaKind,
    #[error("declared media kind {declared:?} does not match payload ({actual:?})")]
    MediaKindMismatch {
        declared: MediaKind,
        actual: Option<MediaKind>,
    },
    #[error("cannot read image {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Png,
    Jpeg,
}

impl MediaKind {
    pub fn sniff(bytes: &[u8]) -> Option<MediaKind> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(MediaKind::Png)
        } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
            Some(MediaKind::Jpeg)
        } else {
            None
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            MediaKind::Png => "image/png",
            MediaKind::Jpeg => "image/jpeg",
        }
    }
}

/// An image, always held in memory. `origin` remembers the file it came from.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageRef {
    bytes: Arc<[u8]>,
    kind: MediaKind,
    origin: Option<PathBuf>,
}

impl fmt::Debug for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageRef")
            .field("kind", &self.kind)
            .field("len", &self.bytes.len())
            .field("origin", &self.origin)
            .finish()
    }
}

impl ImageRef {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Result<Self, ModelError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(ModelError::EmptyImage);
        }
        let kind = MediaKind::sniff(&bytes).ok_or(ModelError::UnknownMediaKind)?;
        Ok(Self {
            bytes: bytes.into(),
            kind,
            origin: None,
        })
    }

    pub fn with_kind(bytes: impl Into<Vec<u8>>, declared: MediaKind) -> Result<Self, ModelError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(ModelError::EmptyImage);
        }
        let actual = MediaKind::sniff(&bytes);
        if actual != Some(declared) {
            return Err(ModelError::MediaKindMismatch { declared, actual });
        }
        Ok(Self {
            bytes: bytes.into(),
            kind: declared,
            origin: None,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut image = Self::from_bytes(bytes)?;
        image.origin = Some(path.to_path_buf());
        Ok(image)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn kind(&self) -> MediaKind {
        self.kind
    }

    pub fn origin(&self) -> Option<&Path> {
        self.origin.as_deref()
    }

    /// Hex SHA-256 of the payload.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.kind.mime(),
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

/// The user's caption request `s` with its image `x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    text: String,
    image: ImageRef,
}

impl Instruction {
    pub fn new(text: impl Into<String>, image: ImageRef) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyInstruction);
        }
        Ok(Self { text, image })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn image(&self) -> &ImageRef {
        &self.image
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Model,
    Fixture,
}

/// The professional instruction `s*` and the constraints parsed from its block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolvedInstruction {
    pub text: String,
    pub spec: ConstraintSpec,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    text: String,
    word_count: usize,
}

impl Caption {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let word_count = word_count(&text);
        Self { text, word_count }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }
}

/// What the planner emitted at one step. `Invalid` keeps the raw text of an
/// action that failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Action(Action),
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub index: usize,
    pub thought: String,
    pub action: StepAction,
    pub observation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    FinalAnswer,
    StepBudget,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub final_caption: Option<Caption>,
    pub terminated_reason: TerminationReason,
    pub error: Option<String>,
}

impl Trace {
    /// Checks the structural invariants: contiguous indices, a final caption
    /// exactly when the run ended on an accepted answer, and that answer on the
    /// last step.
    pub fn is_well_formed(&self) -> bool {
        let contiguous = self.steps.iter().enumerate().all(|(i, s)| s.index == i);
        let finished = self.terminated_reason == TerminationReason::FinalAnswer;
        if finished != self.final_caption.is_some() {
            return false;
        }
        if finished {
            let last_is_finish = matches!(
                self.steps.last().map(|s| &s.action),
                Some(StepAction::Action(Action::Finish(_)))
            );
            if !last_is_finish {
                return false;
            }
        }
        contiguous
    }
}
