//! Offline backends driven by committed fixture files.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    chat_digest, BackendError, BackendId, ChatBackend, ChatMessage, DepthBackend, DetectBackend,
    EmbedBackend, Role,
};
use crate::model::ImageRef;
use crate::vision::{BoundingBox, DepthMap};

fn read(path: &Path) -> Result<String, BackendError> {
    std::fs::read_to_string(path)
        .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptItem {
    Text(String),
    Failure { error: String },
}

/// Replies with a fixed sequence of responses, one per call, and keeps every
/// prompt it was sent.
pub struct ScriptedChat {
    name: String,
    responses: Mutex<VecDeque<Result<String, BackendError>>>,
    prompts: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedChat {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_outcomes(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_outcomes(outcomes: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        Self {
            name: "scripted".into(),
            responses: Mutex::new(outcomes.into_iter().collect()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Loads a JSON array whose items are response strings or `{"error": ".."}`.
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let items: Vec<ScriptItem> = serde_json::from_str(&read(path)?)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scripted".into());
        Ok(Self::with_outcomes(items.into_iter().map(|item| match item {
            ScriptItem::Text(t) => Ok(t),
            ScriptItem::Failure { error } => Err(BackendError::Transport {
                message: error,
                retriable: false,
            }),
        }))
        .named(name))
    }

    pub fn prompts(&self) -> Vec<Vec<ChatMessage>> {
        self.prompts.lock().expect("prompt log").clone()
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().expect("prompt log").len()
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().expect("script").len()
    }
}

impl ChatBackend for ScriptedChat {
    fn id(&self) -> BackendId {
        BackendId::new(Role::Chat, "fixture", &self.name)
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.prompts
            .lock()
            .expect("prompt log")
            .push(messages.to_vec());
        self.responses
            .lock()
            .expect("script")
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::ScriptExhausted(self.name.clone())))
    }
}

/// Answers by looking up the request digest.
pub struct DigestChat {
    table: HashMap<String, String>,
}

impl DigestChat {
    pub fn new(table: HashMap<String, String>) -> Self {
        Self { table }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let table = serde_json::from_str(&read(path)?)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self { table })
    }
}

impl ChatBackend for DigestChat {
    fn id(&self) -> BackendId {
        BackendId::new(Role::Chat, "fixture", "digest-table")
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let digest = chat_digest(messages);
        self.table
            .get(&digest)
            .cloned()
            .ok_or_else(|| BackendError::Fixture(format!("no fixture response for digest {digest}")))
    }
}

/// Deterministic bag-of-tokens embedder: each lowercase token maps to a
/// pseudo-random vector seeded by its SHA-256, and a text embeds to the sum.
/// Texts sharing tokens therefore land close together.
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let mut block = 0u32;
        let mut filled = 0;
        while filled < self.dim {
            let mut h = Sha256::new();
            h.update(b"caption-agent-hash-embed\0");
            h.update(token.as_bytes());
            h.update(block.to_le_bytes());
            let bytes = h.finalize();
            for chunk in bytes.chunks_exact(4) {
                if filled == self.dim {
                    break;
                }
                let raw = u32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                out[filled] += raw as f64 / u32::MAX as f64 * 2.0 - 1.0;
                filled += 1;
            }
            block += 1;
        }
    }
}

impl EmbedBackend for HashEmbedder {
    fn id(&self) -> BackendId {
        BackendId::new(Role::Embed, "fixture", format!("hash-{}", self.dim))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(lower.trim());
        }
        let mut v = vec![0.0; self.dim];
        for t in tokens {
            self.token_vector(t, &mut v);
        }
        Ok(v)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    label: String,
    score: f64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

/// Detections for one image, read from a JSON list of
/// `{"label", "score", "box": [x_min, y_min, x_max, y_max]}` records.
pub struct FixtureDetector {
    boxes: Vec<BoundingBox>,
}

impl FixtureDetector {
    pub fn new(boxes: Vec<BoundingBox>) -> Self {
        Self { boxes }
    }

    pub fn parse(json: &str) -> Result<Self, BackendError> {
        let records: Vec<DetectionRecord> = serde_json::from_str(json)
            .map_err(|e| BackendError::Fixture(format!("detection fixture: {e}")))?;
        let boxes = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let b = BoundingBox {
                    x_min: r.bbox[0],
                    y_min: r.bbox[1],
                    x_max: r.bbox[2],
                    y_max: r.bbox[3],
                    label: r.label,
                    score: r.score,
                };
                b.validate()
                    .map_err(|e| BackendError::Fixture(format!("detection record {i}: {e}")))?;
                Ok(b)
            })
            .collect::<Result<_, BackendError>>()?;
        Ok(Self { boxes })
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        Self::parse(&read(path)?)
    }
}

impl DetectBackend for FixtureDetector {
    fn id(&self) -> BackendId {
        BackendId::new(Role::Detect, "fixture", "boxes")
    }

    fn detect_raw(&self, _image: &ImageRef, label: &str) -> Result<Vec<BoundingBox>, BackendError> {
        let label = label.trim().to_lowercase();
        Ok(self
            .boxes
            .iter()
            .filter(|b| b.label.to_lowercase() == label)
            .cloned()
            .collect())
    }
}

pub struct FixtureDepth {
    map: DepthMap,
}

impl FixtureDepth {
    pub fn new(map: DepthMap) -> Self {
        Self { map }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::new(DepthMap::new(width, height, vec![value; width * height]).expect("valid"))
    }

    /// Near on the left, far on the right.
    pub fn horizontal_gradient(width: usize, height: usize) -> Self {
        let values = (0..height)
            .flat_map(|_| (0..width).map(|x| 1.0 + x as f64))
            .collect();
        Self::new(DepthMap::new(width, height, values).expect("valid"))
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        DepthMap::parse_text(&read(path)?)
            .map(Self::new)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))
    }
}

impl DepthBackend for FixtureDepth {
    fn id(&self) -> BackendId {
        BackendId::new(Role::Depth, "fixture", "matrix")
    }

    fn estimate(&self, _image: &ImageRef) -> Result<DepthMap, BackendError> {
        Ok(self.map.clone())
    }

    fn declared_size(&self) -> Option<(usize, usize)> {
        Some((self.map.width, self.map.height))
    }
}
