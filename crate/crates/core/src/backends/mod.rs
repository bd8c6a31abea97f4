//! Uniform interfaces for the four model roles (chat, embed, detect, depth).
//!
//! Each role has three interchangeable implementations: an HTTP client, a
//! scripted fixture, and a cassette wrapper that records or replays another
//! backend.

mod cassette;
mod fixture;
mod http;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ImageRef;
use crate::retrieval::Vector;
use crate::vision::{BoundingBox, DepthMap};

pub use cassette::{Cassette, CassetteMode, CassetteRecord, Taped};
pub use fixture::{DigestChat, FixtureDepth, FixtureDetector, HashEmbedder, ScriptedChat};
pub use http::{
    CountingTransport, HttpChat, HttpDepth, HttpDetect, HttpEmbed, Transport, UreqTransport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Chat,
    Embed,
    Detect,
    Depth,
    /// Web search traffic. Not a model role, but taped like one.
    Search,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Chat => "chat",
            Role::Embed => "embed",
            Role::Detect => "detect",
            Role::Depth => "depth",
            Role::Search => "search",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendId {
    pub role: Role,
    pub provider: String,
    pub model_name: String,
}

impl BackendId {
    pub fn new(role: Role, provider: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            role,
            provider: provider.into(),
            model_name: model_name.into(),
        }
    }

    pub fn is_fixture(&self) -> bool {
        self.provider == "fixture"
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.role.as_str(), self.provider, self.model_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String, retriable: bool },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("scripted backend `{0}` has no responses left")]
    ScriptExhausted(String),
    #[error("cassette mismatch at record {index}: expected digest {expected}, got {actual}")]
    CassetteMismatch {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("cassette exhausted after {0} records")]
    CassetteExhausted(usize),
    /// Displays exactly as the recorded failure did.
    #[error("{0}")]
    Replayed(String),
    #[error("embedding has {actual} components, backend advertises {expected}")]
    DimensionDrift { expected: usize, actual: usize },
    #[error("depth map is {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
}

impl BackendError {
    pub fn retriable(&self) -> bool {
        match self {
            BackendError::Transport { retriable, .. } => *retriable,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

impl MessageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageRole::System => "system",
            MessageRole::User => "user",
            MessageRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub text: String,
    pub image: Option<ImageRef>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            text: text.into(),
            image: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            text: text.into(),
            image: None,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            text: text.into(),
            image: None,
        }
    }

    pub fn with_image(mut self, image: &ImageRef) -> Self {
        self.image = Some(image.clone());
        self
    }
}

/// Canonical digest input: field order is fixed and images contribute the
/// SHA-256 of their bytes.
#[derive(Serialize)]
struct DigestMessage<'a> {
    role: &'a str,
    text: &'a str,
    image_sha256: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_of(role: Role, payload: &impl Serialize) -> String {
    let body = serde_json::to_string(payload).expect("digest payload serializes");
    sha256_hex(format!("{}\n{body}", role.as_str()).as_bytes())
}

pub fn chat_digest(messages: &[ChatMessage]) -> String {
    let canon: Vec<DigestMessage<'_>> = messages
        .iter()
        .map(|m| DigestMessage {
            role: m.role.as_str(),
            text: &m.text,
            image_sha256: m.image.as_ref().map(ImageRef::digest),
        })
        .collect();
    digest_of(Role::Chat, &canon)
}

pub fn embed_digest(text: &str) -> String {
    digest_of(Role::Embed, &serde_json::json!({ "text": text }))
}

pub fn detect_digest(image: &ImageRef, label: &str) -> String {
    digest_of(
        Role::Detect,
        &serde_json::json!({ "image_sha256": image.digest(), "label": label }),
    )
}

pub fn image_search_digest(image: &ImageRef, k: usize) -> String {
    digest_of(
        Role::Search,
        &serde_json::json!({ "image_sha256": image.digest(), "k": k }),
    )
}

pub fn text_search_digest(query: &str) -> String {
    digest_of(Role::Search, &serde_json::json!({ "query": query }))
}

pub fn depth_digest(image: &ImageRef) -> String {
    digest_of(Role::Depth, &serde_json::json!({ "image_sha256": image.digest() }))
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> BackendId;
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
    fn max_images(&self) -> usize {
        4
    }
}

pub trait EmbedBackend: Send + Sync {
    fn id(&self) -> BackendId;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

pub trait DetectBackend: Send + Sync {
    fn id(&self) -> BackendId;
    fn detect_raw(&self, image: &ImageRef, label: &str) -> Result<Vec<BoundingBox>, BackendError>;
}

pub trait DepthBackend: Send + Sync {
    fn id(&self) -> BackendId;
    fn estimate(&self, image: &ImageRef) -> Result<DepthMap, BackendError>;
    /// Dimensions the backend promises, when known up front.
    fn declared_size(&self) -> Option<(usize, usize)> {
        None
    }
}

pub fn chat(messages: &[ChatMessage], backend: &dyn ChatBackend) -> Result<String, BackendError> {
    if messages.is_empty() {
        return Err(BackendError::Precondition("chat needs at least one message".into()));
    }
    let images = messages.iter().filter(|m| m.image.is_some()).count();
    if images > backend.max_images() {
        return Err(BackendError::Precondition(format!(
            "{images} images exceed the per-call limit of {}",
            backend.max_images()
        )));
    }
    backend.complete(messages)
}

pub fn embed_text(text: &str, backend: &dyn EmbedBackend) -> Result<Vector, BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::Precondition("cannot embed empty text".into()));
    }
    let raw = backend.embed(text)?;
    if raw.len() != backend.dim() {
        return Err(BackendError::DimensionDrift {
            expected: backend.dim(),
            actual: raw.len(),
        });
    }
    Vector::new(raw).map_err(|e| BackendError::Malformed(e.to_string()))
}

pub fn detect(
    image: &ImageRef,
    label: &str,
    backend: &dyn DetectBackend,
) -> Result<Vec<BoundingBox>, BackendError> {
    if label.trim().is_empty() {
        return Err(BackendError::Precondition("detection label is empty".into()));
    }
    let boxes = backend.detect_raw(image, label)?;
    for b in &boxes {
        b.validate().map_err(BackendError::Malformed)?;
    }
    Ok(boxes)
}

pub fn estimate_depth(image: &ImageRef, backend: &dyn DepthBackend) -> Result<DepthMap, BackendError> {
    let map = backend.estimate(image)?;
    if let Some((w, h)) = backend.declared_size() {
        if (w, h) != (map.width, map.height) {
            return Err(BackendError::DimensionMismatch {
                expected_w: w,
                expected_h: h,
                actual_w: map.width,
                actual_h: map.height,
            });
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImageRef;

    pub(crate) fn png(tag: u8) -> ImageRef {
        let mut bytes = b"\x89PNG\r\n\x1a\n".to_vec();
        bytes.push(tag);
        ImageRef::from_bytes(bytes).unwrap()
    }

    #[test]
    fn digest_depends_on_content_only() {
        let a = vec![ChatMessage::user("hi").with_image(&png(1))];
        let b = vec![ChatMessage::user("hi").with_image(&png(1))];
        let c = vec![ChatMessage::user("hi").with_image(&png(2))];
        assert_eq!(chat_digest(&a), chat_digest(&b));
        assert_ne!(chat_digest(&a), chat_digest(&c));
        assert_ne!(
            chat_digest(&[ChatMessage::user("hi")]),
            chat_digest(&[ChatMessage::system("hi")])
        );
        // Pinned so a change in canonical serialization is caught.
        assert_eq!(chat_digest(&[ChatMessage::user("hello")]).len(), 64);
        assert_eq!(embed_digest("abc"), embed_digest("abc"));
    }

    #[test]
    fn chat_preconditions() {
        let backend = ScriptedChat::new(["x"]);
        assert!(matches!(chat(&[], &backend), Err(BackendError::Precondition(_))));
        let many: Vec<ChatMessage> = (0..5).map(|i| ChatMessage::user("q").with_image(&png(i))).collect();
        assert!(matches!(chat(&many, &backend), Err(BackendError::Precondition(_))));
    }

    #[test]
    fn embed_preconditions_and_drift() {
        struct Drifting;
        impl EmbedBackend for Drifting {
            fn id(&self) -> BackendId {
                BackendId::new(Role::Embed, "test", "drift")
            }
            fn dim(&self) -> usize {
                4
            }
            fn embed(&self, _: &str) -> Result<Vec<f64>, BackendError> {
                Ok(vec![1.0; 3])
            }
        }
        assert!(matches!(embed_text("", &Drifting), Err(BackendError::Precondition(_))));
        assert_eq!(
            embed_text("abc", &Drifting),
            Err(BackendError::DimensionDrift { expected: 4, actual: 3 })
        );
    }

    #[test]
    fn retriable_classification() {
        assert!(BackendError::Status { status: 503, body: String::new() }.retriable());
        assert!(BackendError::Status { status: 429, body: String::new() }.retriable());
        assert!(!BackendError::Status { status: 400, body: String::new() }.retriable());
        assert!(!BackendError::Malformed("x".into()).retriable());
    }
}
