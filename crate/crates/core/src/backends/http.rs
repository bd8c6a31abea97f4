//! HTTP clients for remote model endpoints.
//!
//! Chat and embedding requests use the OpenAI-compatible shapes
//! (`/chat/completions`, `/embeddings`). Detection and depth use small JSON
//! endpoints (`/detect`, `/depth`) that take the image as a data URL.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    BackendError, BackendId, ChatBackend, ChatMessage, DepthBackend, DetectBackend, EmbedBackend,
    Role,
};
use crate::model::ImageRef;
use crate::vision::{BoundingBox, DepthMap};

/// Moves one JSON request to an endpoint and returns the JSON reply.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, BackendError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| BackendError::Transport {
            message: e.to_string(),
            retriable: matches!(e, ureq::Error::Timeout(_) | ureq::Error::Io(_)),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport {
                message: e.to_string(),
                retriable: true,
            })?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("response is not JSON: {e}")))
    }
}

/// Counts requests. Without an inner transport every request fails, which is
/// what offline runs want.
#[derive(Default)]
pub struct CountingTransport {
    inner: Option<Arc<dyn Transport>>,
    calls: AtomicUsize,
}

impl CountingTransport {
    pub fn offline() -> Self {
        Self::default()
    }

    pub fn wrapping(inner: Arc<dyn Transport>) -> Self {
        Self {
            inner: Some(inner),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for CountingTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.inner {
            Some(t) => t.post_json(url, bearer, body),
            None => Err(BackendError::Transport {
                message: format!("offline transport refused request to {url}"),
                retriable: false,
            }),
        }
    }
}

/// Settings shared by every HTTP backend.
#[derive(Clone)]
struct Endpoint {
    transport: Arc<dyn Transport>,
    base: String,
    model: String,
    api_key_env: Option<String>,
}

impl Endpoint {
    fn new(transport: Arc<dyn Transport>, base: &str, model: &str, api_key_env: Option<&str>) -> Self {
        Self {
            transport,
            base: base.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.map(str::to_string),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let key = self
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        self.transport
            .post_json(&format!("{}/{path}", self.base), key.as_deref(), body)
    }

    fn id(&self, role: Role) -> BackendId {
        BackendId::new(role, "http", &self.model)
    }
}

fn parse<T: for<'de> Deserialize<'de>>(value: Value, what: &str) -> Result<T, BackendError> {
    serde_json::from_value(value).map_err(|e| BackendError::Malformed(format!("{what}: {e}")))
}

pub struct HttpChat {
    endpoint: Endpoint,
    max_images: usize,
}

impl HttpChat {
    pub fn new(transport: Arc<dyn Transport>, base: &str, model: &str, api_key_env: Option<&str>) -> Self {
        Self {
            endpoint: Endpoint::new(transport, base, model, api_key_env),
            max_images: 4,
        }
    }

    pub fn with_max_images(mut self, n: usize) -> Self {
        self.max_images = n;
        self
    }

    fn request_body(&self, messages: &[ChatMessage]) -> Value {
        let messages: Vec<Value> = messages
            .iter()
            .map(|m| {
                let content = match &m.image {
                    None => json!(m.text),
                    Some(img) => json!([
                        { "type": "text", "text": m.text },
                        { "type": "image_url", "image_url": { "url": img.data_url() } },
                    ]),
                };
                json!({ "role": m.role.as_str(), "content": content })
            })
            .collect();
        json!({ "model": self.endpoint.model, "messages": messages, "temperature": 0 })
    }
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: Option<String>,
}

impl ChatBackend for HttpChat {
    fn id(&self) -> BackendId {
        self.endpoint.id(Role::Chat)
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let reply: ChatReply = parse(
            self.endpoint.post("chat/completions", &self.request_body(messages))?,
            "chat completion",
        )?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("chat completion has no content".into()))
    }

    fn max_images(&self) -> usize {
        self.max_images
    }
}

pub struct HttpEmbed {
    endpoint: Endpoint,
    dim: usize,
}

impl HttpEmbed {
    pub fn new(
        transport: Arc<dyn Transport>,
        base: &str,
        model: &str,
        api_key_env: Option<&str>,
        dim: usize,
    ) -> Self {
        Self {
            endpoint: Endpoint::new(transport, base, model, api_key_env),
            dim,
        }
    }
}

#[derive(Deserialize)]
struct EmbedReply {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

impl EmbedBackend for HttpEmbed {
    fn id(&self) -> BackendId {
        self.endpoint.id(Role::Embed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let body = json!({ "model": self.endpoint.model, "input": text });
        let reply: EmbedReply = parse(self.endpoint.post("embeddings", &body)?, "embedding")?;
        reply
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| BackendError::Malformed("embedding reply has no data".into()))
    }
}

pub struct HttpDetect {
    endpoint: Endpoint,
}

impl HttpDetect {
    pub fn new(transport: Arc<dyn Transport>, base: &str, model: &str, api_key_env: Option<&str>) -> Self {
        Self {
            endpoint: Endpoint::new(transport, base, model, api_key_env),
        }
    }
}

#[derive(Deserialize)]
struct DetectReply {
    detections: Vec<DetectDatum>,
}

#[derive(Deserialize)]
struct DetectDatum {
    label: String,
    score: f64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

impl DetectBackend for HttpDetect {
    fn id(&self) -> BackendId {
        self.endpoint.id(Role::Detect)
    }

    fn detect_raw(&self, image: &ImageRef, label: &str) -> Result<Vec<BoundingBox>, BackendError> {
        let body = json!({ "model": self.endpoint.model, "image": image.data_url(), "label": label });
        let reply: DetectReply = parse(self.endpoint.post("detect", &body)?, "detection")?;
        Ok(reply
            .detections
            .into_iter()
            .map(|d| BoundingBox {
                x_min: d.bbox[0],
                y_min: d.bbox[1],
                x_max: d.bbox[2],
                y_max: d.bbox[3],
                label: d.label,
                score: d.score,
            })
            .collect())
    }
}

pub struct HttpDepth {
    endpoint: Endpoint,
}

impl HttpDepth {
    pub fn new(transport: Arc<dyn Transport>, base: &str, model: &str, api_key_env: Option<&str>) -> Self {
        Self {
            endpoint: Endpoint::new(transport, base, model, api_key_env),
        }
    }
}

#[derive(Deserialize)]
struct DepthReply {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthBackend for HttpDepth {
    fn id(&self) -> BackendId {
        self.endpoint.id(Role::Depth)
    }

    fn estimate(&self, image: &ImageRef) -> Result<DepthMap, BackendError> {
        let body = json!({ "model": self.endpoint.model, "image": image.data_url() });
        let reply: DepthReply = parse(self.endpoint.post("depth", &body)?, "depth")?;
        DepthMap::new(reply.width, reply.height, reply.values).map_err(BackendError::Malformed)
    }
}
