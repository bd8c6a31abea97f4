//! Record/replay of backend traffic.
//!
//! A cassette is a JSON-lines file: a header record, then one record per
//! backend call in call order. Replay is strict: the n-th call must carry the
//! digest of the n-th record.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    chat_digest, depth_digest, detect_digest, embed_digest, BackendError, BackendId, ChatBackend,
    ChatMessage, DepthBackend, DetectBackend, EmbedBackend, Role,
};
use crate::model::ImageRef;
use crate::vision::{BoundingBox, DepthMap};

const FORMAT: &str = "caption-agent-cassette";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    Record,
    Replay,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub role: Role,
    pub digest: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    backends: BTreeMap<String, BackendId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    dims: BTreeMap<String, usize>,
}

#[derive(Debug)]
struct State {
    backends: BTreeMap<String, BackendId>,
    dims: BTreeMap<String, usize>,
    records: Vec<CassetteRecord>,
    cursor: usize,
}

#[derive(Debug)]
pub struct Cassette {
    mode: CassetteMode,
    state: Mutex<State>,
}

impl Cassette {
    fn with_mode(mode: CassetteMode) -> Arc<Self> {
        Arc::new(Self {
            mode,
            state: Mutex::new(State {
                backends: BTreeMap::new(),
                dims: BTreeMap::new(),
                records: Vec::new(),
                cursor: 0,
            }),
        })
    }

    pub fn recording() -> Arc<Self> {
        Self::with_mode(CassetteMode::Record)
    }

    pub fn passthrough() -> Arc<Self> {
        Self::with_mode(CassetteMode::Passthrough)
    }

    pub fn parse(text: &str) -> Result<Arc<Self>, BackendError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = lines
            .next()
            .ok_or_else(|| BackendError::Fixture("empty cassette".into()))
            .and_then(|l| {
                serde_json::from_str(l)
                    .map_err(|e| BackendError::Fixture(format!("cassette header: {e}")))
            })?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(BackendError::Fixture(format!(
                "unsupported cassette {} v{}",
                header.format, header.version
            )));
        }
        let records = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| BackendError::Fixture(format!("cassette record {i}: {e}")))
            })
            .collect::<Result<Vec<CassetteRecord>, _>>()?;
        Ok(Arc::new(Self {
            mode: CassetteMode::Replay,
            state: Mutex::new(State {
                backends: header.backends,
                dims: header.dims,
                records,
                cursor: 0,
            }),
        }))
    }

    pub fn load(path: &Path) -> Result<Arc<Self>, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn records(&self) -> Vec<CassetteRecord> {
        self.state.lock().expect("cassette").records.clone()
    }

    /// Number of records consumed so far in replay mode.
    pub fn position(&self) -> usize {
        self.state.lock().expect("cassette").cursor
    }

    pub fn render(&self) -> String {
        let state = self.state.lock().expect("cassette");
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            backends: state.backends.clone(),
            dims: state.dims.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &state.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.render())
    }

    /// Backend identity recorded under `slot`, if any.
    pub fn backend(&self, slot: &str) -> Option<BackendId> {
        self.state.lock().expect("cassette").backends.get(slot).cloned()
    }

    pub fn dim(&self, slot: &str) -> Option<usize> {
        self.state.lock().expect("cassette").dims.get(slot).copied()
    }

    fn register_dim(&self, slot: &str, dim: usize) {
        if self.mode == CassetteMode::Record {
            self.state
                .lock()
                .expect("cassette")
                .dims
                .insert(slot.to_string(), dim);
        }
    }

    fn register(&self, slot: &str, id: &BackendId) {
        if self.mode == CassetteMode::Record {
            self.state
                .lock()
                .expect("cassette")
                .backends
                .insert(slot.to_string(), id.clone());
        }
    }

    pub(crate) fn exchange(
        &self,
        role: Role,
        digest: String,
        live: Option<&dyn Fn() -> Result<String, BackendError>>,
    ) -> Result<String, BackendError> {
        match self.mode {
            CassetteMode::Replay => {
                let mut state = self.state.lock().expect("cassette");
                let index = state.cursor;
                let record = state
                    .records
                    .get(index)
                    .cloned()
                    .ok_or(BackendError::CassetteExhausted(index))?;
                if record.digest != digest || record.role != role {
                    return Err(BackendError::CassetteMismatch {
                        index,
                        expected: record.digest,
                        actual: digest,
                    });
                }
                state.cursor += 1;
                match (record.response, record.error) {
                    (Some(r), _) => Ok(r),
                    (None, Some(e)) => Err(BackendError::Replayed(e)),
                    (None, None) => Err(BackendError::Fixture(format!(
                        "cassette record {index} has neither response nor error"
                    ))),
                }
            }
            CassetteMode::Record | CassetteMode::Passthrough => {
                let live = live.ok_or_else(|| {
                    BackendError::Precondition("cassette has no live backend to record".into())
                })?;
                // Hold the lock across the call so records keep call order.
                let mut state = self.state.lock().expect("cassette");
                let outcome = live();
                if self.mode == CassetteMode::Record {
                    state.records.push(CassetteRecord {
                        role,
                        digest,
                        response: outcome.as_ref().ok().cloned(),
                        error: outcome.as_ref().err().map(|e| e.to_string()),
                    });
                }
                outcome
            }
        }
    }
}

/// A backend routed through a cassette. In replay mode there is no inner
/// backend and the identity comes from the cassette header.
pub struct Taped<B: ?Sized> {
    tape: Arc<Cassette>,
    slot: String,
    inner: Option<Arc<B>>,
    id: BackendId,
}

impl<B: ?Sized> Taped<B> {
    fn build(
        tape: Arc<Cassette>,
        slot: &str,
        inner: Option<Arc<B>>,
        live_id: Option<BackendId>,
        role: Role,
    ) -> Result<Self, BackendError> {
        let id = match live_id {
            Some(id) => {
                tape.register(slot, &id);
                id
            }
            None => tape.backend(slot).ok_or_else(|| {
                BackendError::Fixture(format!("cassette header has no backend for slot `{slot}`"))
            })?,
        };
        if id.role != role {
            return Err(BackendError::Fixture(format!(
                "slot `{slot}` holds a {} backend, expected {}",
                id.role.as_str(),
                role.as_str()
            )));
        }
        Ok(Self {
            tape,
            slot: slot.to_string(),
            inner,
            id,
        })
    }
}

macro_rules! taped_ctor {
    ($tr:ident, $role:expr) => {
        impl Taped<dyn $tr> {
            /// `inner` is required unless the cassette is replaying.
            pub fn new(
                tape: Arc<Cassette>,
                slot: &str,
                inner: Option<Arc<dyn $tr>>,
            ) -> Result<Self, BackendError> {
                let live_id = match (tape.mode(), &inner) {
                    (CassetteMode::Replay, _) => None,
                    (_, Some(b)) => Some(b.id()),
                    (_, None) => {
                        return Err(BackendError::Precondition(format!(
                            "slot `{slot}` needs a live backend outside replay mode"
                        )))
                    }
                };
                Self::build(tape, slot, inner, live_id, $role)
            }
        }
    };
}

taped_ctor!(ChatBackend, Role::Chat);
taped_ctor!(EmbedBackend, Role::Embed);
taped_ctor!(DetectBackend, Role::Detect);
taped_ctor!(DepthBackend, Role::Depth);

fn decode<T: for<'de> Deserialize<'de>>(blob: &str) -> Result<T, BackendError> {
    serde_json::from_str(blob).map_err(|e| BackendError::Malformed(format!("cassette blob: {e}")))
}

fn encode<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("response serializes")
}

impl ChatBackend for Taped<dyn ChatBackend> {
    fn id(&self) -> BackendId {
        self.id.clone()
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let live = self.inner.as_deref().map(|b| move || b.complete(messages));
        self.tape.exchange(
            Role::Chat,
            chat_digest(messages),
            live.as_ref().map(|f| f as &dyn Fn() -> Result<String, BackendError>),
        )
    }

    fn max_images(&self) -> usize {
        self.inner.as_ref().map_or(4, |b| b.max_images())
    }
}

impl EmbedBackend for Taped<dyn EmbedBackend> {
    fn id(&self) -> BackendId {
        self.id.clone()
    }

    fn dim(&self) -> usize {
        match &self.inner {
            Some(b) => {
                self.tape.register_dim(&self.slot, b.dim());
                b.dim()
            }
            None => self.tape.dim(&self.slot).unwrap_or(0),
        }
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let live = self.inner.as_deref().map(|b| move || b.embed(text).map(|v| encode(&v)));
        let blob = self.tape.exchange(
            Role::Embed,
            embed_digest(text),
            live.as_ref().map(|f| f as &dyn Fn() -> Result<String, BackendError>),
        )?;
        decode(&blob)
    }
}

impl DetectBackend for Taped<dyn DetectBackend> {
    fn id(&self) -> BackendId {
        self.id.clone()
    }

    fn detect_raw(&self, image: &ImageRef, label: &str) -> Result<Vec<BoundingBox>, BackendError> {
        let live = self
            .inner
            .as_deref()
            .map(|b| move || b.detect_raw(image, label).map(|v| encode(&v)));
        let blob = self.tape.exchange(
            Role::Detect,
            detect_digest(image, label),
            live.as_ref().map(|f| f as &dyn Fn() -> Result<String, BackendError>),
        )?;
        decode(&blob)
    }
}

impl DepthBackend for Taped<dyn DepthBackend> {
    fn id(&self) -> BackendId {
        self.id.clone()
    }

    fn estimate(&self, image: &ImageRef) -> Result<DepthMap, BackendError> {
        let live = self.inner.as_deref().map(|b| move || b.estimate(image).map(|m| encode(&m)));
        let blob = self.tape.exchange(
            Role::Depth,
            depth_digest(image),
            live.as_ref().map(|f| f as &dyn Fn() -> Result<String, BackendError>),
        )?;
        decode(&blob)
    }

    fn declared_size(&self) -> Option<(usize, usize)> {
        self.inner.as_ref().and_then(|b| b.declared_size())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{chat, embed_text, FixtureDepth, FixtureDetector, HashEmbedder, ScriptedChat};

    fn png() -> ImageRef {
        ImageRef::from_bytes(b"\x89PNG\r\n\x1a\n\x01".to_vec()).unwrap()
    }

    #[test]
    fn record_then_replay() {
        let tape = Cassette::recording();
        let inner: Arc<dyn ChatBackend> = Arc::new(ScriptedChat::new(["one", "two"]));
        let rec = Taped::<dyn ChatBackend>::new(tape.clone(), "planner", Some(inner)).unwrap();
        let m1 = [ChatMessage::user("first")];
        let m2 = [ChatMessage::user("second").with_image(&png())];
        assert_eq!(chat(&m1, &rec).unwrap(), "one");
        assert_eq!(chat(&m2, &rec).unwrap(), "two");
        let text = tape.render();

        for _ in 0..2 {
            let replay = Cassette::parse(&text).unwrap();
            let backend = Taped::<dyn ChatBackend>::new(replay.clone(), "planner", None).unwrap();
            assert_eq!(backend.id(), BackendId::new(Role::Chat, "fixture", "scripted"));
            assert_eq!(chat(&m1, &backend).unwrap(), "one");
            assert_eq!(chat(&m2, &backend).unwrap(), "two");
            assert_eq!(replay.position(), 2);
            assert_eq!(Cassette::parse(&text).unwrap().render(), text);
        }
    }

    #[test]
    fn replay_mismatch_names_both_digests() {
        let tape = Cassette::recording();
        let inner: Arc<dyn ChatBackend> = Arc::new(ScriptedChat::new(["one"]));
        let rec = Taped::<dyn ChatBackend>::new(tape.clone(), "chat", Some(inner)).unwrap();
        chat(&[ChatMessage::user("recorded")], &rec).unwrap();

        let replay = Cassette::parse(&tape.render()).unwrap();
        let backend = Taped::<dyn ChatBackend>::new(replay, "chat", None).unwrap();
        let other = [ChatMessage::user("different")];
        match chat(&other, &backend) {
            Err(BackendError::CassetteMismatch { expected, actual, index }) => {
                assert_eq!(index, 0);
                assert_eq!(expected, chat_digest(&[ChatMessage::user("recorded")]));
                assert_eq!(actual, chat_digest(&other));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors_are_recorded_and_replayed() {
        let tape = Cassette::recording();
        let inner: Arc<dyn ChatBackend> = Arc::new(ScriptedChat::new(Vec::<String>::new()));
        let rec = Taped::<dyn ChatBackend>::new(tape.clone(), "chat", Some(inner)).unwrap();
        let m = [ChatMessage::user("x")];
        assert!(chat(&m, &rec).is_err());
        let replay = Cassette::parse(&tape.render()).unwrap();
        let backend = Taped::<dyn ChatBackend>::new(replay, "chat", None).unwrap();
        assert!(matches!(chat(&m, &backend), Err(BackendError::Replayed(_))));
        assert!(matches!(chat(&m, &backend), Err(BackendError::CassetteExhausted(1))));
    }

    #[test]
    fn vision_and_embed_round_trip() {
        let tape = Cassette::recording();
        let emb = Taped::<dyn EmbedBackend>::new(tape.clone(), "embed", Some(Arc::new(HashEmbedder::new(16)))).unwrap();
        let det = Taped::<dyn DetectBackend>::new(
            tape.clone(),
            "detect",
            Some(Arc::new(
                FixtureDetector::parse(r#"[{"label":"car","score":0.7,"box":[0.1,0.2,0.3,0.4]}]"#).unwrap(),
            )),
        )
        .unwrap();
        let dep = Taped::<dyn DepthBackend>::new(tape.clone(), "depth", Some(Arc::new(FixtureDepth::horizontal_gradient(3, 2)))).unwrap();
        let v = embed_text("a caption request", &emb).unwrap();
        let boxes = det.detect_raw(&png(), "car").unwrap();
        let map = dep.estimate(&png()).unwrap();

        let replay = Cassette::parse(&tape.render()).unwrap();
        let emb2 = Taped::<dyn EmbedBackend>::new(replay.clone(), "embed", None).unwrap();
        let det2 = Taped::<dyn DetectBackend>::new(replay.clone(), "detect", None).unwrap();
        let dep2 = Taped::<dyn DepthBackend>::new(replay, "depth", None).unwrap();
        assert_eq!(emb2.dim(), 16);
        assert_eq!(embed_text("a caption request", &emb2).unwrap(), v);
        assert_eq!(det2.detect_raw(&png(), "car").unwrap(), boxes);
        assert_eq!(dep2.estimate(&png()).unwrap(), map);
    }

    #[test]
    fn passthrough_records_nothing() {
        let tape = Cassette::passthrough();
        let inner: Arc<dyn ChatBackend> = Arc::new(ScriptedChat::new(["ok"]));
        let b = Taped::<dyn ChatBackend>::new(tape.clone(), "chat", Some(inner)).unwrap();
        assert_eq!(chat(&[ChatMessage::user("x")], &b).unwrap(), "ok");
        assert!(tape.records().is_empty());
    }
}
