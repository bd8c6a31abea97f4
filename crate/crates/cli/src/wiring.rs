//! Scenario directories and backend assembly for the three run modes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use caption_agent::backends::{
    BackendError, BackendId, Cassette, ChatBackend, DepthBackend, DetectBackend, EmbedBackend,
    FixtureDepth, FixtureDetector, HashEmbedder, HttpChat, HttpDepth, HttpDetect, HttpEmbed,
    ScriptedChat, Taped, Transport,
};
use caption_agent::config::{BackendSettings, Mode, Provider, RunConfig, FIXTURE_EMBED_DIM};
use caption_agent::context::{
    FixtureImageSearch, FixtureTextSearch, HttpImageSearch, HttpTextSearch, ImageSearchClient,
    TapedImageSearch, TapedTextSearch, TextSearchClient,
};
use serde::Deserialize;

use crate::CliError;

/// Chat slots, one scripted file each under `chat/` in a scenario.
pub const CHAT_SLOTS: [&str; 5] = ["context", "evolver", "planner", "tools", "judge"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    instruction: String,
    #[serde(default = "default_image")]
    image: PathBuf,
    #[serde(default)]
    max_steps: Option<usize>,
    #[serde(default)]
    description: Option<String>,
}

fn default_image() -> PathBuf {
    "image.png".into()
}

/// A directory holding an image, a request and the fixture files that stand
/// in for every backend.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dir: PathBuf,
    pub name: String,
    pub instruction: String,
    pub image: PathBuf,
    pub max_steps: Option<usize>,
    pub description: Option<String>,
}

impl Scenario {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let file = dir.join("scenario.toml");
        let text = std::fs::read_to_string(&file)
            .map_err(|e| CliError::Input(format!("{}: {e}", file.display())))?;
        let s: ScenarioFile =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", file.display())))?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Input(format!("{} has no name", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            name,
            instruction: s.instruction,
            image: dir.join(s.image),
            max_steps: s.max_steps,
            description: s.description,
        })
    }
}

pub struct Wiring {
    pub chat: BTreeMap<&'static str, Arc<dyn ChatBackend>>,
    pub embed: Arc<dyn EmbedBackend>,
    pub detect: Arc<dyn DetectBackend>,
    pub depth: Arc<dyn DepthBackend>,
    pub image_search: Arc<dyn ImageSearchClient>,
    pub text_search: Arc<dyn TextSearchClient>,
    /// Present in record and replay modes.
    pub tape: Option<Arc<Cassette>>,
}

fn fixture_chat(dir: Option<&Path>, slot: &str) -> Result<Arc<dyn ChatBackend>, BackendError> {
    match dir.map(|d| d.join("chat").join(format!("{slot}.json"))) {
        Some(p) if p.exists() => Ok(Arc::new(ScriptedChat::from_file(&p)?)),
        _ => Ok(Arc::new(ScriptedChat::new(Vec::<String>::new()).named(slot))),
    }
}

fn http_settings<'a>(role: &str, b: &'a BackendSettings) -> Result<(&'a str, &'a str), CliError> {
    match (&b.endpoint, &b.model) {
        (Some(e), Some(m)) => Ok((e, m)),
        _ => Err(CliError::Input(format!(
            "backends.{role} needs endpoint and model for http"
        ))),
    }
}

/// Backends as configured, before any cassette.
struct Live {
    chat: BTreeMap<&'static str, Arc<dyn ChatBackend>>,
    embed: Arc<dyn EmbedBackend>,
    detect: Arc<dyn DetectBackend>,
    depth: Arc<dyn DepthBackend>,
    image_search: Arc<dyn ImageSearchClient>,
    text_search: Arc<dyn TextSearchClient>,
}

fn live(cfg: &RunConfig, dir: Option<&Path>, transport: &Arc<dyn Transport>) -> Result<Live, CliError> {
    let b = &cfg.backends;
    let mut chat = BTreeMap::new();
    for slot in CHAT_SLOTS {
        let backend: Arc<dyn ChatBackend> = match b.chat.provider {
            Provider::Fixture => fixture_chat(dir, slot)?,
            Provider::Http => {
                let (e, m) = http_settings("chat", &b.chat)?;
                Arc::new(HttpChat::new(transport.clone(), e, m, b.chat.api_key_env.as_deref()))
            }
        };
        chat.insert(slot, backend);
    }
    let embed: Arc<dyn EmbedBackend> = match b.embed.provider {
        Provider::Fixture => Arc::new(HashEmbedder::new(b.embed.dim.unwrap_or(FIXTURE_EMBED_DIM))),
        Provider::Http => {
            let (e, m) = http_settings("embed", &b.embed)?;
            let dim = b
                .embed
                .dim
                .ok_or_else(|| CliError::Input("backends.embed.dim is required for http".into()))?;
            Arc::new(HttpEmbed::new(transport.clone(), e, m, b.embed.api_key_env.as_deref(), dim))
        }
    };
    let detect: Arc<dyn DetectBackend> = match b.detect.provider {
        Provider::Fixture => match dir.map(|d| d.join("detections.json")) {
            Some(p) if p.exists() => Arc::new(FixtureDetector::from_file(&p)?),
            _ => Arc::new(FixtureDetector::new(Vec::new())),
        },
        Provider::Http => {
            let (e, m) = http_settings("detect", &b.detect)?;
            Arc::new(HttpDetect::new(transport.clone(), e, m, b.detect.api_key_env.as_deref()))
        }
    };
    let depth: Arc<dyn DepthBackend> = match b.depth.provider {
        Provider::Fixture => match dir.map(|d| d.join("depth.txt")) {
            Some(p) if p.exists() => Arc::new(FixtureDepth::from_file(&p)?),
            _ => Arc::new(FixtureDepth::constant(1, 1, 1.0)),
        },
        Provider::Http => {
            let (e, m) = http_settings("depth", &b.depth)?;
            Arc::new(HttpDepth::new(transport.clone(), e, m, b.depth.api_key_env.as_deref()))
        }
    };
    let s = &cfg.search;
    let (image_search, text_search): (Arc<dyn ImageSearchClient>, Arc<dyn TextSearchClient>) =
        match s.provider {
            Provider::Fixture => match dir {
                Some(d) => (
                    Arc::new(FixtureImageSearch::from_dir(d)?),
                    Arc::new(FixtureTextSearch::new(d)),
                ),
                None => (
                    Arc::new(FixtureImageSearch::new(Vec::new())),
                    Arc::new(FixtureTextSearch::new(Path::new(""))),
                ),
            },
            Provider::Http => {
                let e = s
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| CliError::Input("search.endpoint is required for http".into()))?;
                (
                    Arc::new(HttpImageSearch::new(transport.clone(), e, s.api_key_env.as_deref())),
                    Arc::new(HttpTextSearch::new(transport.clone(), e, s.api_key_env.as_deref())),
                )
            }
        };
    Ok(Live {
        chat,
        embed,
        detect,
        depth,
        image_search,
        text_search,
    })
}

impl Wiring {
    /// Fixture mode reads `scenario`'s files. Record mode wraps the configured
    /// backends in a fresh cassette; replay mode reads `cassette` and builds
    /// nothing live, so no request can leave the process.
    pub fn build(
        mode: Mode,
        cfg: &RunConfig,
        scenario: Option<&Path>,
        cassette: &Path,
        transport: &Arc<dyn Transport>,
    ) -> Result<Self, CliError> {
        match mode {
            Mode::Fixture => {
                let l = live(cfg, scenario, transport)?;
                Ok(Self {
                    chat: l.chat,
                    embed: l.embed,
                    detect: l.detect,
                    depth: l.depth,
                    image_search: l.image_search,
                    text_search: l.text_search,
                    tape: None,
                })
            }
            Mode::Record => Self::taped(Cassette::recording(), Some(live(cfg, scenario, transport)?)),
            Mode::Replay => {
                if !cassette.exists() {
                    return Err(CliError::Input(format!(
                        "no cassette at {}",
                        cassette.display()
                    )));
                }
                Self::taped(Cassette::load(cassette)?, None)
            }
        }
    }

    fn taped(tape: Arc<Cassette>, live: Option<Live>) -> Result<Self, CliError> {
        let mut chat = BTreeMap::new();
        for slot in CHAT_SLOTS {
            let inner = live.as_ref().map(|l| l.chat[slot].clone());
            let b: Arc<dyn ChatBackend> = Arc::new(Taped::<dyn ChatBackend>::new(tape.clone(), slot, inner)?);
            chat.insert(slot, b);
        }
        let l = live.as_ref();
        Ok(Self {
            chat,
            embed: Arc::new(Taped::<dyn EmbedBackend>::new(
                tape.clone(),
                "embed",
                l.map(|l| l.embed.clone()),
            )?),
            detect: Arc::new(Taped::<dyn DetectBackend>::new(
                tape.clone(),
                "detect",
                l.map(|l| l.detect.clone()),
            )?),
            depth: Arc::new(Taped::<dyn DepthBackend>::new(
                tape.clone(),
                "depth",
                l.map(|l| l.depth.clone()),
            )?),
            image_search: Arc::new(TapedImageSearch::new(
                tape.clone(),
                l.map(|l| l.image_search.clone()),
            )?),
            text_search: Arc::new(TapedTextSearch::new(
                tape.clone(),
                l.map(|l| l.text_search.clone()),
            )?),
            tape: Some(tape),
        })
    }

    pub fn chat(&self, slot: &str) -> &Arc<dyn ChatBackend> {
        &self.chat[slot]
    }

    pub fn backend_ids(&self) -> BTreeMap<String, BackendId> {
        let mut ids: BTreeMap<String, BackendId> = self
            .chat
            .iter()
            .map(|(k, b)| (k.to_string(), b.id()))
            .collect();
        ids.insert("embed".into(), self.embed.id());
        ids.insert("detect".into(), self.detect.id());
        ids.insert("depth".into(), self.depth.id());
        ids
    }

    /// Writes the cassette when recording.
    pub fn finish(&self, cassette: &Path) -> Result<(), CliError> {
        if let Some(t) = &self.tape {
            if t.mode() == caption_agent::backends::CassetteMode::Record {
                if let Some(dir) = cassette.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(e.to_string()))?;
                }
                t.save(cassette).map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
        Ok(())
    }
}
