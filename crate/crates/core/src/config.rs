//! The single run configuration file (TOML). Every key is optional; missing
//! keys take the documented defaults. Relative paths resolve against the
//! directory holding the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::context::ContextConfig;
use crate::tools::ToolConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Scripted fixture backends, no cassette.
    #[default]
    Fixture,
    /// Configured backends, every exchange written to a cassette.
    Record,
    /// Answers come from a cassette only.
    Replay,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fixture => "fixture",
            Mode::Record => "record",
            Mode::Replay => "replay",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixture" => Ok(Mode::Fixture),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("mode must be fixture, record or replay, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub examples: PathBuf,
    pub index: PathBuf,
    pub cassette_dir: PathBuf,
    pub trace_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            examples: "fixtures/examples.jsonl".into(),
            index: "fixtures/index.txt".into(),
            cassette_dir: "fixtures/cassettes".into(),
            trace_dir: "traces".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub n: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self { n: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSettings {
    pub enabled: bool,
    pub k: usize,
    pub q: usize,
}

impl Default for ContextSettings {
    fn default() -> Self {
        let c = ContextConfig::default();
        Self {
            enabled: true,
            k: c.k,
            q: c.q,
        }
    }
}

impl ContextSettings {
    pub fn config(&self) -> ContextConfig {
        ContextConfig { k: self.k, q: self.q }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub max_steps: usize,
    pub verify_before_finish: bool,
}

impl Default for AgentSettings {
    fn default() -> Self {
        let a = AgentConfig::default();
        Self {
            max_steps: a.max_steps,
            verify_before_finish: a.verify_before_finish,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolverSettings {
    /// Extra attempts after a reply without a valid constraint block.
    pub retries: usize,
}

impl Default for EvolverSettings {
    fn default() -> Self {
        Self { retries: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// Files from the scenario directory.
    #[default]
    Fixture,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub provider: Provider,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key. Keys themselves
    /// never go in the file.
    pub api_key_env: Option<String>,
    /// Embedding dimension; embed role only.
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub chat: BackendSettings,
    pub embed: BackendSettings,
    pub detect: BackendSettings,
    pub depth: BackendSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub provider: Provider,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub paths: Paths,
    pub retrieval: RetrievalSettings,
    pub context: ContextSettings,
    pub agent: AgentSettings,
    pub evolver: EvolverSettings,
    pub tools: ToolConfig,
    pub backends: Backends,
    pub search: SearchSettings,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

/// Default embedding dimension of the fixture embedder.
pub const FIXTURE_EMBED_DIM: usize = 16;

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and anchors its relative paths at the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.anchor(dir);
        }
        Ok(cfg)
    }

    pub fn anchor(&mut self, dir: &Path) {
        for p in [
            &mut self.paths.examples,
            &mut self.paths.index,
            &mut self.paths.cassette_dir,
            &mut self.paths.trace_dir,
        ] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.context.k == 0 {
            return Err(ConfigError::Invalid("context.k must be at least 1".into()));
        }
        let t = &self.tools;
        if !(0.0..=1.0).contains(&t.detection_threshold) {
            return Err(ConfigError::Invalid(
                "tools.detection_threshold must lie in [0, 1]".into(),
            ));
        }
        if t.vertical_separation < 0.0 || t.depth_separation < 0.0 {
            return Err(ConfigError::Invalid("tool separations must be non-negative".into()));
        }
        if t.condense_attempts == 0 {
            return Err(ConfigError::Invalid("tools.condense_attempts must be at least 1".into()));
        }
        for (role, b) in [
            ("chat", &self.backends.chat),
            ("embed", &self.backends.embed),
            ("detect", &self.backends.detect),
            ("depth", &self.backends.depth),
        ] {
            if b.provider == Provider::Http && (b.endpoint.is_none() || b.model.is_none()) {
                return Err(ConfigError::Invalid(format!(
                    "backends.{role} uses http but lacks endpoint or model"
                )));
            }
        }
        if self.backends.embed.provider == Provider::Http && self.backends.embed.dim.is_none() {
            return Err(ConfigError::Invalid("backends.embed.dim is required for http".into()));
        }
        if self.search.provider == Provider::Http && self.search.endpoint.is_none() {
            return Err(ConfigError::Invalid("search uses http but lacks endpoint".into()));
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            max_steps: self.agent.max_steps,
            n_examples: self.retrieval.n,
            verify_before_finish: self.agent.verify_before_finish,
        }
    }
}
