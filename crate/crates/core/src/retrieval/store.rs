use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{ChainExample, Vector, VectorError};
use crate::backends::{embed_text, BackendError, EmbedBackend};

const MAGIC: &str = "caption-agent-index v1";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("example database is empty")]
    NoExamples,
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("invalid example id {0:?}: ids must be non-empty and free of tabs and line breaks")]
    InvalidId(String),
    #[error("embedding example `{id}` failed: {source}")]
    Embed {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("vector for `{id}`: {source}")]
    Vector {
        id: String,
        #[source]
        source: VectorError,
    },
    #[error("index file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("index i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Flat, exact vector store. Vectors are kept as embedded (unnormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    embedder_id: String,
    entries: Vec<(String, Vector)>,
}

fn valid_id(id: &str) -> bool {
    !id.trim().is_empty() && !id.contains(['\t', '\n', '\r'])
}

impl VectorStore {
    pub fn new(dim: usize, embedder_id: impl Into<String>) -> Self {
        assert!(dim > 0, "store dimension must be positive");
        Self {
            dim,
            embedder_id: embedder_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn entries(&self) -> &[(String, Vector)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vector) -> Result<(), IndexError> {
        let id = id.into();
        if !valid_id(&id) {
            return Err(IndexError::InvalidId(id));
        }
        if self.entries.iter().any(|(e, _)| *e == id) {
            return Err(IndexError::DuplicateId(id));
        }
        if vector.dim() != self.dim {
            return Err(IndexError::Vector {
                id,
                source: VectorError::DimensionMismatch {
                    left: vector.dim(),
                    right: self.dim,
                },
            });
        }
        if vector.is_zero() {
            return Err(IndexError::Vector {
                id,
                source: VectorError::ZeroVector,
            });
        }
        self.entries.push((id, vector));
        Ok(())
    }

    /// Text form: a header (magic, dim, embedder, count) then one
    /// `id<TAB>components` line per entry. Components use Rust's shortest
    /// round-trip float formatting, so reload is exact.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{MAGIC}\ndim {}\nembedder {}\ncount {}\n",
            self.dim,
            self.embedder_id,
            self.entries.len()
        );
        for (id, v) in &self.entries {
            let _ = writeln!(out, "{id}\t{v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, IndexError> {
        let fmt_err = |line: usize, message: &str| IndexError::Format {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<String, IndexError> {
            let (n, l) = lines.next().ok_or_else(|| fmt_err(0, "truncated header"))?;
            if key.is_empty() {
                return if l == MAGIC {
                    Ok(String::new())
                } else {
                    Err(fmt_err(n, "not a caption-agent index (bad magic line)"))
                };
            }
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| fmt_err(n, &format!("expected `{key} ...`")))
        };
        header("")?;
        let dim: usize = header("dim")?
            .parse()
            .map_err(|_| fmt_err(2, "dim is not an integer"))?;
        if dim == 0 {
            return Err(fmt_err(2, "dim must be positive"));
        }
        let embedder_id = header("embedder")?;
        let count: usize = header("count")?
            .parse()
            .map_err(|_| fmt_err(4, "count is not an integer"))?;
        let mut store = VectorStore::new(dim, embedder_id);
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| fmt_err(n, "expected `id<TAB>components`"))?;
            let comps = rest
                .split(' ')
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| fmt_err(n, "bad float component"))?;
            let vector = Vector::new(comps).map_err(|e| fmt_err(n, &e.to_string()))?;
            store
                .insert(id, vector)
                .map_err(|e| fmt_err(n, &e.to_string()))?;
        }
        if store.len() != count {
            return Err(fmt_err(4, &format!("header count {count} but {} entries", store.len())));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Embeds each example's instruction text. Ids are checked before any
/// embedding call is made.
pub fn build_index(
    examples: &[ChainExample],
    embedder: &dyn EmbedBackend,
) -> Result<VectorStore, IndexError> {
    if examples.is_empty() {
        return Err(IndexError::NoExamples);
    }
    let mut seen = HashSet::new();
    for ex in examples {
        if !valid_id(&ex.id) {
            return Err(IndexError::InvalidId(ex.id.clone()));
        }
        if !seen.insert(ex.id.as_str()) {
            return Err(IndexError::DuplicateId(ex.id.clone()));
        }
    }
    let mut store = VectorStore::new(embedder.dim(), embedder.id().to_string());
    for ex in examples {
        let vector = embed_text(&ex.instruction, embedder).map_err(|source| IndexError::Embed {
            id: ex.id.clone(),
            source,
        })?;
        store.insert(ex.id.clone(), vector)?;
    }
    Ok(store)
}
