use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::{top_n, ChainExample, ScoredId, VectorError, VectorStore};
use crate::backends::{embed_text, BackendError, EmbedBackend};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("index was built with `{index}` but the embedder is `{embedder}`")]
    EmbedderMismatch { index: String, embedder: String },
    #[error("index entry `{0}` has no matching example")]
    MissingExample(String),
    #[error("embedding the query failed: {0}")]
    Embed(#[from] BackendError),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

/// Few-shot example selection: embeds the user request and returns the
/// nearest stored chain examples.
pub struct RetrievalPlanner {
    store: VectorStore,
    examples: HashMap<String, ChainExample>,
    embedder: Arc<dyn EmbedBackend>,
}

impl RetrievalPlanner {
    /// The index must come from the same embedder and cover only known ids.
    pub fn new(
        store: VectorStore,
        examples: Vec<ChainExample>,
        embedder: Arc<dyn EmbedBackend>,
    ) -> Result<Self, PlannerError> {
        let id = embedder.id().to_string();
        if id != store.embedder_id() {
            return Err(PlannerError::EmbedderMismatch {
                index: store.embedder_id().to_string(),
                embedder: id,
            });
        }
        let examples: HashMap<String, ChainExample> =
            examples.into_iter().map(|e| (e.id.clone(), e)).collect();
        if let Some((missing, _)) = store.entries().iter().find(|(id, _)| !examples.contains_key(id)) {
            return Err(PlannerError::MissingExample(missing.clone()));
        }
        Ok(Self {
            store,
            examples,
            embedder,
        })
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }

    pub fn example(&self, id: &str) -> Option<&ChainExample> {
        self.examples.get(id)
    }

    /// Top `n` examples for `query`, most similar first.
    pub fn select(&self, query: &str, n: usize) -> Result<Vec<(ScoredId, &ChainExample)>, PlannerError> {
        let v = embed_text(query, self.embedder.as_ref())?;
        let hits = top_n(&v, &self.store, n)?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let ex = &self.examples[&h.id];
                (h, ex)
            })
            .collect())
    }
}
