//! Web context for instruction evolution: find similar images, turn their
//! titles into search queries, search, and summarize what was found.
//!
//! Context is optional. Every stage degrades to the partial bundle built so
//! far and notes why in [`ContextBundle::log`].

mod clients;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{chat, BackendError, ChatBackend, ChatMessage};
use crate::model::ImageRef;
use crate::prompts;

pub use clients::{
    query_slug, FixtureImageSearch, FixtureTextSearch, HttpImageSearch, HttpTextSearch,
    ImageSearchClient, TapedImageSearch, TapedTextSearch, TextSearchClient,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebImageHit {
    pub title: String,
    pub source_url: String,
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub query: String,
    pub snippets: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub image_hits: Vec<WebImageHit>,
    pub queries: Vec<String>,
    pub results: Vec<SearchResult>,
    pub summary: String,
    /// Why stages were skipped or degraded.
    pub log: Vec<String>,
}

impl ContextBundle {
    /// The explicit "no context" value.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.image_hits.is_empty() && self.results.is_empty() && self.summary.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    /// Similar images to fetch.
    pub k: usize,
    /// Maximum number of text queries.
    pub q: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self { k: 5, q: 3 }
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed backend output: {0}")]
    MalformedBackendOutput(String),
}

pub fn image_search(
    image: &ImageRef,
    k: usize,
    client: &dyn ImageSearchClient,
) -> Result<Vec<WebImageHit>, BackendError> {
    if k == 0 {
        return Err(BackendError::Precondition("image search needs k >= 1".into()));
    }
    let mut hits = client.search_similar(image, k)?;
    hits.truncate(k);
    for (i, h) in hits.iter_mut().enumerate() {
        h.rank = i as u32 + 1;
    }
    Ok(hits)
}

fn numbered_titles(hits: &[WebImageHit]) -> String {
    hits.iter()
        .map(|h| format!("{}. {}", h.rank, h.title))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks for one query per line and keeps the first `q`. Empty `hits` skips
/// the backend entirely.
pub fn summarize_queries(
    hits: &[WebImageHit],
    user_instruction: &str,
    q: usize,
    backend: &dyn ChatBackend,
) -> Result<Vec<String>, ContextError> {
    if hits.is_empty() || q == 0 {
        return Ok(Vec::new());
    }
    let prompt = prompts::render(
        prompts::CONTEXT_QUERIES,
        &[
            ("titles", &numbered_titles(hits)),
            ("instruction", user_instruction),
        ],
    );
    let reply = chat(&[ChatMessage::user(prompt)], backend)?;
    let queries: Vec<String> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .take(q)
        .map(str::to_string)
        .collect();
    if queries.is_empty() {
        return Err(ContextError::MalformedBackendOutput(
            "expected one search query per line, got nothing".into(),
        ));
    }
    Ok(queries)
}

/// Summary used when the summarization call is unavailable.
fn fallback_summary(hits: &[WebImageHit], results: &[SearchResult]) -> String {
    let mut parts = Vec::new();
    let titles: Vec<&str> = hits
        .iter()
        .map(|h| h.title.trim())
        .filter(|t| !t.is_empty())
        .collect();
    if !titles.is_empty() {
        parts.push(format!("Similar web images: {}.", titles.join("; ")));
    }
    for r in results {
        if let Some(first) = r.snippets.first() {
            parts.push(format!("{}: {}", r.query, first));
        }
    }
    if parts.is_empty() {
        parts.push(format!("{} similar web images were found.", hits.len()));
    }
    parts.join(" ")
}

pub struct SearchClients<'a> {
    pub image: &'a dyn ImageSearchClient,
    pub text: &'a dyn TextSearchClient,
}

/// Image search, query summarization, text search and a final summary.
/// At most one image search, `q` text searches and two chat calls.
pub fn build_context(
    image: &ImageRef,
    user_instruction: &str,
    clients: &SearchClients<'_>,
    backend: &dyn ChatBackend,
    config: &ContextConfig,
) -> ContextBundle {
    let mut bundle = ContextBundle::empty();
    match image_search(image, config.k.max(1), clients.image) {
        Ok(hits) => bundle.image_hits = hits,
        Err(e) => {
            bundle.log.push(format!("image search failed: {e}"));
            return bundle;
        }
    }
    if bundle.image_hits.is_empty() {
        bundle.log.push("no similar images found".into());
        return bundle;
    }

    match summarize_queries(&bundle.image_hits, user_instruction, config.q, backend) {
        Ok(qs) => bundle.queries = qs,
        Err(e) => {
            bundle.log.push(format!("query summarization failed: {e}"));
            bundle.summary = fallback_summary(&bundle.image_hits, &[]);
            return bundle;
        }
    }

    // Sequential so taped search traffic keeps query order.
    for query in &bundle.queries {
        match clients.text.search(query) {
            Ok(r) if r.snippets.is_empty() => {
                bundle.log.push(format!("no results for query {query:?}"));
            }
            Ok(r) => bundle.results.push(r),
            Err(e) => bundle.log.push(format!("text search for {query:?} failed: {e}")),
        }
    }

    let results_text = bundle
        .results
        .iter()
        .map(|r| {
            let snippets: Vec<String> = r.snippets.iter().map(|s| format!("  - {s}")).collect();
            format!("Query: {}\n{}", r.query, snippets.join("\n"))
        })
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = prompts::render(
        prompts::CONTEXT_SUMMARY,
        &[
            ("titles", &numbered_titles(&bundle.image_hits)),
            (
                "results",
                if results_text.is_empty() {
                    "(none)"
                } else {
                    &results_text
                },
            ),
        ],
    );
    match chat(&[ChatMessage::user(prompt)], backend) {
        Ok(s) if !s.trim().is_empty() => bundle.summary = s.trim().to_string(),
        Ok(_) => {
            bundle.log.push("summarization returned empty text".into());
            bundle.summary = fallback_summary(&bundle.image_hits, &bundle.results);
        }
        Err(e) => {
            bundle.log.push(format!("summarization failed: {e}"));
            bundle.summary = fallback_summary(&bundle.image_hits, &bundle.results);
        }
    }
    bundle
}
