use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{SearchResult, WebImageHit};
use crate::backends::{
    image_search_digest, text_search_digest, BackendError, Cassette, CassetteMode, Role, Transport,
};
use crate::model::ImageRef;

pub trait ImageSearchClient: Send + Sync {
    /// Up to `k` pages showing images similar to `image`, best first.
    fn search_similar(&self, image: &ImageRef, k: usize) -> Result<Vec<WebImageHit>, BackendError>;
}

pub trait TextSearchClient: Send + Sync {
    fn search(&self, query: &str) -> Result<SearchResult, BackendError>;
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HitRecord {
    #[serde(default)]
    title: String,
    url: String,
}

fn hits_from(records: Vec<(String, String)>) -> Vec<WebImageHit> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, (title, source_url))| WebImageHit {
            title,
            source_url,
            rank: i as u32 + 1,
        })
        .collect()
}

/// Canned similar-image hits. A missing `image_hits.json` means no hits.
#[derive(Debug, Clone)]
pub struct FixtureImageSearch {
    hits: Vec<(String, String)>,
}

impl FixtureImageSearch {
    pub fn new(hits: Vec<(String, String)>) -> Self {
        Self { hits }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, BackendError> {
        let path = dir.join("image_hits.json");
        if !path.exists() {
            return Ok(Self::new(Vec::new()));
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        let records: Vec<HitRecord> = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::new(records.into_iter().map(|r| (r.title, r.url)).collect()))
    }
}

impl ImageSearchClient for FixtureImageSearch {
    fn search_similar(&self, _image: &ImageRef, k: usize) -> Result<Vec<WebImageHit>, BackendError> {
        Ok(hits_from(self.hits.iter().take(k).cloned().collect()))
    }
}

/// File-name form of a query: lowercase alphanumeric runs joined by `-`.
pub fn query_slug(query: &str) -> String {
    query
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

/// Reads `snippets/<query-slug>.txt`, one snippet per non-empty line.
/// A missing file means no results.
#[derive(Debug, Clone)]
pub struct FixtureTextSearch {
    dir: PathBuf,
}

impl FixtureTextSearch {
    pub fn new(scenario_dir: &Path) -> Self {
        Self {
            dir: scenario_dir.join("snippets"),
        }
    }
}

impl TextSearchClient for FixtureTextSearch {
    fn search(&self, query: &str) -> Result<SearchResult, BackendError> {
        let path = self.dir.join(format!("{}.txt", query_slug(query)));
        let snippets = match std::fs::read_to_string(&path) {
            Ok(text) => text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(BackendError::Fixture(format!("{}: {e}", path.display()))),
        };
        Ok(SearchResult {
            query: query.to_string(),
            snippets,
        })
    }
}

fn bearer(api_key_env: Option<&str>) -> Option<String> {
    api_key_env.and_then(|v| std::env::var(v).ok())
}

/// `POST {endpoint}/image-search` with `{"image": <data url>, "k": k}`,
/// answered by `{"hits": [{"title", "url"}]}`.
pub struct HttpImageSearch {
    transport: Arc<dyn Transport>,
    endpoint: String,
    api_key_env: Option<String>,
}

impl HttpImageSearch {
    pub fn new(transport: Arc<dyn Transport>, endpoint: &str, api_key_env: Option<&str>) -> Self {
        Self {
            transport,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key_env: api_key_env.map(str::to_string),
        }
    }
}

#[derive(Deserialize)]
struct HitsResponse {
    hits: Vec<HitRecord>,
}

impl ImageSearchClient for HttpImageSearch {
    fn search_similar(&self, image: &ImageRef, k: usize) -> Result<Vec<WebImageHit>, BackendError> {
        let body = json!({ "image": image.data_url(), "k": k });
        let reply = self.transport.post_json(
            &format!("{}/image-search", self.endpoint),
            bearer(self.api_key_env.as_deref()).as_deref(),
            &body,
        )?;
        let parsed: HitsResponse = serde_json::from_value(reply)
            .map_err(|e| BackendError::Malformed(format!("image search response: {e}")))?;
        Ok(hits_from(
            parsed.hits.into_iter().map(|h| (h.title, h.url)).collect(),
        ))
    }
}

/// `POST {endpoint}/text-search` with `{"query": q}`, answered by
/// `{"snippets": [..]}`.
pub struct HttpTextSearch {
    transport: Arc<dyn Transport>,
    endpoint: String,
    api_key_env: Option<String>,
}

impl HttpTextSearch {
    pub fn new(transport: Arc<dyn Transport>, endpoint: &str, api_key_env: Option<&str>) -> Self {
        Self {
            transport,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key_env: api_key_env.map(str::to_string),
        }
    }
}

#[derive(Deserialize)]
struct SnippetsResponse {
    snippets: Vec<String>,
}

impl TextSearchClient for HttpTextSearch {
    fn search(&self, query: &str) -> Result<SearchResult, BackendError> {
        let reply = self.transport.post_json(
            &format!("{}/text-search", self.endpoint),
            bearer(self.api_key_env.as_deref()).as_deref(),
            &json!({ "query": query }),
        )?;
        let parsed: SnippetsResponse = serde_json::from_value(reply)
            .map_err(|e| BackendError::Malformed(format!("text search response: {e}")))?;
        Ok(SearchResult {
            query: query.to_string(),
            snippets: parsed.snippets,
        })
    }
}

fn taped_call<T: Serialize + for<'de> Deserialize<'de>>(
    tape: &Cassette,
    digest: String,
    live: Option<&dyn Fn() -> Result<T, BackendError>>,
) -> Result<T, BackendError> {
    let encoded = live.map(|f| move || f().map(|v| serde_json::to_string(&v).expect("serializes")));
    let blob = tape.exchange(
        Role::Search,
        digest,
        encoded
            .as_ref()
            .map(|f| f as &dyn Fn() -> Result<String, BackendError>),
    )?;
    serde_json::from_str(&blob).map_err(|e| BackendError::Malformed(format!("cassette blob: {e}")))
}

fn check_live<T: ?Sized>(tape: &Cassette, inner: &Option<Arc<T>>) -> Result<(), BackendError> {
    if tape.mode() != CassetteMode::Replay && inner.is_none() {
        return Err(BackendError::Precondition(
            "search client needs a live client outside replay mode".into(),
        ));
    }
    Ok(())
}

pub struct TapedImageSearch {
    tape: Arc<Cassette>,
    inner: Option<Arc<dyn ImageSearchClient>>,
}

impl TapedImageSearch {
    pub fn new(
        tape: Arc<Cassette>,
        inner: Option<Arc<dyn ImageSearchClient>>,
    ) -> Result<Self, BackendError> {
        check_live(&tape, &inner)?;
        Ok(Self { tape, inner })
    }
}

impl ImageSearchClient for TapedImageSearch {
    fn search_similar(&self, image: &ImageRef, k: usize) -> Result<Vec<WebImageHit>, BackendError> {
        let live = self
            .inner
            .as_deref()
            .map(|c| move || c.search_similar(image, k));
        taped_call(
            &self.tape,
            image_search_digest(image, k),
            live.as_ref()
                .map(|f| f as &dyn Fn() -> Result<Vec<WebImageHit>, BackendError>),
        )
    }
}

pub struct TapedTextSearch {
    tape: Arc<Cassette>,
    inner: Option<Arc<dyn TextSearchClient>>,
}

impl TapedTextSearch {
    pub fn new(
        tape: Arc<Cassette>,
        inner: Option<Arc<dyn TextSearchClient>>,
    ) -> Result<Self, BackendError> {
        check_live(&tape, &inner)?;
        Ok(Self { tape, inner })
    }
}

impl TextSearchClient for TapedTextSearch {
    fn search(&self, query: &str) -> Result<SearchResult, BackendError> {
        let live = self.inner.as_deref().map(|c| move || c.search(query));
        taped_call(
            &self.tape,
            text_search_digest(query),
            live.as_ref()
                .map(|f| f as &dyn Fn() -> Result<SearchResult, BackendError>),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::png;
    use serde_json::Value;
    use std::sync::Mutex;

    #[test]
    fn slugs() {
        assert_eq!(query_slug("Tesla Cybercab specs!"), "tesla-cybercab-specs");
        assert_eq!(query_slug("  a--b  "), "a-b");
    }

    #[test]
    fn fixture_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("image_hits.json"),
            r#"[{"title":"Tesla Cybercab","url":"https://a"},{"url":"https://b"}]"#,
        )
        .unwrap();
        std::fs::create_dir(dir.path().join("snippets")).unwrap();
        std::fs::write(
            dir.path().join("snippets/tesla-cybercab.txt"),
            "two-seat robotaxi\n\nno steering wheel\n",
        )
        .unwrap();
        let images = FixtureImageSearch::from_dir(dir.path()).unwrap();
        let hits = images.search_similar(&png(), 5).unwrap();
        assert_eq!(hits[0].title, "Tesla Cybercab");
        assert_eq!(hits[1].title, "");
        let text = FixtureTextSearch::new(dir.path());
        assert_eq!(
            text.search("Tesla Cybercab").unwrap().snippets,
            vec!["two-seat robotaxi", "no steering wheel"]
        );
        assert!(text.search("unknown").unwrap().snippets.is_empty());

        std::fs::write(dir.path().join("image_hits.json"), r#"[{"title":"x"}]"#).unwrap();
        assert!(FixtureImageSearch::from_dir(dir.path()).is_err());
    }

    type Posted = Mutex<Vec<(String, Value)>>;

    struct Canned(Posted);

    impl Transport for Canned {
        fn post_json(&self, url: &str, _: Option<&str>, body: &Value) -> Result<Value, BackendError> {
            self.0.lock().unwrap().push((url.to_string(), body.clone()));
            if url.ends_with("/image-search") {
                Ok(json!({"hits": [{"title": "t", "url": "u"}]}))
            } else {
                Ok(json!({"snippets": ["s1"]}))
            }
        }
    }

    #[test]
    fn http_clients_shape() {
        let t = Arc::new(Canned(Mutex::new(Vec::new())));
        let images = HttpImageSearch::new(t.clone(), "http://search/", None);
        assert_eq!(images.search_similar(&png(), 3).unwrap()[0].rank, 1);
        let text = HttpTextSearch::new(t.clone(), "http://search", None);
        assert_eq!(text.search("q").unwrap().snippets, vec!["s1"]);
        let seen = t.0.lock().unwrap();
        assert_eq!(seen[0].0, "http://search/image-search");
        assert_eq!(seen[0].1["k"], 3);
        assert_eq!(seen[1].1, json!({"query": "q"}));
    }

    #[test]
    fn taped_search_replays() {
        let tape = Cassette::recording();
        let live: Arc<dyn TextSearchClient> = Arc::new(FixtureTextSearch::new(Path::new("/none")));
        let taped = TapedTextSearch::new(tape.clone(), Some(live)).unwrap();
        let first = taped.search("q").unwrap();
        let replay = Cassette::parse(&tape.render()).unwrap();
        let again = TapedTextSearch::new(replay.clone(), None).unwrap();
        assert_eq!(again.search("q").unwrap(), first);
        assert!(matches!(
            again.search("q"),
            Err(BackendError::CassetteExhausted(1))
        ));
    }
}
