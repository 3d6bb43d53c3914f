//! Search clients: the wire between keyword queries and ranked links.
//!
//! The offline fixture client serves a frozen corpus in file order, which
//! makes crawl-depth experiments reproducible; a live client can implement
//! the same trait against a real search API.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvolveError, LinkRecord};

/// Ranked search. `query` is a space-joined keyword list; the returned
/// order is the client's ranking and is preserved downstream.
pub trait SearchClient: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<LinkRecord>, EvolveError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusDoc {
    url: String,
    title: String,
    snippet: String,
    published_age_days: u32,
    #[serde(default)]
    page_text: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Corpus {
    docs: Vec<CorpusDoc>,
}

/// Offline client over a frozen JSON corpus; ranking is file order,
/// independent of the query.
#[derive(Debug, Clone)]
pub struct FixtureSearchClient {
    docs: Vec<CorpusDoc>,
}

impl FixtureSearchClient {
    pub fn load(path: &Path) -> Result<Self, EvolveError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvolveError::Search(format!("{}: {e}", path.display())))?;
        FixtureSearchClient::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, EvolveError> {
        let corpus: Corpus =
            serde_json::from_str(text).map_err(|e| EvolveError::Search(e.to_string()))?;
        Ok(FixtureSearchClient { docs: corpus.docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

impl SearchClient for FixtureSearchClient {
    fn search(&self, _query: &str) -> Result<Vec<LinkRecord>, EvolveError> {
        Ok(self
            .docs
            .iter()
            .map(|d| LinkRecord {
                url: d.url.clone(),
                title: d.title.clone(),
                snippet: d.snippet.clone(),
                published_age_days: d.published_age_days,
                page_text: d.page_text.clone(),
                relevance: 0.0,
            })
            .collect())
    }
}

/// Client that always fails; exercises the abort path.
pub struct FailingSearchClient;

impl SearchClient for FailingSearchClient {
    fn search(&self, query: &str) -> Result<Vec<LinkRecord>, EvolveError> {
        Err(EvolveError::Search(format!("no backend for `{query}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_client_preserves_file_order() {
        let client = FixtureSearchClient::from_json(
            r#"{"docs": [
                {"url": "https://a.test/1", "title": "first", "snippet": "s1",
                 "published_age_days": 3, "page_text": "body one"},
                {"url": "https://a.test/2", "title": "second", "snippet": "s2",
                 "published_age_days": 40}
            ]}"#,
        )
        .unwrap();
        let links = client.search("anything").unwrap();
        assert_eq!(links.len(), 2);
        assert_eq!(links[0].title, "first");
        assert_eq!(links[0].page_text.as_deref(), Some("body one"));
        assert_eq!(links[1].page_text, None);
        assert_eq!(links[1].published_age_days, 40);
        assert!(links.iter().all(|l| l.relevance == 0.0));
    }

    #[test]
    fn malformed_corpus_is_a_search_error() {
        let err = FixtureSearchClient::from_json("[]").expect_err("fails");
        assert!(matches!(err, EvolveError::Search(_)));
    }
}
