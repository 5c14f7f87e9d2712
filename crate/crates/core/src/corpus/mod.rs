//! Legal-act corpus: fetching, parsing, cleaning, curation and statistics.

mod clean;
mod fetch;
mod layout;
mod schema;
mod stats;
mod validate;

use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;

pub use clean::{clean_text, decode_entities};
pub use fetch::{CachePolicy, Fetcher, RateLimiter, RawCache, RawDocument, RetryPolicy};
pub use layout::{parse_act, parse_portal_date, HtmlLayout, HtmlLayoutAdapter, JsonLayoutAdapter, LayoutAdapter};
pub use schema::{corpus_from_json, corpus_to_json, read_corpus, write_corpus, Act, ActId, Section, SectionId};
pub use stats::{corpus_stats, CorpusStats};
pub use validate::{validate_corpus, Rule, ValidationReport, Violation};

/// Environment variable that overrides the portal base URL given on the command line.
pub const PORTAL_URL_ENV: &str = "UKIL_PORTAL_URL";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("network failure fetching {locator} after {attempts} attempts: {message}")]
    Network {
        locator: String,
        attempts: u32,
        message: String,
    },
    #[error("{locator} not found (status {status:?})")]
    NotFound { locator: String, status: Option<u16> },
    #[error("rate limited: next request allowed in {retry_after:?}")]
    RateLimited { retry_after: Duration },
    #[error("cannot parse {locator}: {message}")]
    Parse { locator: String, message: String },
    #[error("{locator} is not valid UTF-8: {message}")]
    Encoding { locator: String, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Splits `"The Pensions Act, 1871"` into `("The Pensions Act", Some("1871"))`.
/// Names without a trailing `, YYYY` come back unchanged with no year.
pub fn split_title_year(name: &str) -> (&str, Option<&str>) {
    static TRAILING_YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(.*?),\s*(\d{4})\s*$").unwrap());
    match TRAILING_YEAR.captures(name) {
        Some(c) => (c.get(1).unwrap().as_str().trim_end(), Some(c.get(2).unwrap().as_str())),
        None => (name.trim(), None),
    }
}

/// Acts that are still in force. The input is left untouched.
pub fn filter_repealed(corpus: &[Act]) -> Vec<Act> {
    corpus.iter().filter(|a| !a.repealed()).cloned().collect()
}

/// Outcome of a scrape run.
#[derive(Debug, Default)]
pub struct ScrapeSummary {
    pub listed: usize,
    pub fetched: usize,
    pub from_cache: usize,
    pub failed: Vec<(String, String)>,
}

/// Fetches the listing page at `base_url` and every act page it links to.
/// Everything lands in the fetcher's raw cache.
pub fn scrape(
    fetcher: &Fetcher,
    adapter: &dyn LayoutAdapter,
    base_url: &str,
    listing_path: &str,
    policy: CachePolicy,
) -> Result<ScrapeSummary, CorpusError> {
    let listing_url = format!("{}/{}", base_url.trim_end_matches('/'), listing_path.trim_start_matches('/'));
    let listing = fetcher.fetch_document(&listing_url, policy)?;
    let links = adapter.act_links(&listing, base_url)?;
    let mut summary = ScrapeSummary {
        listed: links.len(),
        ..Default::default()
    };
    for link in links {
        match fetcher.fetch_document(&link, policy) {
            Ok(doc) => {
                summary.fetched += 1;
                if doc.from_cache {
                    summary.from_cache += 1;
                }
            }
            Err(e @ CorpusError::RateLimited { .. }) => return Err(e),
            Err(e) => {
                tracing::warn!(%link, error = %e, "act page failed");
                summary.failed.push((link, e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// Parses every cached document the adapter recognizes as an act page,
/// sorted by act id. Documents that are not act pages (listings) are skipped.
pub fn build_corpus(cache: &RawCache, adapter: &dyn LayoutAdapter) -> Result<Vec<Act>, CorpusError> {
    let mut acts = Vec::new();
    for locator in cache.locators() {
        let Some(doc) = cache.get(&locator)? else { continue };
        match adapter.parse_act(&doc) {
            Ok(act) => acts.push(act),
            Err(CorpusError::Parse { message, .. }) => {
                tracing::debug!(%locator, %message, "skipping non-act document");
            }
            Err(e) => return Err(e),
        }
    }
    acts.sort_by_key(|a| a.id);
    Ok(acts)
}
