//! Polite document fetching: a shared token-bucket rate limiter, bounded
//! retries with exponential backoff, and a mandatory on-disk raw cache.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;

#[derive(Debug, Clone)]
pub struct RawDocument {
    pub locator: String,
    pub body: Vec<u8>,
    pub fetched_at: DateTime<Utc>,
    pub from_cache: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePolicy {
    PreferCache,
    Refresh,
}

/// Token bucket shared by every request a [`Fetcher`] makes.
///
/// A request that would have to wait longer than `max_wait` is rejected with
/// [`CorpusError::RateLimited`] instead of sleeping.
#[derive(Debug)]
pub struct RateLimiter {
    rate_per_sec: f64,
    capacity: f64,
    max_wait: Duration,
    state: Mutex<Bucket>,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64, capacity: f64, max_wait: Duration) -> Self {
        assert!(rate_per_sec > 0.0 && capacity >= 1.0);
        Self {
            rate_per_sec,
            capacity,
            max_wait,
            state: Mutex::new(Bucket {
                tokens: capacity,
                last: Instant::now(),
            }),
        }
    }

    /// One request per second, burst of one, wait at most five seconds.
    pub fn polite() -> Self {
        Self::new(1.0, 1.0, Duration::from_secs(5))
    }

    /// Reserves a token, sleeping for it when the wait is within the ceiling.
    pub fn acquire(&self) -> Result<(), CorpusError> {
        let wait = {
            let mut bucket = self.state.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let elapsed = now.duration_since(bucket.last).as_secs_f64();
            bucket.tokens = (bucket.tokens + elapsed * self.rate_per_sec).min(self.capacity);
            bucket.last = now;
            if bucket.tokens >= 1.0 {
                bucket.tokens -= 1.0;
                Duration::ZERO
            } else {
                let wait = Duration::from_secs_f64((1.0 - bucket.tokens) / self.rate_per_sec);
                if wait > self.max_wait {
                    return Err(CorpusError::RateLimited { retry_after: wait });
                }
                // The token is spent now; the caller owns the sleep.
                bucket.tokens -= 1.0;
                wait
            }
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    key: String,
    fetched_at: DateTime<Utc>,
}

/// Content-addressed raw cache: bodies live under `objects/<sha256>` and
/// `index.json` maps each locator to its key.
#[derive(Debug)]
pub struct RawCache {
    root: PathBuf,
    index: Mutex<BTreeMap<String, IndexEntry>>,
}

impl RawCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let root = root.into();
        fs::create_dir_all(root.join("objects")).map_err(|e| CorpusError::io(&root, e))?;
        let index_path = root.join("index.json");
        let index = if index_path.exists() {
            let raw = fs::read_to_string(&index_path).map_err(|e| CorpusError::io(&index_path, e))?;
            serde_json::from_str(&raw)?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            root,
            index: Mutex::new(index),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key_for(body: &[u8]) -> String {
        hex::encode(Sha256::digest(body))
    }

    pub fn get(&self, locator: &str) -> Result<Option<RawDocument>, CorpusError> {
        let entry = match self.index.lock().expect("cache index poisoned").get(locator) {
            Some(e) => e.clone(),
            None => return Ok(None),
        };
        let path = self.object_path(&entry.key);
        if !path.exists() {
            return Ok(None);
        }
        let body = fs::read(&path).map_err(|e| CorpusError::io(&path, e))?;
        Ok(Some(RawDocument {
            locator: locator.to_string(),
            body,
            fetched_at: entry.fetched_at,
            from_cache: true,
        }))
    }

    pub fn put(&self, doc: &RawDocument) -> Result<String, CorpusError> {
        let key = Self::key_for(&doc.body);
        let path = self.object_path(&key);
        if !path.exists() {
            fs::write(&path, &doc.body).map_err(|e| CorpusError::io(&path, e))?;
        }
        let mut index = self.index.lock().expect("cache index poisoned");
        index.insert(
            doc.locator.clone(),
            IndexEntry {
                key: key.clone(),
                fetched_at: doc.fetched_at,
            },
        );
        let index_path = self.root.join("index.json");
        let json = serde_json::to_string_pretty(&*index)?;
        fs::write(&index_path, json).map_err(|e| CorpusError::io(&index_path, e))?;
        Ok(key)
    }

    /// Every cached locator, in sorted order.
    pub fn locators(&self) -> Vec<String> {
        self.index.lock().expect("cache index poisoned").keys().cloned().collect()
    }

    fn object_path(&self, key: &str) -> PathBuf {
        self.root.join("objects").join(key)
    }
}

pub struct Fetcher {
    agent: ureq::Agent,
    cache: RawCache,
    limiter: RateLimiter,
    retry: RetryPolicy,
}

impl Fetcher {
    pub fn new(cache: RawCache, limiter: RateLimiter, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            cache,
            limiter,
            retry,
        }
    }

    pub fn cache(&self) -> &RawCache {
        &self.cache
    }

    /// Fetches `locator` (an `http(s)://` URL, `file://` URL or a local path).
    pub fn fetch_document(&self, locator: &str, policy: CachePolicy) -> Result<RawDocument, CorpusError> {
        if policy == CachePolicy::PreferCache {
            if let Some(doc) = self.cache.get(locator)? {
                return Ok(doc);
            }
        }
        let body = if locator.starts_with("http://") || locator.starts_with("https://") {
            self.fetch_http(locator)?
        } else {
            let path = locator.strip_prefix("file://").unwrap_or(locator);
            match fs::read(path) {
                Ok(body) => body,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(CorpusError::NotFound {
                        locator: locator.to_string(),
                        status: None,
                    })
                }
                Err(e) => return Err(CorpusError::io(Path::new(path), e)),
            }
        };
        if body.is_empty() {
            return Err(CorpusError::Network {
                locator: locator.to_string(),
                attempts: 1,
                message: "empty response body".into(),
            });
        }
        let doc = RawDocument {
            locator: locator.to_string(),
            body,
            fetched_at: Utc::now(),
            from_cache: false,
        };
        self.cache.put(&doc)?;
        Ok(doc)
    }

    fn fetch_http(&self, url: &str) -> Result<Vec<u8>, CorpusError> {
        let mut last_error = String::new();
        let attempts = self.retry.retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.retry.delay(attempt - 1));
            }
            self.limiter.acquire()?;
            match self.agent.get(url).call() {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if (400..500).contains(&status) {
                        return Err(CorpusError::NotFound {
                            locator: url.to_string(),
                            status: Some(status),
                        });
                    }
                    if status >= 500 {
                        last_error = format!("server returned {status}");
                        tracing::warn!(url, status, attempt, "retrying after server error");
                        continue;
                    }
                    let mut body = Vec::new();
                    match response.body_mut().as_reader().read_to_end(&mut body) {
                        Ok(_) => return Ok(body),
                        Err(e) => last_error = e.to_string(),
                    }
                }
                Err(e) => {
                    last_error = e.to_string();
                    tracing::warn!(url, attempt, error = %e, "transport failure");
                }
            }
        }
        Err(CorpusError::Network {
            locator: url.to_string(),
            attempts,
            message: last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limiter_rejects_waits_beyond_ceiling() {
        let limiter = RateLimiter::new(1.0, 1.0, Duration::from_millis(10));
        limiter.acquire().unwrap();
        match limiter.acquire() {
            Err(CorpusError::RateLimited { retry_after }) => assert!(retry_after > Duration::from_millis(10)),
            other => panic!("expected RateLimited, got {other:?}"),
        }
    }

    #[test]
    fn limiter_sleeps_within_ceiling() {
        let limiter = RateLimiter::new(100.0, 1.0, Duration::from_secs(1));
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire().unwrap();
        }
        assert!(start.elapsed() >= Duration::from_millis(25));
    }

    #[test]
    fn backoff_doubles() {
        let policy = RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(10),
        };
        assert_eq!(policy.delay(0), Duration::from_millis(10));
        assert_eq!(policy.delay(2), Duration::from_millis(40));
    }

    #[test]
    fn local_file_cache_hit_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let page = dir.path().join("page.html");
        fs::write(&page, b"<html>act</html>").unwrap();
        let cache = RawCache::open(dir.path().join("cache")).unwrap();
        let fetcher = Fetcher::new(cache, RateLimiter::polite(), RetryPolicy::default());
        let locator = page.to_str().unwrap();
        let first = fetcher.fetch_document(locator, CachePolicy::PreferCache).unwrap();
        assert!(!first.from_cache);
        fs::write(&page, b"changed").unwrap();
        let second = fetcher.fetch_document(locator, CachePolicy::PreferCache).unwrap();
        assert!(second.from_cache);
        assert_eq!(first.body, second.body);
        let refreshed = fetcher.fetch_document(locator, CachePolicy::Refresh).unwrap();
        assert_eq!(refreshed.body, b"changed");
    }

    #[test]
    fn missing_file_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let fetcher = Fetcher::new(
            RawCache::open(dir.path()).unwrap(),
            RateLimiter::polite(),
            RetryPolicy::default(),
        );
        let err = fetcher
            .fetch_document(dir.path().join("nope.html").to_str().unwrap(), CachePolicy::Refresh)
            .unwrap_err();
        assert!(matches!(err, CorpusError::NotFound { status: None, .. }));
    }
}
