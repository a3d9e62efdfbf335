//! Cached, rate-limited retrieval of daily trend series.
//!
//! The fetcher is transport-agnostic: anything implementing [`TrendTransport`]
//! can serve requests. Responses must be CSV in the trends schema
//! (`topic_id, geo, date, volume`). Every successful response is written to the
//! cache directory before parsing, and later identical requests are answered
//! from the cache without touching the transport.
//!
//! With the `http` feature, [`HttpTransport`] issues GET requests against a
//! URL template, e.g. a local export service in front of the trends platform.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::{parse_trend_csv, TrendSeries, TrendsError};
use crate::ingest::{DateRange, DATE_FORMAT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrendRequest {
    pub topic_id: String,
    pub geo: String,
    pub range: DateRange,
}

#[derive(Debug, Clone)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure (DNS, refused, timeout, offline).
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct TransportFailure(pub String);

pub trait TrendTransport: Send + Sync {
    fn get(&self, request: &TrendRequest) -> Result<TransportResponse, TransportFailure>;
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("throttled by the trends endpoint after {attempts} attempts")]
    Throttled { attempts: u32 },
    #[error("unexpected HTTP status {status}")]
    Status { status: u16 },
    #[error("unparseable response: {0}")]
    Parse(#[from] TrendsError),
    #[error("response contained no series for {topic_id}/{geo}")]
    MissingSeries { topic_id: String, geo: String },
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub cache_dir: PathBuf,
    /// Minimum spacing between consecutive requests.
    pub min_interval: Duration,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before retry `k` is `backoff_base * 2^k`.
    pub backoff_base: Duration,
}

impl FetchConfig {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            cache_dir: cache_dir.into(),
            min_interval: Duration::from_secs(1),
            max_retries: 3,
            backoff_base: Duration::from_secs(2),
        }
    }
}

pub struct TrendFetcher<T> {
    transport: T,
    cfg: FetchConfig,
    gate: Mutex<Option<Instant>>,
    requests_issued: AtomicUsize,
}

impl<T: TrendTransport> TrendFetcher<T> {
    pub fn new(transport: T, cfg: FetchConfig) -> Self {
        Self {
            transport,
            cfg,
            gate: Mutex::new(None),
            requests_issued: AtomicUsize::new(0),
        }
    }

    /// Number of transport calls made so far (cache hits excluded).
    pub fn requests_issued(&self) -> usize {
        self.requests_issued.load(Ordering::SeqCst)
    }

    pub fn cache_path(&self, request: &TrendRequest) -> PathBuf {
        self.cfg.cache_dir.join(cache_file_name(request))
    }

    pub fn fetch(&self, request: &TrendRequest) -> Result<TrendSeries, FetchError> {
        let path = self.cache_path(request);
        let body = if path.exists() {
            std::fs::read_to_string(&path).map_err(|source| FetchError::Cache {
                path: path.clone(),
                source,
            })?
        } else {
            let body = self.download(request)?;
            // Validate before caching so a bad body is never served later.
            parse_response(&body, &path, request)?;
            write_atomic(&path, &body)?;
            body
        };
        parse_response(&body, &path, request)
    }

    fn download(&self, request: &TrendRequest) -> Result<String, FetchError> {
        let attempts = self.cfg.max_retries + 1;
        let mut last_failure = None;
        let mut throttled = false;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff_base * 2u32.saturating_pow(attempt - 1));
            }
            self.wait_for_slot();
            self.requests_issued.fetch_add(1, Ordering::SeqCst);
            match self.transport.get(request) {
                Ok(resp) if resp.status == 200 => return Ok(resp.body),
                Ok(resp) if resp.status == 429 => {
                    throttled = true;
                    log::warn!("trends request throttled (attempt {})", attempt + 1);
                }
                Ok(resp) if resp.status >= 500 => {
                    throttled = false;
                    last_failure = Some(format!("HTTP {}", resp.status));
                }
                Ok(resp) => return Err(FetchError::Status { status: resp.status }),
                Err(failure) => {
                    throttled = false;
                    last_failure = Some(failure.0);
                }
            }
        }
        if throttled {
            Err(FetchError::Throttled { attempts })
        } else {
            Err(FetchError::Network {
                attempts,
                message: last_failure.unwrap_or_default(),
            })
        }
    }

    fn wait_for_slot(&self) {
        let mut last = self.gate.lock().expect("rate gate poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.cfg.min_interval {
                std::thread::sleep(self.cfg.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

fn parse_response(body: &str, path: &Path, request: &TrendRequest) -> Result<TrendSeries, FetchError> {
    parse_trend_csv(body.as_bytes(), path, 1)?
        .into_iter()
        .find(|s| s.topic_id == request.topic_id && s.geo == request.geo)
        .ok_or_else(|| FetchError::MissingSeries {
            topic_id: request.topic_id.clone(),
            geo: request.geo.clone(),
        })
}

fn write_atomic(path: &Path, body: &str) -> Result<(), FetchError> {
    let cache_err = |source| FetchError::Cache {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(cache_err)?;
    }
    let tmp = path.with_extension("csv.part");
    std::fs::write(&tmp, body).map_err(cache_err)?;
    std::fs::rename(&tmp, path).map_err(cache_err)
}

/// `<slug>__<geo>__<start>_<end>__<hash8>.csv`; the hash disambiguates topic
/// ids that slug to the same string.
fn cache_file_name(request: &TrendRequest) -> String {
    let slug: String = request
        .topic_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let key = format!(
        "{}\u{1f}{}\u{1f}{}\u{1f}{}",
        request.topic_id, request.geo, request.range.start, request.range.end
    );
    let digest = hex::encode(Sha256::digest(key.as_bytes()));
    format!(
        "{slug}__{}__{}_{}__{}.csv",
        request.geo,
        request.range.start.format(DATE_FORMAT),
        request.range.end.format(DATE_FORMAT),
        &digest[..8]
    )
}

/// GET transport for a URL template with `{topic}`, `{geo}`, `{start}` and
/// `{end}` placeholders (values percent-encoded).
#[cfg(feature = "http")]
pub struct HttpTransport {
    pub url_template: String,
    pub timeout: Duration,
}

#[cfg(feature = "http")]
impl HttpTransport {
    pub fn new(url_template: impl Into<String>) -> Self {
        Self {
            url_template: url_template.into(),
            timeout: Duration::from_secs(30),
        }
    }

    fn url(&self, request: &TrendRequest) -> String {
        fn encode(value: &str) -> String {
            value
                .bytes()
                .map(|b| match b {
                    b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
                    _ => format!("%{b:02X}"),
                })
                .collect()
        }
        self.url_template
            .replace("{topic}", &encode(&request.topic_id))
            .replace("{geo}", &encode(&request.geo))
            .replace("{start}", &request.range.start.format(DATE_FORMAT).to_string())
            .replace("{end}", &request.range.end.format(DATE_FORMAT).to_string())
    }
}

#[cfg(feature = "http")]
impl TrendTransport for HttpTransport {
    fn get(&self, request: &TrendRequest) -> Result<TransportResponse, TransportFailure> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut response = agent
            .get(&self.url(request))
            .call()
            .map_err(|e| TransportFailure(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure(e.to_string()))?;
        Ok(TransportResponse { status, body })
    }
}
