//! Blocking client for an embeddings HTTP service.
//!
//! Request body: `{"model": .., "input": [..]}` with bearer auth.
//! Response body: `{"data": [{"embedding": [..]}, ..]}` in input order.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::Deserialize;

use crate::error::{QditError, Result};
use crate::io::EmbeddingMatrix;

pub const ENV_URL: &str = "QDIT_EMBED_URL";
pub const ENV_KEY: &str = "QDIT_EMBED_KEY";
pub const DEFAULT_MODEL: &str = "all-mpnet-base-v2";
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_MAX_RETRIES: u32 = 5;
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Clone)]
pub struct EmbedClientConfig {
    pub endpoint_url: String,
    pub api_key: String,
    pub model: String,
    pub batch_size: usize,
    pub max_retries: u32,
    pub timeout: Duration,
    /// First retry delay; doubles on every further attempt.
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl std::fmt::Debug for EmbedClientConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbedClientConfig")
            .field("endpoint_url", &self.endpoint_url)
            .field("api_key", &"<redacted>")
            .field("model", &self.model)
            .field("batch_size", &self.batch_size)
            .field("max_retries", &self.max_retries)
            .field("timeout", &self.timeout)
            .field("backoff_base", &self.backoff_base)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl EmbedClientConfig {
    pub fn new(endpoint_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        EmbedClientConfig {
            endpoint_url: endpoint_url.into(),
            api_key: api_key.into(),
            model: DEFAULT_MODEL.into(),
            batch_size: DEFAULT_BATCH_SIZE,
            max_retries: DEFAULT_MAX_RETRIES,
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            backoff_base: Duration::from_secs(1),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    /// Reads the endpoint and key from `QDIT_EMBED_URL` / `QDIT_EMBED_KEY`.
    pub fn from_env() -> Result<Self> {
        let get = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.is_empty())
                .ok_or_else(|| {
                    QditError::InvalidConfig(format!("environment variable {name} is not set"))
                })
        };
        Ok(Self::new(get(ENV_URL)?, get(ENV_KEY)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint_url.is_empty() {
            return Err(QditError::InvalidConfig(
                "embedding endpoint URL is empty".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(QditError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        if self.max_in_flight == 0 {
            return Err(QditError::InvalidConfig(
                "max in-flight batches must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOutcome {
    /// Unit-normalized rows in input order.
    pub matrix: EmbeddingMatrix,
    pub requests: usize,
    pub retries: usize,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    embedding: Vec<f64>,
}

struct Counters {
    requests: AtomicUsize,
    retries: AtomicUsize,
}

enum Attempt {
    Done(Vec<Vec<f64>>),
    Transient(String),
}

fn backoff(base: Duration, retry: u32) -> Duration {
    let exp = base.saturating_mul(1u32 << retry.min(16));
    let jitter = rand::thread_rng().gen_range(0.0..0.5);
    exp + exp.mul_f64(jitter)
}

fn attempt(
    client: &reqwest::blocking::Client,
    cfg: &EmbedClientConfig,
    batch: &[String],
    offset: usize,
) -> Result<Attempt> {
    let body = serde_json::json!({ "model": cfg.model, "input": batch });
    let resp = match client
        .post(&cfg.endpoint_url)
        .bearer_auth(&cfg.api_key)
        .json(&body)
        .send()
    {
        Ok(r) => r,
        Err(e) if e.is_timeout() || e.is_connect() => return Ok(Attempt::Transient(e.to_string())),
        Err(e) => return Err(QditError::Embed(format!("batch at offset {offset}: {e}"))),
    };
    let status = resp.status();
    if status.as_u16() == 429 || status.is_server_error() {
        return Ok(Attempt::Transient(format!("HTTP {}", status.as_u16())));
    }
    if !status.is_success() {
        let body = resp.text().unwrap_or_default();
        return Err(QditError::EmbedHttp {
            status: status.as_u16(),
            offset,
            body: body.chars().take(200).collect(),
        });
    }
    let text = match resp.text() {
        Ok(t) => t,
        Err(e) if e.is_timeout() => return Ok(Attempt::Transient(e.to_string())),
        Err(e) => return Err(QditError::Embed(format!("batch at offset {offset}: {e}"))),
    };
    let parsed: EmbedResponse = serde_json::from_str(&text).map_err(|e| {
        QditError::Embed(format!("batch at offset {offset}: malformed response: {e}"))
    })?;
    if parsed.data.len() != batch.len() {
        return Err(QditError::Embed(format!(
            "batch at offset {offset}: {} embeddings returned for {} inputs",
            parsed.data.len(),
            batch.len()
        )));
    }
    Ok(Attempt::Done(
        parsed.data.into_iter().map(|d| d.embedding).collect(),
    ))
}

fn embed_batch(
    client: &reqwest::blocking::Client,
    cfg: &EmbedClientConfig,
    batch: &[String],
    offset: usize,
    counters: &Counters,
) -> Result<Vec<Vec<f64>>> {
    let mut retry = 0;
    loop {
        counters.requests.fetch_add(1, Ordering::Relaxed);
        match attempt(client, cfg, batch, offset)? {
            Attempt::Done(rows) => return Ok(rows),
            Attempt::Transient(_) if retry < cfg.max_retries => {
                std::thread::sleep(backoff(cfg.backoff_base, retry));
                retry += 1;
                counters.retries.fetch_add(1, Ordering::Relaxed);
            }
            Attempt::Transient(why) => {
                return Err(QditError::Embed(format!(
                    "batch at offset {offset}: giving up after {} retries ({why})",
                    cfg.max_retries
                )))
            }
        }
    }
}

/// Embeds `texts` in batches of `cfg.batch_size`, with up to
/// `cfg.max_in_flight` batches outstanding at once.
pub fn embed_texts(texts: &[String], cfg: &EmbedClientConfig) -> Result<EmbedOutcome> {
    cfg.validate()?;
    if texts.is_empty() {
        return Err(QditError::InvalidConfig("no texts to embed".into()));
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| QditError::Embed(e.to_string()))?;
    let batches: Vec<&[String]> = texts.chunks(cfg.batch_size).collect();
    let slots: Vec<Mutex<Option<Result<Vec<Vec<f64>>>>>> =
        batches.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let counters = Counters {
        requests: AtomicUsize::new(0),
        retries: AtomicUsize::new(0),
    };
    let workers = cfg.max_in_flight.min(batches.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let b = next.fetch_add(1, Ordering::Relaxed);
                if b >= batches.len() {
                    break;
                }
                let r = embed_batch(&client, cfg, batches[b], b * cfg.batch_size, &counters);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                *slots[b].lock().unwrap() = Some(r);
            });
        }
    });

    let mut dim = None;
    let mut data = Vec::new();
    for (b, slot) in slots.into_iter().enumerate() {
        let rows = match slot.into_inner().unwrap() {
            Some(r) => r?,
            None => continue,
        };
        for (j, row) in rows.into_iter().enumerate() {
            let idx = b * cfg.batch_size + j;
            let d = *dim.get_or_insert(row.len());
            if row.len() != d || d == 0 {
                return Err(QditError::Embed(format!(
                    "text {idx}: embedding has dimension {}, expected {d}",
                    row.len()
                )));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(QditError::Embed(format!(
                    "text {idx}: degenerate embedding"
                )));
            }
            data.extend(row.iter().map(|x| (x / norm) as f32));
        }
    }
    let dim = dim.unwrap_or(0);
    if data.len() != texts.len() * dim {
        return Err(QditError::Embed("incomplete embedding run".into()));
    }
    Ok(EmbedOutcome {
        matrix: EmbeddingMatrix::new(texts.len(), dim, data)?,
        requests: counters.requests.into_inner(),
        retries: counters.retries.into_inner(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_with_bounded_jitter() {
        let base = Duration::from_millis(100);
        for retry in 0..4 {
            let d = backoff(base, retry);
            let exp = base * (1 << retry);
            assert!(d >= exp && d < exp + exp / 2);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = EmbedClientConfig::new("http://x", "k");
        assert_eq!(c.model, "all-mpnet-base-v2");
        assert_eq!((c.batch_size, c.max_retries), (64, 5));
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        assert!(!format!("{c:?}").contains("\"k\""));
        assert!(embed_texts(&[], &EmbedClientConfig::new("http://x", "k")).is_err());
    }
}
