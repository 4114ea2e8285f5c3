//! HTTP client for an external image-embedding service.
//!
//! Wire protocol (JSON over HTTP):
//!
//! * `POST {endpoint}/embed` with `{"image": <base64 PNG>, "content_hash": <hex sha256 of the PNG>}`
//!   answers `{"model": str, "dim": int, "embedding": [f32; dim], "content_hash": str}`.
//! * `GET {endpoint}/health` answers `{"model": str, "dim": int}` once the model is loaded.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::{normalize, EmbedError, Embedder};
use crate::image::Image;

/// Dimension of the default model behind the service.
pub const REMOTE_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub attempts: usize,
    /// Delay before the second attempt; doubled for each later one.
    pub backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub expected_dim: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            expected_dim: REMOTE_DIM,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    image: String,
    content_hash: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    model: String,
    dim: usize,
    embedding: Vec<f32>,
    #[serde(default)]
    content_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HealthInfo {
    pub model: String,
    pub dim: usize,
}

pub struct RemoteEmbedder {
    endpoint: String,
    id: String,
    config: RemoteConfig,
    agent: ureq::Agent,
    cache: Mutex<HashMap<String, Vec<f32>>>,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
    requests: AtomicUsize,
}

struct Slot<'a>(&'a RemoteEmbedder);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("slot lock") -= 1;
        self.0.slot_freed.notify_one();
    }
}

enum Attempt {
    Retry(EmbedError),
    Fail(EmbedError),
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str) -> Self {
        Self::with_config(endpoint, RemoteConfig::default())
    }

    pub fn with_config(endpoint: &str, config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let endpoint = endpoint.trim_end_matches('/').to_string();
        Self {
            id: format!("remote:{endpoint}"),
            endpoint,
            config,
            agent,
            cache: Mutex::new(HashMap::new()),
            in_flight: Mutex::new(0),
            slot_freed: Condvar::new(),
            requests: AtomicUsize::new(0),
        }
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn acquire(&self) -> Slot<'_> {
        let limit = self.config.max_in_flight.max(1);
        let mut n = self.in_flight.lock().expect("slot lock");
        while *n >= limit {
            n = self.slot_freed.wait(n).expect("slot lock");
        }
        *n += 1;
        Slot(self)
    }

    fn with_retries<R>(&self, mut attempt: impl FnMut() -> Result<R, Attempt>) -> Result<R, EmbedError> {
        let attempts = self.config.attempts.max(1);
        let mut last = None;
        for k in 0..attempts {
            if k > 0 {
                std::thread::sleep(self.config.backoff * (1 << (k - 1)));
            }
            match attempt() {
                Ok(r) => return Ok(r),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) => last = Some(e),
            }
        }
        Err(match last.expect("at least one attempt") {
            EmbedError::Connection { message, .. } => EmbedError::Connection { attempts, message },
            other => other,
        })
    }

    fn transport(e: ureq::Error) -> Attempt {
        Attempt::Retry(EmbedError::Connection { attempts: 0, message: e.to_string() })
    }

    fn read_body(resp: &mut ureq::http::Response<ureq::Body>) -> Result<(u16, String), Attempt> {
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(Self::transport)?;
        if (500..600).contains(&status) {
            return Err(Attempt::Retry(EmbedError::Service { status, body }));
        }
        if status != 200 {
            return Err(Attempt::Fail(EmbedError::Service { status, body }));
        }
        Ok((status, body))
    }

    pub fn health(&self) -> Result<HealthInfo, EmbedError> {
        let url = format!("{}/health", self.endpoint);
        self.with_retries(|| {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let mut resp = self.agent.get(&url).call().map_err(Self::transport)?;
            let (_, body) = Self::read_body(&mut resp)?;
            serde_json::from_str(&body).map_err(|e| Attempt::Fail(EmbedError::Malformed(e.to_string())))
        })
    }

    /// Embeds encoded PNG bytes, consulting the content-hash cache first.
    pub fn embed_png(&self, png: &[u8]) -> Result<Vec<f32>, EmbedError> {
        let hash: String = Sha256::digest(png).iter().map(|b| format!("{b:02x}")).collect();
        if let Some(v) = self.cache.lock().expect("cache lock").get(&hash) {
            return Ok(v.clone());
        }
        let body = serde_json::to_string(&EmbedRequest {
            image: base64::engine::general_purpose::STANDARD.encode(png),
            content_hash: &hash,
        })
        .expect("request serializes");
        let url = format!("{}/embed", self.endpoint);
        let _slot = self.acquire();
        let vector = self.with_retries(|| {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let mut resp = self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(body.as_str())
                .map_err(Self::transport)?;
            let (_, text) = Self::read_body(&mut resp)?;
            self.parse(&text, &hash).map_err(Attempt::Fail)
        })?;
        self.cache.lock().expect("cache lock").insert(hash, vector.clone());
        Ok(vector)
    }

    fn parse(&self, text: &str, hash: &str) -> Result<Vec<f32>, EmbedError> {
        let r: EmbedResponse = serde_json::from_str(text).map_err(|e| EmbedError::Malformed(e.to_string()))?;
        let expected = self.config.expected_dim;
        if r.dim != expected || r.embedding.len() != expected {
            let got = if r.dim != expected { r.dim } else { r.embedding.len() };
            return Err(EmbedError::Dimension { expected, got });
        }
        if let Some(echo) = &r.content_hash {
            if echo != hash {
                return Err(EmbedError::Malformed(format!("content hash echo {echo} does not match {hash}")));
            }
        }
        if r.embedding.iter().any(|x| !x.is_finite()) || r.embedding.iter().all(|x| *x == 0.0) {
            return Err(EmbedError::Malformed(format!("degenerate embedding from model {}", r.model)));
        }
        let mut v = r.embedding;
        normalize(&mut v);
        Ok(v)
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.config.expected_dim
    }

    fn embed(&self, image: &Image<f32>) -> Result<Vec<f32>, EmbedError> {
        self.embed_png(&image.encode_png())
    }
}
