//! Provider-agnostic chat completion with a content-addressed response cache.
//!
//! Every completion goes through [`Provider::complete`], which consults the
//! cache first and only then the configured backend (HTTP endpoint or mock
//! script). With the mock backend an entire run is a pure function of its
//! inputs.

mod cache;
mod http;
mod mock;

pub use cache::{CacheStats, ResponseCache};
pub use http::{HttpBackend, RetryPolicy};
pub use mock::{prompt_digest, MockBackend, MockScript, ScriptEntry, ScriptFile};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use sha2::{Digest, Sha256};

/// Decoding parameters. Temperature is fixed-point (milli-units) so the
/// cache key never depends on float formatting; the default is greedy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Decoding {
    pub temperature_milli: u32,
    pub max_output_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature_milli: 0,
            max_output_tokens: 512,
        }
    }
}

/// One chat-completion request: a fully rendered prompt plus decoding knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub decoding: Decoding,
}

/// Content address of a request: SHA-256 over model id, decoding parameters,
/// prompt-format version and prompt bytes. Any field change changes the key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn compute(request: &CompletionRequest, format_version: &str) -> CacheKey {
        let mut hasher = Sha256::new();
        hasher.update(request.model_id.as_bytes());
        hasher.update(b"\n");
        hasher.update(request.decoding.temperature_milli.to_string().as_bytes());
        hasher.update(b"\n");
        hasher.update(request.decoding.max_output_tokens.to_string().as_bytes());
        hasher.update(b"\n");
        hasher.update(format_version.as_bytes());
        hasher.update(b"\n");
        hasher.update(request.prompt.as_bytes());
        CacheKey(hex::encode(hasher.finalize()))
    }

    pub fn digest(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend response missing completion text: {0}")]
    MalformedResponse(String),
    #[error("strict mock has no entry for digest {digest}; prompt was:\n{prompt}")]
    ScriptMiss { digest: String, prompt: String },
    #[error("cache error at {path}: {message}")]
    Cache { path: String, message: String },
    #[error("provider not configured: {0}")]
    NotConfigured(String),
}

/// A completion backend. Implementations must be callable concurrently.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
    fn name(&self) -> &str;
}

/// Cache-fronted completion handle with per-run counters.
pub struct Provider {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    format_version: String,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
}

impl Provider {
    pub fn new(backend: Arc<dyn Backend>, cache: Option<ResponseCache>, format_version: &str) -> Provider {
        Provider {
            backend,
            cache,
            format_version: format_version.to_string(),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            cache_misses: AtomicU64::new(0),
        }
    }

    /// Complete a request: cache hit returns without contacting the backend;
    /// a miss calls the backend and persists the response atomically.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let key = CacheKey::compute(request, &self.format_version);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(entry);
            }
            self.cache_misses.fetch_add(1, Ordering::Relaxed);
        }
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let response = self.backend.complete(request)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &request.model_id, &response)?;
        }
        Ok(response)
    }

    /// Number of backend calls made through this handle.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Cache statistics: on-disk entries and bytes, plus this handle's
    /// hit/miss counters. All zeros when no cache is configured.
    pub fn cache_stats(&self) -> Result<CacheStats, ProviderError> {
        let mut stats = match &self.cache {
            Some(cache) => cache.stats()?,
            None => CacheStats::default(),
        };
        stats.hits = self.cache_hits.load(Ordering::Relaxed);
        stats.misses = self.cache_misses.load(Ordering::Relaxed);
        Ok(stats)
    }
}
