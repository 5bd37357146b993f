//! Uniform access to chat-completion backends.
//!
//! [`Gateway::complete`] checks the content-addressed cache first; on a miss
//! it calls the backend under a per-backend in-flight bound and rate limiter,
//! retries transient failures with exponential backoff, and persists the
//! response before returning it.

mod cache;
mod http;
mod limits;
pub mod mock;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, RequestDigest, ResponseCache, CACHE_VERSION};
pub use http::{AnthropicBackend, DedicatedMtBackend, OpenAiBackend};
pub use limits::{Clock, RateLimiter, RetryPolicy, Semaphore, SimulatedClock, SystemClock};
pub use mock::{mock_complete, MockBackend, MOCK_BACKEND_ID};

use crate::imaging::decode_base64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            text: text.into(),
        }
    }
}

/// A model-agnostic chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub backend_id: String,
    pub model_id: String,
    pub messages: Vec<Message>,
    /// Base64 JPEG attached to the last user message.
    pub image_attachment: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Pipeline stage that issued the request (`context`, `fusion`, ...).
    pub request_tag: String,
    /// Routing metadata (language pair, raw segment text). Consumed by the
    /// dedicated MT and mock backends; never sent to chat endpoints.
    pub params: BTreeMap<String, String>,
}

impl BackendRequest {
    pub fn new(request_tag: impl Into<String>, messages: Vec<Message>, max_tokens: u32) -> Self {
        BackendRequest {
            backend_id: String::new(),
            model_id: String::new(),
            messages,
            image_attachment: None,
            max_tokens,
            temperature: 0.0,
            request_tag: request_tag.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_target(mut self, backend_id: &str, model_id: &str) -> Self {
        self.backend_id = backend_id.to_string();
        self.model_id = model_id.to_string();
        self
    }

    pub fn with_image(mut self, image_b64: Option<String>) -> Self {
        self.image_attachment = image_b64;
        self
    }

    pub fn with_param(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Concatenated text of all user messages.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.messages.is_empty() {
            return Err("request has no messages".into());
        }
        if self.max_tokens < 1 {
            return Err("max_tokens must be at least 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(format!("temperature must be finite and >= 0, got {}", self.temperature));
        }
        Ok(())
    }
}

const FIELD_SEP: u8 = 0x1f;
const RECORD_SEP: char = '\u{1e}';

/// `role \n text` per message, joined by the ASCII record separator.
pub fn canonical_messages(messages: &[Message]) -> String {
    messages
        .iter()
        .map(|m| format!("{}\n{}", m.role.as_str(), m.text))
        .collect::<Vec<_>>()
        .join(&RECORD_SEP.to_string())
}

/// SHA-256 of the attachment's raw bytes (or of the string when it is not
/// valid base64).
pub fn image_digest(image_b64: &str) -> String {
    match decode_base64(image_b64) {
        Ok(bytes) => hex::encode(Sha256::digest(&bytes)),
        Err(_) => hex::encode(Sha256::digest(image_b64.as_bytes())),
    }
}

/// Hex SHA-256 over every field that can change the response.
pub fn cache_key(request: &BackendRequest) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
        h.update([FIELD_SEP]);
    };
    field(b"capctl-request-v1");
    field(request.backend_id.as_bytes());
    field(request.model_id.as_bytes());
    field(request.request_tag.as_bytes());
    field(canonical_messages(&request.messages).as_bytes());
    match &request.image_attachment {
        Some(img) => field(image_digest(img).as_bytes()),
        None => field(b"-"),
    }
    field(&request.max_tokens.to_le_bytes());
    // -0.0 and 0.0 hash alike.
    let temperature = if request.temperature == 0.0 {
        0.0
    } else {
        request.temperature
    };
    field(&temperature.to_bits().to_le_bytes());
    for (k, v) in &request.params {
        field(k.as_bytes());
        field(v.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a backend returns for one call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
    pub cache_hit: bool,
    pub cache_key: String,
}

/// Failure of a single backend call.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CallError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("invalid response: {0}")]
    Invalid(String),
}

impl CallError {
    pub fn is_retryable(&self) -> bool {
        match self {
            CallError::Transport(_) | CallError::RateLimited { .. } | CallError::Invalid(_) => true,
            CallError::Status { status, .. } => *status >= 500 || *status == 408,
            CallError::Auth(_) => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> &'static str;

    /// Whether calls leave the process.
    fn is_remote(&self) -> bool {
        true
    }

    fn call(&self, request: &BackendRequest) -> Result<Completion, CallError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no backend named `{0}` is configured")]
    UnknownBackend(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend `{backend_id}` configuration error: {message}")]
    Config { backend_id: String, message: String },
    #[error("backend `{backend_id}` failed after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Backend { backend_id: String, attempts: Vec<String> },
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_config(&self) -> bool {
        matches!(self, GatewayError::UnknownBackend(_) | GatewayError::Config { .. })
    }
}

/// Running totals since the gateway was built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub cache_hits: u64,
    /// Backend invocations, including retries.
    pub backend_calls: u64,
    /// Backend invocations that left the process.
    pub remote_calls: u64,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    backend_calls: AtomicU64,
    remote_calls: AtomicU64,
}

/// JSON-lines log of every gateway call and CLI run.
pub struct AuditLog {
    file: Mutex<File>,
}

#[derive(Serialize)]
struct AuditLine<'a> {
    timestamp_ms: u128,
    stage: &'a str,
    backend_id: &'a str,
    cache_key: &'a str,
    outcome: &'a str,
    latency_ms: u128,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog { file: Mutex::new(file) })
    }

    pub fn record(&self, stage: &str, backend_id: &str, cache_key: &str, outcome: &str, latency: Duration) {
        let line = AuditLine {
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            stage,
            backend_id,
            cache_key,
            outcome,
            latency_ms: latency.as_millis(),
        };
        let Ok(mut text) = serde_json::to_string(&line) else {
            return;
        };
        text.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = file.write_all(text.as_bytes()) {
            tracing::warn!("audit log write failed: {e}");
        }
    }
}

struct Slot {
    backend: Arc<dyn Backend>,
    in_flight: Semaphore,
    rate: Option<RateLimiter>,
}

/// Per-backend limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendLimits {
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
}

impl Default for BackendLimits {
    fn default() -> Self {
        BackendLimits {
            max_in_flight: 4,
            requests_per_minute: None,
        }
    }
}

pub struct GatewayBuilder {
    slots: HashMap<String, Slot>,
    cache: ResponseCache,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    audit: Option<AuditLog>,
}

impl GatewayBuilder {
    pub fn backend(mut self, id: impl Into<String>, backend: Arc<dyn Backend>, limits: BackendLimits) -> Self {
        let rate = limits
            .requests_per_minute
            .filter(|rpm| *rpm > 0)
            .map(|rpm| RateLimiter::new(Duration::from_secs(60) / rpm));
        self.slots.insert(
            id.into(),
            Slot {
                backend,
                in_flight: Semaphore::new(limits.max_in_flight.max(1)),
                rate,
            },
        );
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            slots: self.slots,
            cache: self.cache,
            retry: self.retry,
            clock: self.clock,
            audit: self.audit,
            counters: Counters::default(),
        }
    }
}

pub struct Gateway {
    slots: HashMap<String, Slot>,
    cache: ResponseCache,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    audit: Option<AuditLog>,
    counters: Counters,
}

impl Gateway {
    pub fn builder(cache: ResponseCache) -> GatewayBuilder {
        GatewayBuilder {
            slots: HashMap::new(),
            cache,
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
            audit: None,
        }
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.slots.contains_key(id)
    }

    pub fn backend_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.slots.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.counters.requests.load(Ordering::SeqCst),
            cache_hits: self.counters.cache_hits.load(Ordering::SeqCst),
            backend_calls: self.counters.backend_calls.load(Ordering::SeqCst),
            remote_calls: self.counters.remote_calls.load(Ordering::SeqCst),
        }
    }

    pub fn audit_log(&self) -> Option<&AuditLog> {
        self.audit.as_ref()
    }

    pub fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, GatewayError> {
        request.validate().map_err(GatewayError::InvalidRequest)?;
        let slot = self
            .slots
            .get(&request.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend_id.clone()))?;
        let key = cache_key(request);
        self.counters.requests.fetch_add(1, Ordering::SeqCst);
        let started = self.clock.now();

        if let Some(entry) = self.cache.get(&key)? {
            self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
            self.audit(request, &key, "hit", started);
            return Ok(BackendResponse {
                text: entry.response.text,
                finish_reason: entry.response.finish_reason,
                usage: entry.response.usage,
                cache_hit: true,
                cache_key: key,
            });
        }

        let _permit = slot.in_flight.acquire();
        let mut attempts = Vec::new();
        let completion = loop {
            if let Some(rate) = &slot.rate {
                rate.acquire(self.clock.as_ref());
            }
            self.counters.backend_calls.fetch_add(1, Ordering::SeqCst);
            if slot.backend.is_remote() {
                self.counters.remote_calls.fetch_add(1, Ordering::SeqCst);
            }
            let err = match slot.backend.call(request) {
                Ok(c) if c.finish_reason == FinishReason::Complete && c.text.trim().is_empty() => {
                    CallError::Invalid("empty completion".into())
                }
                Ok(c) if c.finish_reason == FinishReason::Error => {
                    CallError::Invalid(format!("backend reported an error: {}", c.text))
                }
                Ok(c) => break c,
                Err(e) => e,
            };
            attempts.push(format!("attempt {}: {err}", attempts.len() + 1));
            if let CallError::Auth(message) = &err {
                self.audit(request, &key, "error", started);
                return Err(GatewayError::Config {
                    backend_id: request.backend_id.clone(),
                    message: message.clone(),
                });
            }
            if !err.is_retryable() || attempts.len() >= self.retry.max_attempts() {
                self.audit(request, &key, "error", started);
                return Err(GatewayError::Backend {
                    backend_id: request.backend_id.clone(),
                    attempts,
                });
            }
            let mut delay = self.retry.delay(attempts.len() as u32, &key);
            if let CallError::RateLimited {
                retry_after: Some(after),
            } = err
            {
                delay = delay.max(after);
            }
            tracing::debug!(backend = %request.backend_id, ?delay, "retrying after {err}");
            self.clock.sleep(delay);
        };

        let entry = CacheEntry::new(request, &key, &completion);
        self.cache.put(&entry)?;
        self.audit(request, &key, "miss", started);
        Ok(BackendResponse {
            text: completion.text,
            finish_reason: completion.finish_reason,
            usage: completion.usage,
            cache_hit: false,
            cache_key: key,
        })
    }

    fn audit(&self, request: &BackendRequest, key: &str, outcome: &str, started: Duration) {
        if let Some(log) = &self.audit {
            let latency = self.clock.now().saturating_sub(started);
            log.record(&request.request_tag, &request.backend_id, key, outcome, latency);
        }
    }
}
