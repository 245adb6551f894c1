//! Text-completion backends.
//!
//! Every backend implements [`CompletionBackend`]. Three implementations
//! ship here: [`HttpBackend`] for remote completion endpoints,
//! [`ScriptedMock`] as a deterministic test double, and [`CachedBackend`],
//! which wraps any other backend with the on-disk [`ResponseCache`].
//!
//! # Wire format
//!
//! `HttpBackend` POSTs one JSON document per request:
//!
//! ```json
//! {"model": "m", "prompt": "...", "max_tokens": 256, "temperature": 0.0, "stop": ["\n\n"]}
//! ```
//!
//! with `Authorization: Bearer <token>` when a credential variable is
//! configured (`stop` is omitted when unset). The reply must contain
//! `choices[0].text`; `usage.prompt_tokens` / `usage.completion_tokens` are
//! read when present.

mod cache;
mod http;
mod mock;
mod rate_limit;
mod retry;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{CacheError, CacheKey, CacheStats, CachedBackend, ResponseCache};
pub use http::HttpBackend;
pub use mock::{MockReply, MockRule, ScriptedMock};
pub use rate_limit::TokenBucket;
pub use retry::{with_retry, Attempt, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be a finite non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
    /// Always 0 when `from_cache` is set.
    pub latency_ms: u64,
    #[serde(default)]
    pub from_cache: bool,
}

impl CompletionResponse {
    pub fn text(text: impl Into<String>) -> Self {
        CompletionResponse {
            text: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
            latency_ms: 0,
            from_cache: false,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("gave up after {attempts} attempts: {last}")]
    TransientExhausted { attempts: u32, last: String },
    #[error("request rejected with HTTP {status}: {body}")]
    PermanentRejection { status: u16, body: String },
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// A text-completion service. Implementations must be shareable across
/// threads.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

/// Everything in a [`CompletionRequest`] except the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Option<Vec<String>>,
}

impl DecodingParams {
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            prompt: prompt.into(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            stop: self.stop.clone(),
        }
    }
}

impl Default for DecodingParams {
    /// Greedy decoding with room for a short reasoning paragraph.
    fn default() -> Self {
        DecodingParams {
            model: "default".into(),
            max_tokens: 256,
            temperature: 0.0,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Scripted rules for a mock backend declared in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MockSpec {
    /// Ordered `(substring, response)` pairs; first match wins.
    #[serde(default)]
    pub rules: Vec<(String, String)>,
    #[serde(default = "default_mock_text")]
    pub default: String,
}

fn default_mock_text() -> String {
    "neutral".into()
}

/// Declarative backend description. Credentials never live here, only the
/// name of the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub rate_limit_per_min: Option<u32>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub stop: Option<Vec<String>>,
    #[serde(default)]
    pub mock: Option<MockSpec>,
}

fn default_model() -> String {
    "default".into()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_max_tokens() -> u32 {
    256
}

impl BackendConfig {
    pub fn mock(spec: MockSpec) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            model: "mock".into(),
            endpoint_url: None,
            auth_token_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            rate_limit_per_min: None,
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            stop: None,
            mock: Some(spec),
        }
    }

    pub fn http(endpoint_url: impl Into<String>, model: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            model: model.into(),
            endpoint_url: Some(endpoint_url.into()),
            mock: None,
            ..BackendConfig::mock(MockSpec::default())
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let positive = [
            ("timeout_ms", self.timeout_ms),
            ("backoff_base_ms", self.backoff_base_ms),
            ("max_tokens", self.max_tokens as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(BackendError::Config(format!("{name} must be positive")));
            }
        }
        if self.rate_limit_per_min == Some(0) {
            return Err(BackendError::Config("rate_limit_per_min must be positive".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(BackendError::Config("temperature must be non-negative".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint_url.as_deref().map_or(true, str::is_empty) => {
                Err(BackendError::Config("http backend requires endpoint_url".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn decoding(&self) -> DecodingParams {
        DecodingParams {
            model: self.model.clone(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            stop: self.stop.clone(),
        }
    }

    /// Builds a request for `prompt` using this backend's decoding settings.
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        self.decoding().request(prompt)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base_ms: self.backoff_base_ms,
        }
    }
}

/// Instantiates the backend described by `config`.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn CompletionBackend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Http => Arc::new(HttpBackend::new(config)?),
        BackendKind::Mock => {
            let spec = config.mock.clone().unwrap_or_default();
            Arc::new(ScriptedMock::new(spec.rules, spec.default))
        }
    })
}

/// One-shot completion through a freshly built backend.
pub fn complete(config: &BackendConfig, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
    build_backend(config)?.complete(req)
}

/// Completion through the cache: hits return the stored response without a
/// backend call, misses call `config`'s backend and persist the result.
pub fn cached_complete(
    cache: &ResponseCache,
    config: &BackendConfig,
    req: &CompletionRequest,
) -> Result<CompletionResponse, BackendError> {
    if let Some(hit) = cache.get(req)? {
        return Ok(hit);
    }
    let response = complete(config, req)?;
    Ok(cache.put(req, &response)?)
}
