use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{
    with_retry, Attempt, BackendConfig, BackendError, CompletionBackend, CompletionRequest,
    CompletionResponse, RetryPolicy, TokenBucket,
};

/// Blocking client for a JSON completion endpoint.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
    policy: RetryPolicy,
    limiter: Option<TokenBucket>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    /// Reads the credential from the variable named by `auth_token_env`.
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| BackendError::Config("http backend requires endpoint_url".into()))?;
        let token = match &config.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("credential variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpBackend {
            client,
            endpoint,
            token,
            policy: config.retry_policy(),
            limiter: config.rate_limit_per_min.map(TokenBucket::per_minute),
        })
    }

    fn attempt(&self, req: &CompletionRequest) -> Attempt<CompletionResponse> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let started = Instant::now();
        let mut builder = self.client.post(&self.endpoint).json(req);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let resp = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = resp.status();
        let body = match resp.text() {
            Ok(b) => b,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        if status.is_server_error() || status.as_u16() == 408 || status.as_u16() == 429 {
            return Attempt::Transient(format!("HTTP {status}: {body}"));
        }
        if status.is_client_error() {
            return Attempt::Fatal(BackendError::PermanentRejection {
                status: status.as_u16(),
                body,
            });
        }
        if !status.is_success() {
            return Attempt::Fatal(BackendError::Protocol(format!("unexpected HTTP {status}")));
        }
        let wire: WireResponse = match serde_json::from_str(&body) {
            Ok(w) => w,
            Err(e) => return Attempt::Fatal(BackendError::Protocol(e.to_string())),
        };
        let Some(choice) = wire.choices.into_iter().next() else {
            return Attempt::Fatal(BackendError::Protocol("response has no choices".into()));
        };
        let usage = wire.usage;
        Attempt::Done(CompletionResponse {
            text: choice.text,
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
            latency_ms: started.elapsed().as_millis() as u64,
            from_cache: false,
        })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        req.validate()?;
        with_retry(self.policy, |_| self.attempt(req))
    }
}
