use std::time::Duration;

use super::BackendError;

/// Exponential backoff: retry `k` (0-based) waits `backoff_base_ms * 2^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

const MAX_BACKOFF_MS: u64 = 60_000;

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(MAX_BACKOFF_MS))
    }
}

/// Outcome of a single attempt as seen by [`with_retry`].
pub enum Attempt<T> {
    Done(T),
    /// Worth retrying (timeouts, connection failures, 5xx).
    Transient(String),
    /// Fails immediately without further attempts.
    Fatal(BackendError),
}

/// Runs `op` until it succeeds, fails fatally, or `max_retries` retries
/// have been spent.
pub fn with_retry<T>(policy: RetryPolicy, mut op: impl FnMut(u32) -> Attempt<T>) -> Result<T, BackendError> {
    let mut attempt = 0u32;
    loop {
        match op(attempt) {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Transient(msg) => {
                if attempt >= policy.max_retries {
                    return Err(BackendError::TransientExhausted {
                        attempts: attempt + 1,
                        last: msg,
                    });
                }
                let delay = policy.delay(attempt);
                tracing::debug!(attempt, ?delay, error = %msg, "retrying completion request");
                std::thread::sleep(delay);
                attempt += 1;
            }
        }
    }
}
