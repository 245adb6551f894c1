#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use saot_core::backend::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse, ScriptedMock};
use saot_core::runner::RunConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn builtin_templates_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("templates")
}

/// Mock that answers by sentence content so each instance gets a stable,
/// instance-specific reply.
pub fn scripted_mock() -> ScriptedMock {
    ScriptedMock::new(
        [
            ("perfection", "The opinion is clearly positive."),
            ("forty minutes", "Waiting that long is negative."),
            ("twenty dishes", "This is a plain fact, so neutral."),
            ("refilling", "Attentive service reads as positive."),
            ("cold and bland", "negative"),
            ("three times", "Frustration implies negative."),
            ("family of four", "Generous portions: positive."),
            ("second floor", "Hard to tell."),
            ("Friendly staff", "POSITIVE"),
            ("put down the fork", "negative"),
        ],
        "neutral",
    )
}

/// Restaurant-only mock config over the ten-instance fixture.
pub fn ten_instance_config(out: &Path, chains: &str) -> RunConfig {
    let text = format!(
        r#"
output_dir = {out:?}
concurrency = 1
chains = {chains}

[[datasets]]
name = "restaurant"
path = {data:?}
expected = "none"

[backends.mock]
kind = "mock"
"#,
        out = out.display().to_string(),
        data = fixture("ten.jsonl").display().to_string(),
    );
    RunConfig::from_toml(&text).unwrap()
}

/// Counts calls and raises `cancel` once `limit` calls have completed.
pub struct Interrupting<B> {
    pub inner: B,
    pub calls: AtomicUsize,
    pub limit: usize,
    pub cancel: Arc<AtomicBool>,
}

impl<B: CompletionBackend> Interrupting<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        Interrupting {
            inner,
            calls: AtomicUsize::new(0),
            limit,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }
}

impl<B: CompletionBackend> CompletionBackend for Interrupting<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let out = self.inner.complete(req);
        if self.calls.fetch_add(1, Ordering::SeqCst) + 1 >= self.limit {
            self.cancel.store(true, Ordering::SeqCst);
        }
        out
    }
}
