use std::sync::atomic::{AtomicUsize, Ordering};

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse};

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    /// Fail the call as if the server answered with this 4xx status.
    Reject(u16),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockRule {
    pub pattern: String,
    pub reply: MockReply,
}

/// Deterministic backend: the first rule whose pattern is a substring of the
/// prompt decides the reply, otherwise `default` is returned. Counts every
/// call it receives.
#[derive(Debug)]
pub struct ScriptedMock {
    rules: Vec<MockRule>,
    default: String,
    calls: AtomicUsize,
}

impl ScriptedMock {
    pub fn new<P, T>(rules: impl IntoIterator<Item = (P, T)>, default: impl Into<String>) -> Self
    where
        P: Into<String>,
        T: Into<String>,
    {
        ScriptedMock {
            rules: rules
                .into_iter()
                .map(|(p, t)| MockRule {
                    pattern: p.into(),
                    reply: MockReply::Text(t.into()),
                })
                .collect(),
            default: default.into(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Appends a rule that rejects matching prompts with `status`.
    pub fn rejecting(mut self, pattern: impl Into<String>, status: u16) -> Self {
        self.rules.push(MockRule {
            pattern: pattern.into(),
            reply: MockReply::Reject(status),
        });
        self
    }

    /// Prepends a rejecting rule so it takes precedence over text rules.
    pub fn rejecting_first(mut self, pattern: impl Into<String>, status: u16) -> Self {
        self.rules.insert(
            0,
            MockRule {
                pattern: pattern.into(),
                reply: MockReply::Reject(status),
            },
        );
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// The matching rule's reply for `prompt`, or `None` when the default
    /// applies. Does not count as a call.
    pub fn reply_for(&self, prompt: &str) -> Option<&MockReply> {
        self.rules.iter().find(|r| prompt.contains(&r.pattern)).map(|r| &r.reply)
    }
}

impl CompletionBackend for ScriptedMock {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        match self.reply_for(&req.prompt) {
            None => Ok(CompletionResponse::text(self.default.clone())),
            Some(MockReply::Text(t)) => Ok(CompletionResponse::text(t.clone())),
            Some(MockReply::Reject(status)) => Err(BackendError::PermanentRejection {
                status: *status,
                body: "scripted rejection".into(),
            }),
        }
    }
}
