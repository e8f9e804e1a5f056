//! The completion backend contract shared by real and mock LLMs.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

/// Per-request failure classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    RateLimited,
    Timeout,
    MalformedResponse,
    TransportFailure,
    /// Strict scripted mock received a prompt no rule matches.
    ExhaustedTranscript,
}

impl ErrorKind {
    /// Whether the gateway should try the request again.
    pub fn is_retryable(self) -> bool {
        matches!(self, Self::RateLimited | Self::Timeout | Self::TransportFailure)
    }
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::RateLimited => "rate limited",
            Self::Timeout => "timed out",
            Self::MalformedResponse => "malformed response",
            Self::TransportFailure => "transport failure",
            Self::ExhaustedTranscript => "exhausted transcript",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind}: {detail}")]
pub struct BackendError {
    pub kind: ErrorKind,
    pub detail: String,
}

impl BackendError {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }
}

impl From<ErrorKind> for BackendError {
    fn from(kind: ErrorKind) -> Self {
        Self { kind, detail: String::new() }
    }
}

/// Text-in, text-out completion.
#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(
        &self,
        prompt_text: &str,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<String, BackendError>;
}
