//! Offline completion backends: an echo backend and a scripted transcript.
//!
//! Transcript files are JSON:
//!
//! ```json
//! {
//!   "strict": false,
//!   "default": {"text": "∅"},
//!   "rules": [
//!     {"match": {"prefix": "Q:"}, "reply": {"text": "A"}},
//!     {"match": {"contains": "#2"}, "reply": {"error": "rate_limited"}, "times": 1},
//!     {"match": "any", "reply": "echo", "delay_ms": 5}
//!   ]
//! }
//! ```
//!
//! A prompt is answered by the first rule that matches and still has uses
//! left. Rules without `times` never run out.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, CompletionBackend, ErrorKind};

/// Replies with the prompt itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

#[async_trait]
impl CompletionBackend for EchoBackend {
    async fn complete(&self, prompt_text: &str, _temperature: f64, _max_tokens: u32) -> Result<String, BackendError> {
        Ok(prompt_text.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Any,
    Prefix(String),
    Contains(String),
    Exact(String),
}

impl Matcher {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Self::Any => true,
            Self::Prefix(p) => prompt.starts_with(p.as_str()),
            Self::Contains(p) => prompt.contains(p.as_str()),
            Self::Exact(p) => prompt == p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Text(String),
    Echo,
    Error(ErrorKind),
    /// Never answers; exercises the gateway timeout.
    Hang,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub reply: Reply,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub delay_ms: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl Rule {
    pub fn new(matcher: Matcher, reply: Reply) -> Self {
        Self { matcher, reply, times: None, delay_ms: 0 }
    }

    pub fn times(mut self, n: u32) -> Self {
        self.times = Some(n);
        self
    }

    pub fn delay_ms(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub default: Option<Reply>,
    /// Unmatched prompts fail with `ExhaustedTranscript` instead of getting
    /// the default.
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("cannot read transcript {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid transcript {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("transcript has no rules and no default reply")]
    Empty,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TranscriptError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| TranscriptError::Parse { path: path.display().to_string(), source })
    }
}

/// Deterministic backend driven by a [`Transcript`].
///
/// Also records how many calls were in progress at once, so tests can check
/// the gateway's concurrency bound from the backend's side.
#[derive(Debug)]
pub struct ScriptedMock {
    rules: Vec<Rule>,
    default: Reply,
    strict: bool,
    remaining: Mutex<Vec<Option<u32>>>,
    prompts: Mutex<Vec<String>>,
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl ScriptedMock {
    pub fn new(transcript: Transcript) -> Result<Self, TranscriptError> {
        if transcript.rules.is_empty() && transcript.default.is_none() {
            return Err(TranscriptError::Empty);
        }
        Ok(Self {
            remaining: Mutex::new(transcript.rules.iter().map(|r| r.times).collect()),
            default: transcript.default.unwrap_or(Reply::Text(String::new())),
            strict: transcript.strict,
            rules: transcript.rules,
            prompts: Mutex::new(Vec::new()),
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        })
    }

    /// Non-strict mock; unmatched prompts get an empty reply.
    pub fn from_rules(rules: Vec<Rule>) -> Self {
        Self::new(Transcript { rules, default: Some(Reply::Text(String::new())), strict: false })
            .expect("default reply present")
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        Self::new(Transcript::load(path)?)
    }

    /// Most calls observed in progress at the same time.
    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Every prompt received, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().unwrap().len()
    }

    fn pick(&self, prompt: &str) -> Option<(Reply, u64)> {
        let mut remaining = self.remaining.lock().unwrap();
        for (rule, left) in self.rules.iter().zip(remaining.iter_mut()) {
            if left == &Some(0) || !rule.matcher.matches(prompt) {
                continue;
            }
            if let Some(n) = left {
                *n -= 1;
            }
            return Some((rule.reply.clone(), rule.delay_ms));
        }
        if self.strict {
            None
        } else {
            Some((self.default.clone(), 0))
        }
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl CompletionBackend for ScriptedMock {
    async fn complete(&self, prompt_text: &str, _temperature: f64, _max_tokens: u32) -> Result<String, BackendError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        let _guard = InFlight(&self.current);
        self.prompts.lock().unwrap().push(prompt_text.to_owned());

        let Some((reply, delay_ms)) = self.pick(prompt_text) else {
            return Err(BackendError::new(ErrorKind::ExhaustedTranscript, "no rule matches the prompt"));
        };
        if delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(delay_ms)).await;
        }
        match reply {
            Reply::Text(text) => Ok(text),
            Reply::Echo => Ok(prompt_text.to_owned()),
            Reply::Error(kind) => Err(BackendError::new(kind, "scripted")),
            Reply::Hang => std::future::pending().await,
        }
    }
}
