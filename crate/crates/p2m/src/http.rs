//! OpenAI-compatible chat-completions adapter.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, CompletionBackend, ErrorKind};

pub const ENV_BASE_URL: &str = "P2M_LLM_BASE_URL";
pub const ENV_MODEL: &str = "P2M_LLM_MODEL";
pub const ENV_API_KEY: &str = "P2M_LLM_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Debug, thiserror::Error)]
#[error("environment variable {0} is not set")]
pub struct MissingEnv(&'static str);

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
        }
    }

    pub fn from_env() -> Result<Self, MissingEnv> {
        let base = std::env::var(ENV_BASE_URL).map_err(|_| MissingEnv(ENV_BASE_URL))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| MissingEnv(ENV_MODEL))?;
        Ok(Self::new(&base, model, std::env::var(ENV_API_KEY).ok()))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn classify(status: reqwest::StatusCode) -> ErrorKind {
    match status.as_u16() {
        429 => ErrorKind::RateLimited,
        408 | 504 => ErrorKind::Timeout,
        500..=599 => ErrorKind::TransportFailure,
        _ => ErrorKind::MalformedResponse,
    }
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    async fn complete(&self, prompt_text: &str, temperature: f64, max_output_tokens: u32) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [Message { role: "user", content: prompt_text }],
            temperature,
            max_tokens: max_output_tokens,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            let kind = if e.is_timeout() { ErrorKind::Timeout } else { ErrorKind::TransportFailure };
            BackendError::new(kind, e.to_string())
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(BackendError::new(classify(status), format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .await
            .map_err(|e| BackendError::new(ErrorKind::MalformedResponse, e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::new(ErrorKind::MalformedResponse, "no choices in reply"))
    }
}
