use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("client configuration: {0}")]
    Config(String),
}

impl ChatError {
    /// Transport failures, throttling and server errors are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            ChatError::Transport(_) => true,
            ChatError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// Chat-completion endpoint used for corpus synthesis.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError>;
}

impl<T: ChatClient + ?Sized> ChatClient for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).complete(request)
    }
}

/// Adapts a closure into a client; handy for scripted tests.
pub struct FnClient<F>(pub F);

impl<F> ChatClient for FnClient<F>
where
    F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (self.0)(request)
    }
}

/// OpenAI-style `/chat/completions` client configured from
/// `ENS_LLM_ENDPOINT` and `ENS_LLM_API_KEY`.
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client"),
        }
    }

    pub fn from_env() -> Result<Self, ChatError> {
        let endpoint = std::env::var("ENS_LLM_ENDPOINT")
            .map_err(|_| ChatError::Config("ENS_LLM_ENDPOINT is not set".into()))?;
        let api_key = std::env::var("ENS_LLM_API_KEY").ok();
        let model = std::env::var("ENS_LLM_MODEL").unwrap_or_else(|_| "default".into());
        Ok(Self::new(endpoint, api_key, model))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "top_p": request.top_p,
        });
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ChatError::Status {
                code: status.as_u16(),
                body: resp.text().unwrap_or_default(),
            });
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| ChatError::Malformed(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ChatError::Malformed("missing choices[0].message.content".into()))
    }
}

/// Retries transient failures with exponential backoff.
pub struct RetryingClient<C> {
    inner: C,
    attempts: u32,
    base_delay: Duration,
}

impl<C: ChatClient> RetryingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }

    pub fn with_policy(inner: C, attempts: u32, base_delay: Duration) -> Self {
        Self {
            inner,
            attempts: attempts.max(1),
            base_delay,
        }
    }
}

impl<C: ChatClient> ChatClient for RetryingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let mut attempt = 0;
        loop {
            match self.inner.complete(request) {
                Err(e) if e.is_transient() && attempt + 1 < self.attempts => {
                    tracing::warn!(attempt, error = %e, "chat request failed, retrying");
                    std::thread::sleep(self.base_delay * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
