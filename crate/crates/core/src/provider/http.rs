//! Chat-completion backend for OpenAI-style HTTP endpoints.
//!
//! Credentials and endpoint come from configuration (the CLI reads them from
//! `TODEVAL_API_KEY` / `TODEVAL_API_BASE`). Transient failures (transport
//! errors, HTTP 429/5xx) are retried with bounded exponential backoff; the
//! response text is returned whole, never truncated here.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, CompletionRequest, ProviderError};

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl HttpBackend {
    /// `base` is the API root, e.g. `https://api.openai.com/v1`; the chat
    /// completions path is appended.
    pub fn new(base: &str, api_key: Option<String>, retry: RetryPolicy) -> Result<HttpBackend, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderError::Transport {
                endpoint: base.to_string(),
                message: e.to_string(),
            })?;
        Ok(HttpBackend {
            client,
            endpoint: format!("{}/chat/completions", base.trim_end_matches('/')),
            api_key,
            retry,
        })
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.decoding.temperature_milli as f64 / 1000.0,
            "max_tokens": request.decoding.max_output_tokens,
        });
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| ProviderError::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| ProviderError::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(ProviderError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::MalformedResponse("empty choices array".to_string()))
    }
}

fn is_transient(err: &ProviderError) -> bool {
    match err {
        ProviderError::Transport { .. } => true,
        ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut delay = self.retry.base_delay;
        let mut last_err = None;
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(e) if is_transient(&e) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn name(&self) -> &str {
        "http"
    }
}
