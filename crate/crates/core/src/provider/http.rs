use std::time::Duration;

use async_trait::async_trait;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use serde_json::{json, Value};

use super::{AttemptError, ChatBackend, ChatRequest, MessageFraming, ProviderConfig, ProviderError};

/// Chat-completions over HTTP: POST `{"model", "messages"[, "temperature"]}`
/// and read `choices[0].message.content`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    api_key: Option<String>,
}

impl HttpBackend {
    /// Resolves the API key from `config.api_key_env`. A key is required
    /// unless the endpoint is on the local machine.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() && !is_local(&config.endpoint_url) {
            return Err(ProviderError::MissingApiKey(config.api_key_env.clone()));
        }
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: &ProviderConfig, api_key: Option<String>) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout())
            .build()
            .map_err(|e| ProviderError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { client, api_key })
    }
}

fn is_local(endpoint: &str) -> bool {
    match reqwest::Url::parse(endpoint) {
        Ok(url) => matches!(url.host_str(), Some("localhost" | "127.0.0.1" | "[::1]" | "::1")),
        Err(_) => false,
    }
}

/// JSON body for one request.
pub fn request_body(request: &ChatRequest, config: &ProviderConfig) -> Value {
    let messages = match config.framing {
        MessageFraming::SingleUser => json!([{"role": "user", "content": request.content}]),
        MessageFraming::SystemThenUser => match request.content.split_once("\n\n") {
            Some((system, user)) => json!([
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ]),
            None => json!([{"role": "user", "content": request.content}]),
        },
    };
    let mut body = json!({"model": config.model_name, "messages": messages});
    if let Some(t) = config.temperature {
        body["temperature"] = json!(t);
    }
    body
}

/// Extracts the first choice's message text from a response body.
pub fn parse_response(body: &str) -> Result<String, AttemptError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| AttemptError::Protocol(format!("response is not JSON: {e}")))?;
    let first = value
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| AttemptError::Protocol("response has no choices".into()))?;
    let message = first
        .get("message")
        .ok_or_else(|| AttemptError::Protocol("first choice has no message".into()))?;
    match message.get("content") {
        Some(Value::String(text)) => Ok(text.clone()),
        Some(Value::Null) | None => Ok(String::new()),
        Some(other) => Err(AttemptError::Protocol(format!("message content is not a string: {other}"))),
    }
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn send(&self, request: &ChatRequest, config: &ProviderConfig) -> Result<String, AttemptError> {
        let mut builder = self.client.post(&config.endpoint_url).json(&request_body(request, config));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = response.status();
        let hint = retry_after(response.headers());
        let body = response.text().await.map_err(|e| AttemptError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(AttemptError::Status {
                code: status.as_u16(),
                body: body.chars().take(500).collect(),
                retry_after: hint,
            });
        }
        parse_response(&body)
    }
}
