//! Chat-completion access.
//!
//! A [`ChatBackend`] performs exactly one attempt: one HTTP request, or one
//! answer from a test double. [`Provider`] wraps a backend with everything
//! that should behave identically for real and simulated endpoints: the
//! client-side token bucket, the in-flight bound, and retries with
//! exponential backoff on transport failures, 429 and 5xx.

mod http;
mod limit;
pub mod mock;
mod roles;

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::path::DtmfPath;
use crate::prompt::{PromptText, RoutingCondition};

pub use http::HttpBackend;
pub use limit::TokenBucket;
pub use roles::{check_role_separation, PipelineStage, RoleWarning};

pub const DEFAULT_API_KEY_ENV: &str = "IVR_LLM_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const MAX_RETRIES_LIMIT: u32 = 5;
const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// How a prompt is split into chat messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageFraming {
    /// The whole prompt as one user message.
    #[default]
    SingleUser,
    /// Text before the first blank line as a system message, the rest as the
    /// user message.
    SystemThenUser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    /// Omitted from requests when unset, leaving the endpoint's default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub max_retries: u32,
    pub request_timeout_secs: f64,
    pub max_in_flight: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requests_per_second: Option<f64>,
    pub initial_backoff_ms: u64,
    pub framing: MessageFraming,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: DEFAULT_ENDPOINT.to_string(),
            model_name: "gpt-4.1-mini".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            temperature: None,
            max_retries: 3,
            request_timeout_secs: 60.0,
            max_in_flight: 4,
            requests_per_second: None,
            initial_backoff_ms: 500,
            framing: MessageFraming::SingleUser,
        }
    }
}

impl ProviderConfig {
    pub fn with_model(model_name: impl Into<String>) -> Self {
        Self { model_name: model_name.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let fail = |msg: String| Err(ProviderError::Config(msg));
        if self.max_retries > MAX_RETRIES_LIMIT {
            return fail(format!("max_retries {} exceeds {MAX_RETRIES_LIMIT}", self.max_retries));
        }
        if self.max_in_flight == 0 {
            return fail("max_in_flight must be at least 1".into());
        }
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return fail(format!("temperature {t} outside [0, 2]"));
            }
        }
        if let Some(rps) = self.requests_per_second {
            if !(rps.is_finite() && rps > 0.0) {
                return fail(format!("requests_per_second {rps} must be positive"));
            }
        }
        if !(self.request_timeout_secs.is_finite() && self.request_timeout_secs > 0.0) {
            return fail(format!("request_timeout_secs {} must be positive", self.request_timeout_secs));
        }
        if self.model_name.trim().is_empty() {
            return fail("model_name is empty".into());
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }
}

/// Out-of-band description of what a request is for. Never sent over the
/// wire; test doubles use it to answer deterministically.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestPurpose {
    Route {
        intent_id: String,
        query: String,
        condition: RoutingCondition,
    },
    BaseIntents {
        path: DtmfPath,
        endpoint: String,
        count: usize,
        round: usize,
    },
    Paraphrase {
        base_id: String,
        base_text: String,
        path: DtmfPath,
        count: usize,
        round: usize,
    },
    Menu {
        brief: String,
        attempt: usize,
    },
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub content: String,
    pub purpose: RequestPurpose,
}

impl ChatRequest {
    pub fn new(content: impl Into<String>, purpose: RequestPurpose) -> Self {
        Self { content: content.into(), purpose }
    }

    pub fn route(prompt: PromptText, intent_id: impl Into<String>) -> Self {
        Self {
            purpose: RequestPurpose::Route {
                intent_id: intent_id.into(),
                query: prompt.query,
                condition: prompt.condition,
            },
            content: prompt.content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// Text of the first choice, kept even when empty.
    pub raw_text: String,
    pub model_name: String,
    pub latency: Duration,
    pub attempt_count: u32,
}

/// Outcome of a single failed attempt.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttemptError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {code}: {body}")]
    Status {
        code: u16,
        body: String,
        retry_after: Option<Duration>,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl AttemptError {
    pub fn status(code: u16) -> Self {
        Self::Status { code, body: String::new(), retry_after: None }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Status { code, .. } => *code == 429 || (500..600).contains(code),
            Self::Protocol(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("no API key: environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: AttemptError },
    #[error("request rejected: {0}")]
    Rejected(AttemptError),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn send(&self, request: &ChatRequest, config: &ProviderConfig) -> Result<String, AttemptError>;

    /// Simulated backends report zero latency so runs are reproducible.
    fn is_simulated(&self) -> bool {
        false
    }
}

/// A backend plus retry, rate-limit and concurrency policy. Cheap to clone;
/// clones share the limiter and the in-flight permits.
#[derive(Clone)]
pub struct Provider {
    config: Arc<ProviderConfig>,
    backend: Arc<dyn ChatBackend>,
    in_flight: Arc<Semaphore>,
    bucket: Option<Arc<TokenBucket>>,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Provider {
    pub fn new(config: ProviderConfig, backend: Arc<dyn ChatBackend>) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(Self {
            in_flight: Arc::new(Semaphore::new(config.max_in_flight)),
            bucket: config.requests_per_second.map(|rps| Arc::new(TokenBucket::new(rps))),
            config: Arc::new(config),
            backend,
        })
    }

    /// Provider talking to `config.endpoint_url`.
    pub fn http(config: ProviderConfig) -> Result<Self, ProviderError> {
        let backend = HttpBackend::from_config(&config)?;
        Self::new(config, Arc::new(backend))
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if let Some(bucket) = &self.bucket {
                bucket.acquire().await;
            }
            let result = {
                let _permit = self.in_flight.acquire().await.expect("semaphore is never closed");
                self.backend.send(request, &self.config).await
            };
            match result {
                Ok(raw_text) => {
                    let latency = if self.backend.is_simulated() { Duration::ZERO } else { started.elapsed() };
                    return Ok(Completion {
                        raw_text,
                        model_name: self.config.model_name.clone(),
                        latency,
                        attempt_count: attempt,
                    });
                }
                Err(AttemptError::Protocol(msg)) => return Err(ProviderError::Protocol(msg)),
                Err(err) if !err.is_retryable() => return Err(ProviderError::Rejected(err)),
                Err(err) if attempt > self.config.max_retries => {
                    return Err(ProviderError::Exhausted { attempts: attempt, last: err });
                }
                Err(err) => {
                    let delay = self.backoff(attempt, &err);
                    tracing::debug!(attempt, ?delay, error = %err, "retrying chat completion");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }

    fn backoff(&self, attempt: u32, err: &AttemptError) -> Duration {
        let base = Duration::from_millis(self.config.initial_backoff_ms);
        let exp = base.saturating_mul(1u32 << (attempt - 1).min(16));
        let hinted = match err {
            AttemptError::Status { retry_after: Some(d), .. } => exp.max(*d),
            _ => exp,
        };
        hinted.min(MAX_BACKOFF)
    }
}

#[cfg(test)]
mod tests {
    use super::mock::ScriptedBackend;
    use super::*;

    fn fast_config() -> ProviderConfig {
        ProviderConfig { initial_backoff_ms: 1, ..ProviderConfig::default() }
    }

    fn req() -> ChatRequest {
        ChatRequest::new("hello", RequestPurpose::Other)
    }

    #[test]
    fn config_bounds() {
        assert!(ProviderConfig::default().validate().is_ok());
        let bad = [
            ProviderConfig { max_retries: 6, ..ProviderConfig::default() },
            ProviderConfig { max_in_flight: 0, ..ProviderConfig::default() },
            ProviderConfig { temperature: Some(2.5), ..ProviderConfig::default() },
            ProviderConfig { temperature: Some(-0.1), ..ProviderConfig::default() },
            ProviderConfig { requests_per_second: Some(0.0), ..ProviderConfig::default() },
        ];
        for config in bad {
            assert!(config.validate().is_err(), "{config:?}");
        }
        assert!(ProviderConfig { temperature: Some(2.0), ..ProviderConfig::default() }.validate().is_ok());
    }

    #[test]
    fn config_json_defaults() {
        let config: ProviderConfig = serde_json::from_str(r#"{"model_name": "gpt-4o-mini"}"#).unwrap();
        assert_eq!(config.model_name, "gpt-4o-mini");
        assert_eq!(config.api_key_env, DEFAULT_API_KEY_ENV);
        assert_eq!(config.temperature, None);
    }

    #[tokio::test]
    async fn scripted_sequence_in_order() {
        let backend = ScriptedBackend::sequence(["1-1", "garbage"]);
        let provider = Provider::new(fast_config(), Arc::new(backend)).unwrap();
        assert_eq!(provider.complete(&req()).await.unwrap().raw_text, "1-1");
        assert_eq!(provider.complete(&req()).await.unwrap().raw_text, "garbage");
    }

    #[tokio::test]
    async fn retries_429_then_succeeds() {
        let backend = ScriptedBackend::from_results(vec![
            Err(AttemptError::status(429)),
            Err(AttemptError::status(429)),
            Ok("2-1-9".to_string()),
        ]);
        let config = ProviderConfig { max_retries: 3, ..fast_config() };
        let provider = Provider::new(config, Arc::new(backend)).unwrap();
        let completion = provider.complete(&req()).await.unwrap();
        assert_eq!(completion.attempt_count, 3);
        assert_eq!(completion.raw_text, "2-1-9");
        assert_eq!(completion.latency, Duration::ZERO);
    }

    #[tokio::test]
    async fn exhausts_retries() {
        let backend = ScriptedBackend::from_results(vec![
            Err(AttemptError::status(503)),
            Err(AttemptError::Transport("reset".into())),
            Ok("never".into()),
        ]);
        let config = ProviderConfig { max_retries: 1, ..fast_config() };
        let provider = Provider::new(config, Arc::new(backend)).unwrap();
        match provider.complete(&req()).await {
            Err(ProviderError::Exhausted { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn no_retry_on_client_error_or_content() {
        let backend = Arc::new(ScriptedBackend::from_results(vec![Err(AttemptError::status(400)), Ok("x".into())]));
        let provider = Provider::new(fast_config(), backend.clone()).unwrap();
        assert!(matches!(provider.complete(&req()).await, Err(ProviderError::Rejected(_))));
        // a well-formed but useless answer is returned as is
        let completion = provider.complete(&req()).await.unwrap();
        assert_eq!((completion.raw_text.as_str(), completion.attempt_count), ("x", 1));
        assert_eq!(backend.calls(), 2);
    }

    #[tokio::test]
    async fn protocol_errors_are_not_retried() {
        let backend = Arc::new(ScriptedBackend::from_results(vec![Err(AttemptError::Protocol("bad".into()))]));
        let provider = Provider::new(fast_config(), backend.clone()).unwrap();
        assert!(matches!(provider.complete(&req()).await, Err(ProviderError::Protocol(_))));
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn backoff_grows_and_honors_retry_after() {
        let provider = Provider::new(
            ProviderConfig { initial_backoff_ms: 100, ..ProviderConfig::default() },
            Arc::new(ScriptedBackend::sequence(Vec::<String>::new())),
        )
        .unwrap();
        let plain = AttemptError::status(500);
        assert_eq!(provider.backoff(1, &plain), Duration::from_millis(100));
        assert_eq!(provider.backoff(3, &plain), Duration::from_millis(400));
        let hinted = AttemptError::Status { code: 429, body: String::new(), retry_after: Some(Duration::from_secs(2)) };
        assert_eq!(provider.backoff(1, &hinted), Duration::from_secs(2));
        assert_eq!(provider.backoff(20, &plain), MAX_BACKOFF);
    }
}
