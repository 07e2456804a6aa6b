use std::time::Duration;

use rand::Rng;
use serde::Serialize;
use serde_json::Value;

use super::{Backend, BackendKind, CallContext, ChatMessage, Completion, LlmError, LlmRequest, RateLimiter};

pub const API_KEY_ENV: &str = "TRADERTALK_API_KEY";
pub const API_BASE_ENV: &str = "TRADERTALK_API_BASE";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com";
const COMPLETIONS_PATH: &str = "/v1/chat/completions";

/// Exponential backoff with full jitter: before retry `k` (0-based) sleep a
/// uniform duration in `[0, base_delay * 2^k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn ceiling(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(20))
    }

    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self.ceiling(retry);
        if ceiling.is_zero() {
            return ceiling;
        }
        ceiling.mul_f64(rng.random::<f64>())
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub requests_per_minute: Option<u32>,
}

impl LiveConfig {
    /// Reads the API key and optional base URL from the environment.
    pub fn from_env() -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Config(format!("{API_KEY_ENV} is not set")))?;
        let base_url = std::env::var(API_BASE_ENV)
            .ok()
            .filter(|b| !b.trim().is_empty())
            .unwrap_or_else(|| DEFAULT_API_BASE.to_string());
        Ok(Self::new(base_url, api_key))
    }

    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            requests_per_minute: None,
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}{COMPLETIONS_PATH}", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

/// Chat-completion client over HTTP.
pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
    limiter: Option<RateLimiter>,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let limiter = config.requests_per_minute.map(RateLimiter::per_minute);
        Self { config, agent, limiter }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn attempt(&self, body: &WireRequest<'_>, attempt: u32) -> Result<String, LlmError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let response = self
            .agent
            .post(&self.config.endpoint())
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(body);
        let mut response = response.map_err(|e| LlmError::Transport {
            attempts: attempt,
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| LlmError::Transport {
            attempts: attempt,
            message: e.to_string(),
        })?;
        match status {
            200..=299 => parse_completion(&text),
            429 => Err(LlmError::RateLimited { attempts: attempt }),
            500..=599 => Err(LlmError::Transport {
                attempts: attempt,
                message: format!("HTTP {status}"),
            }),
            _ => Err(LlmError::Http { status, body: text }),
        }
    }
}

/// Pulls the single assistant message out of a chat-completion response.
pub(crate) fn parse_completion(body: &str) -> Result<String, LlmError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| LlmError::MalformedResponse(format!("response is not JSON: {e}")))?;
    let message = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message".into()))?;
    if let Some(role) = message.get("role").and_then(Value::as_str) {
        if role != "assistant" {
            return Err(LlmError::MalformedResponse(format!("message role is {role}")));
        }
    }
    match message.get("content").and_then(Value::as_str) {
        Some(content) if !content.is_empty() => Ok(content.to_string()),
        _ => Err(LlmError::MalformedResponse("assistant message has no content".into())),
    }
}

impl Backend for LiveBackend {
    fn complete(&self, request: &LlmRequest, _ctx: CallContext) -> Result<Completion, LlmError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let policy = self.config.retry;
        let mut rng = rand::rng();
        let mut attempt = 1;
        loop {
            match self.attempt(&body, attempt) {
                Ok(text) => return Ok(Completion { text, attempts: attempt }),
                Err(e) if e.is_transient() && attempt <= policy.max_retries => {
                    std::thread::sleep(policy.delay(attempt - 1, &mut rng));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }
}
