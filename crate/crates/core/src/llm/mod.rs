//! Chat-completion gateway.
//!
//! A [`Gateway`] wraps one [`Backend`] (live HTTP, scripted, or replay) and
//! records every successful exchange so a batch can be replayed later.

mod live;
mod ratelimit;
mod replay;
mod scripted;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use live::{LiveBackend, LiveConfig, RetryPolicy, API_BASE_ENV, API_KEY_ENV, DEFAULT_API_BASE};
pub use ratelimit::RateLimiter;
pub use replay::ReplayBackend;
pub use scripted::{ScriptFile, ScriptedBackend, ScriptedFailure, ScriptedReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("request has no messages".into()));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.is_empty())
        {
            return Err(LlmError::InvalidRequest(format!("empty {} message", m.role.as_str())));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint_messages(&self.messages)
    }
}

/// Identifies one backend call within a batch. Calls inside a run are
/// numbered from 0 in the order the orchestrator issues them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CallContext {
    pub run_index: usize,
    pub call_index: usize,
}

/// A backend's answer plus how many transport attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

impl Completion {
    pub fn first_try(text: impl Into<String>) -> Self {
        Self { text: text.into(), attempts: 1 }
    }
}

/// One recorded request/response pair, as written to `exchanges.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub request: LlmRequest,
    pub response_text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    #[serde(default)]
    pub run_index: usize,
    #[serde(default)]
    pub call_index: usize,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("replay diverged from the recorded log at entry {index}")]
    ReplayDivergence { index: usize },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LlmError {
    /// Transport failures and throttling are worth retrying; everything else
    /// will fail the same way again.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transport { .. } | LlmError::RateLimited { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::InvalidRequest(_) => "invalid_request",
            LlmError::Transport { .. } => "transport",
            LlmError::RateLimited { .. } => "rate_limited",
            LlmError::MalformedResponse(_) => "malformed_response",
            LlmError::Http { .. } => "http",
            LlmError::ReplayDivergence { .. } => "replay_divergence",
            LlmError::Config(_) => "config",
            LlmError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Scripted,
    Replay,
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &LlmRequest, ctx: CallContext) -> Result<Completion, LlmError>;

    fn kind(&self) -> BackendKind;
}

/// Stable 64-bit prompt fingerprint, rendered as 16 hex digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Renders a message list to the text that gets fingerprinted: for each
/// message, `[role]`, a newline, the content and a newline.
pub fn render_prompt(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push('[');
        out.push_str(m.role.as_str());
        out.push_str("]\n");
        out.push_str(&m.content);
        out.push('\n');
    }
    out
}

/// First 8 bytes of SHA-256 over the exact text. Whitespace-sensitive.
pub fn fingerprint_text(text: &str) -> Fingerprint {
    let digest = Sha256::digest(text.as_bytes());
    Fingerprint(hex::encode(&digest[..8]))
}

pub fn fingerprint_messages(messages: &[ChatMessage]) -> Fingerprint {
    fingerprint_text(&render_prompt(messages))
}

/// Backend wrapper that validates requests and records exchanges.
pub struct Gateway {
    backend: Box<dyn Backend>,
    recorder: Mutex<Vec<LlmExchange>>,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self::from_boxed(Box::new(backend))
    }

    pub fn from_boxed(backend: Box<dyn Backend>) -> Self {
        Self { backend, recorder: Mutex::new(Vec::new()) }
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn complete(&self, request: &LlmRequest, ctx: CallContext) -> Result<String, LlmError> {
        request.validate()?;
        let started = Instant::now();
        let completion = self.backend.complete(request, ctx)?;
        let exchange = LlmExchange {
            request: request.clone(),
            response_text: completion.text.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: completion.attempts,
            run_index: ctx.run_index,
            call_index: ctx.call_index,
        };
        self.recorder.lock().expect("recorder poisoned").push(exchange);
        Ok(completion.text)
    }

    pub fn exchange_count(&self) -> usize {
        self.recorder.lock().expect("recorder poisoned").len()
    }

    /// Recorded exchanges ordered by run, then by call order within the run.
    pub fn exchanges(&self) -> Vec<LlmExchange> {
        let mut all = self.recorder.lock().expect("recorder poisoned").clone();
        all.sort_by_key(|e| (e.run_index, e.call_index));
        all
    }

    /// Removes and returns the exchanges recorded for one run.
    pub fn take_run(&self, run_index: usize) -> Vec<LlmExchange> {
        let mut guard = self.recorder.lock().expect("recorder poisoned");
        let (mine, rest): (Vec<_>, Vec<_>) = guard.drain(..).partition(|e| e.run_index == run_index);
        *guard = rest;
        let mut mine = mine;
        mine.sort_by_key(|e| e.call_index);
        mine
    }
}

pub fn write_exchanges(mut out: impl Write, exchanges: &[LlmExchange]) -> std::io::Result<()> {
    for e in exchanges {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_exchanges(path: &Path) -> Result<Vec<LlmExchange>, LlmError> {
    let io_err = |source| LlmError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let exchange = serde_json::from_str(&line)
            .map_err(|e| LlmError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(exchange);
    }
    Ok(out)
}
