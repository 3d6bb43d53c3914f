//! Uniform chat-completion interface over HTTP backends and a scripted mock.
//!
//! Every agent call goes through [`Gateway::complete`]: the role's template
//! is rendered with a context map, sent to the backend with retry on
//! transient failures, and the resulting [`ChatExchange`] is metered and
//! appended to an in-memory transcript.

pub mod backend;
pub mod extract;
pub mod mock;
pub mod prompt;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use prompt::{AgentRole, TemplateError};

use crate::Real;

/// Speaker of one chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: MessageRole,
    pub text: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            speaker: MessageRole::System,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            speaker: MessageRole::User,
            text: text.into(),
        }
    }
}

/// Connection parameters for one backend model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub model_id: String,
    pub endpoint: String,
    pub temperature: Real,
    pub max_output_tokens: u32,
    pub auth_env_var: Option<String>,
}

impl BackendDescriptor {
    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        BackendDescriptor {
            model_id: model_id.into(),
            endpoint: endpoint.into(),
            temperature: 0.1,
            max_output_tokens: 4096,
            auth_env_var: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::BadDescriptor(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.model_id.is_empty() {
            return Err(GatewayError::BadDescriptor("empty model_id".to_string()));
        }
        Ok(())
    }
}

/// Prompt/completion token counts. `total` always equals their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
    pub total: u64,
}

impl TokenUsage {
    pub fn new(prompt: u64, completion: u64) -> Self {
        TokenUsage {
            prompt,
            completion,
            total: prompt + completion,
        }
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.prompt += other.prompt;
        self.completion += other.completion;
        self.total += other.total;
    }
}

/// `ceil(chars / 4)`: the mock's token estimator, also the fallback when a
/// live backend omits usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// A fully rendered request as handed to a backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: Real,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    /// Character count of all message text, for token estimation.
    pub fn prompt_chars(&self) -> usize {
        self.messages.iter().map(|m| m.text.chars().count()).sum()
    }
}

/// What a backend returned for one request.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub content: String,
    pub usage: Option<TokenUsage>,
    pub truncated: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transient per the retry policy: timeouts, 5xx, and 429.
    pub fn retryable(&self) -> bool {
        match self {
            BackendError::Timeout => true,
            BackendError::Status { code, .. } => *code == 429 || (500..=599).contains(code),
            _ => false,
        }
    }
}

/// Transport abstraction implemented by the HTTP client and the mock.
pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> &str;
    fn send(&self, role: AgentRole, request: &ChatRequest) -> Result<BackendReply, BackendError>;
}

/// One completed agent call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatExchange {
    pub role: AgentRole,
    pub messages: Vec<ChatMessage>,
    pub response: String,
    pub usage: TokenUsage,
    pub retries: u32,
    pub truncated: bool,
}

/// Transcript entry: one line per exchange in the run artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub role: AgentRole,
    pub backend: String,
    pub digest: String,
    pub response: String,
    pub usage: TokenUsage,
    pub retries: u32,
}

/// Exponential backoff: `base * 2^(attempt-1)` between attempts.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms << (attempt - 1))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("invalid backend descriptor: {0}")]
    BadDescriptor(String),
    #[error("backend failed for role {role} after {attempts} attempt(s): {source}")]
    Backend {
        role: AgentRole,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("backend returned an empty response for role {role}")]
    EmptyResponse { role: AgentRole },
}

/// Shared, thread-safe front end for all agent calls on one backend.
pub struct Gateway {
    descriptor: BackendDescriptor,
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    transcript: Mutex<Vec<TranscriptRecord>>,
}

impl Gateway {
    pub fn new(descriptor: BackendDescriptor, backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            descriptor,
            backend,
            retry: RetryPolicy::default(),
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    /// Render the role's template, send it, and meter the result.
    ///
    /// Transient backend failures are retried with exponential backoff;
    /// non-retryable failures and empty responses surface immediately.
    pub fn complete(
        &self,
        role: AgentRole,
        context: &BTreeMap<String, String>,
    ) -> Result<ChatExchange, GatewayError> {
        let messages = prompt::render(role, context)?;
        let request = ChatRequest {
            model_id: self.descriptor.model_id.clone(),
            messages: messages.clone(),
            temperature: self.descriptor.temperature,
            max_output_tokens: self.descriptor.max_output_tokens,
        };

        let mut retries = 0;
        let reply = loop {
            match self.backend.send(role, &request) {
                Ok(reply) => break reply,
                Err(err) => {
                    let attempt = retries + 1;
                    if attempt >= self.retry.max_attempts || !err.retryable() {
                        return Err(GatewayError::Backend {
                            role,
                            attempts: attempt,
                            source: err,
                        });
                    }
                    log::debug!("retrying {role} after attempt {attempt}: {err}");
                    std::thread::sleep(self.retry.delay(attempt));
                    retries += 1;
                }
            }
        };

        if reply.content.is_empty() {
            return Err(GatewayError::EmptyResponse { role });
        }
        let usage = reply.usage.unwrap_or_else(|| {
            TokenUsage::new(
                estimate_tokens_of_messages(&request.messages),
                estimate_tokens(&reply.content),
            )
        });

        let exchange = ChatExchange {
            role,
            messages,
            response: reply.content,
            usage,
            retries,
            truncated: reply.truncated,
        };
        self.transcript.lock().unwrap().push(TranscriptRecord {
            role,
            backend: self.descriptor.model_id.clone(),
            digest: digest_messages(&exchange.messages),
            response: exchange.response.clone(),
            usage,
            retries,
        });
        Ok(exchange)
    }

    pub fn transcript(&self) -> Vec<TranscriptRecord> {
        self.transcript.lock().unwrap().clone()
    }

    /// Number of exchanges recorded for `role`.
    pub fn calls_for(&self, role: AgentRole) -> usize {
        self.transcript
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.role == role)
            .count()
    }

    /// Sum of all per-exchange usages.
    pub fn usage_total(&self) -> TokenUsage {
        let mut total = TokenUsage::default();
        for record in self.transcript.lock().unwrap().iter() {
            total.add(record.usage);
        }
        total
    }
}

fn estimate_tokens_of_messages(messages: &[ChatMessage]) -> u64 {
    estimate_tokens(
        &messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

fn digest_messages(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(match m.speaker {
            MessageRole::System => b"S\x1f",
            MessageRole::User => b"U\x1f",
            MessageRole::Assistant => b"A\x1f",
        });
        hasher.update(m.text.as_bytes());
        hasher.update(b"\x1e");
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
