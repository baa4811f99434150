//! Uniform access to language models.
//!
//! Every backend exposes the same three operations: free-form generation,
//! log-likelihood of a target continuation, and next-token scores for a set
//! of candidate tokens. Ranking models are written against these contracts
//! only, so swapping an HTTP service for the in-process mock changes nothing
//! above this layer.

mod client;
pub mod marker;
mod mock;
mod openai;
mod retry;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{CallMeta, CallTicket, LlmClient};
pub use mock::{MockBackend, MockBuilder, ScoreTable};
pub use openai::{OpenAiBackend, OpenAiConfig};
pub use retry::{with_retry, RetryPolicy};

/// Speaker of a conversation turn.
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

/// One role-tagged conversation turn.
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

/// Decoding parameters forwarded to [`Backend::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub temperature: f64,
    pub max_new_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    /// Opaque parameters passed to the backend verbatim.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: 256,
            stop_sequences: Vec::new(),
            extra: BTreeMap::new(),
        }
    }
}

impl GenerationOptions {
    /// Builds options from `key=value` pairs. Unknown keys land in `extra`.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self, LlmError> {
        let mut opts = Self::default();
        for (key, value) in kv {
            match key.as_str() {
                "temperature" => {
                    opts.temperature = value.parse().map_err(|_| {
                        LlmError::InvalidInput(format!("temperature: not a number: {value}"))
                    })?
                }
                "max_new_tokens" | "max_tokens" => {
                    opts.max_new_tokens = value.parse().map_err(|_| {
                        LlmError::InvalidInput(format!("{key}: not an integer: {value}"))
                    })?
                }
                "stop" => opts.stop_sequences = value.split('|').map(str::to_owned).collect(),
                _ => {
                    opts.extra.insert(key.clone(), value.clone());
                }
            }
        }
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidInput(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(LlmError::InvalidInput("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Token accounting and wall time of a single backend call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    pub latency_ms: f64,
}

impl GenerationResult {
    pub fn usage(&self) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens,
            generated_tokens: self.generated_tokens,
            latency_ms: self.latency_ms,
        }
    }
}

/// Natural-log probability of a target continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoglikelihoodResult {
    pub total_logprob: f64,
    pub target_token_count: u32,
}

impl LoglikelihoodResult {
    pub fn mean_logprob(&self) -> f64 {
        self.total_logprob / f64::from(self.target_token_count)
    }
}

/// Score of one candidate token at the next decoding position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub value: f64,
    /// `true` for log-probabilities, `false` for raw logits.
    pub is_logprob: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_generate: bool,
    pub supports_loglikelihood: bool,
    pub supports_logits: bool,
}

/// The three backend operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Generate,
    Loglikelihood,
    Logits,
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operation::Generate => "generate",
            Operation::Loglikelihood => "loglikelihood",
            Operation::Logits => "logits",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport {
        message: String,
        status: Option<u16>,
        transient: bool,
    },
    #[error("backend `{backend}` does not support {operation}")]
    CapabilityNotSupported { backend: String, operation: Operation },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cannot resolve candidate token {0:?}")]
    TokenResolution(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl LlmError {
    pub fn transient(message: impl Into<String>, status: Option<u16>) -> Self {
        LlmError::Transport { message: message.into(), status, transient: true }
    }

    pub fn fatal_transport(message: impl Into<String>, status: Option<u16>) -> Self {
        LlmError::Transport { message: message.into(), status, transient: false }
    }

    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transport { transient: true, .. })
    }
}

/// A backend response together with its usage record.
#[derive(Debug, Clone, PartialEq)]
pub struct Response<T> {
    pub value: T,
    pub usage: Usage,
}

/// Raw backend contract. Implementations must tolerate concurrent calls.
///
/// Callers normally go through [`LlmClient`], which validates preconditions,
/// retries transient failures and records traces.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn generate(
        &self,
        messages: &[ChatMessage],
        opts: &GenerationOptions,
    ) -> Result<Response<String>, LlmError>;

    fn loglikelihood(
        &self,
        messages: &[ChatMessage],
        target: &str,
    ) -> Result<Response<LoglikelihoodResult>, LlmError>;

    fn next_token_scores(
        &self,
        messages: &[ChatMessage],
        candidates: &[String],
    ) -> Result<Response<Vec<TokenScore>>, LlmError>;
}

/// Whitespace token count, used by the mock as its tokenizer.
pub(crate) fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
