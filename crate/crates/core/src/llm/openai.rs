//! Client for OpenAI-compatible `/chat/completions` endpoints.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::marker;
use super::{
    Backend, Capabilities, ChatMessage, GenerationOptions, LlmError, LoglikelihoodResult,
    Operation, Response, TokenScore, Usage,
};
use crate::util::Semaphore;

pub const API_KEY_ENV: &str = "LLM4RANKING_API_KEY";

/// Gap below the weakest returned alternative at which a candidate token
/// missing from `top_logprobs` is scored.
pub const MISSING_TOKEN_GAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Whether the service returns per-token `top_logprobs`.
    pub logprobs: bool,
    pub top_logprobs: u32,
    pub max_concurrency: usize,
    pub timeout: Duration,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key: None,
            logprobs: true,
            top_logprobs: 20,
            max_concurrency: 8,
            timeout: Duration::from_secs(120),
        }
    }
}

impl OpenAiConfig {
    /// Reads `model`, `api_key`, `base_url`, `logprobs`, `top_logprobs`,
    /// `max_concurrency` and `timeout` (seconds). A missing `api_key` falls
    /// back to the `LLM4RANKING_API_KEY` environment variable.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self, LlmError> {
        let mut cfg = Self::default();
        let bad = |k: &str, v: &str| LlmError::InvalidInput(format!("model_args {k}={v}"));
        for (k, v) in kv {
            match k.as_str() {
                "model" => cfg.model = v.clone(),
                "api_key" => cfg.api_key = Some(v.clone()),
                "base_url" => cfg.base_url = v.trim_end_matches('/').to_owned(),
                "logprobs" => cfg.logprobs = v.parse().map_err(|_| bad(k, v))?,
                "top_logprobs" => cfg.top_logprobs = v.parse().map_err(|_| bad(k, v))?,
                "max_concurrency" => cfg.max_concurrency = v.parse().map_err(|_| bad(k, v))?,
                "timeout" => {
                    cfg.timeout = Duration::from_secs_f64(v.parse().map_err(|_| bad(k, v))?)
                }
                other => {
                    return Err(LlmError::InvalidInput(format!("unknown model_args key `{other}`")))
                }
            }
        }
        if cfg.api_key.is_none() {
            cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        Ok(cfg)
    }
}

pub struct OpenAiBackend {
    cfg: OpenAiConfig,
    http: Client,
    in_flight: Semaphore,
}

impl std::fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiBackend")
            .field("base_url", &self.cfg.base_url)
            .field("model", &self.cfg.model)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ApiMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ApiMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<PositionLogprobs>>,
}

#[derive(Deserialize)]
struct PositionLogprobs {
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

impl OpenAiBackend {
    pub fn new(cfg: OpenAiConfig) -> Result<Self, LlmError> {
        let http = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| LlmError::fatal_transport(e.to_string(), None))?;
        let in_flight = Semaphore::new(cfg.max_concurrency);
        Ok(Self { cfg, http, in_flight })
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.cfg
    }

    fn request_body(&self, messages: &[ChatMessage], opts: &GenerationOptions) -> Value {
        let msgs: Vec<Value> = marker::strip(messages)
            .into_iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = Map::new();
        body.insert("model".into(), json!(self.cfg.model));
        body.insert("messages".into(), Value::Array(msgs));
        body.insert("temperature".into(), json!(opts.temperature));
        body.insert("max_tokens".into(), json!(opts.max_new_tokens));
        if !opts.stop_sequences.is_empty() {
            body.insert("stop".into(), json!(opts.stop_sequences));
        }
        for (k, v) in &opts.extra {
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone()));
            body.insert(k.clone(), value);
        }
        Value::Object(body)
    }

    fn post(&self, body: &Value) -> Result<(Completion, f64), LlmError> {
        let _permit = self.in_flight.acquire();
        let url = format!("{}/chat/completions", self.cfg.base_url);
        let started = Instant::now();
        let mut req = self.http.post(&url).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            let transient = e.is_timeout() || e.is_connect();
            LlmError::Transport { message: e.to_string(), status: None, transient }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::transient(e.to_string(), None))?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        if !status.is_success() {
            let code = status.as_u16();
            let transient = code == 429 || status.is_server_error();
            let snippet: String = text.chars().take(300).collect();
            return Err(LlmError::Transport { message: snippet, status: Some(code), transient });
        }
        let completion: Completion = serde_json::from_str(&text)
            .map_err(|e| LlmError::MalformedResponse(format!("{e}: {text:.200}")))?;
        if completion.choices.is_empty() {
            return Err(LlmError::MalformedResponse("response has no choices".into()));
        }
        Ok((completion, latency_ms))
    }

    fn usage_of(c: &Completion, latency_ms: f64) -> Usage {
        let (p, g) = c.usage.as_ref().map_or((0, 0), |u| (u.prompt_tokens, u.completion_tokens));
        Usage { prompt_tokens: p, generated_tokens: g, latency_ms }
    }
}

/// Resolves each candidate against a top-logprobs list.
///
/// A candidate is matched by its first whitespace-delimited word against the
/// trimmed returned tokens (exact match first, then case-insensitive); the
/// best matching logprob wins. Unmatched candidates get
/// `min(returned) - MISSING_TOKEN_GAP`.
pub(crate) fn resolve_token_scores(
    top: &[(String, f64)],
    candidates: &[String],
) -> Result<Vec<TokenScore>, LlmError> {
    if top.is_empty() {
        return Err(LlmError::MalformedResponse("empty top_logprobs".into()));
    }
    let floor = top.iter().map(|(_, lp)| *lp).fold(f64::INFINITY, f64::min) - MISSING_TOKEN_GAP;
    candidates
        .iter()
        .map(|c| {
            let key = c
                .split_whitespace()
                .next()
                .ok_or_else(|| LlmError::TokenResolution(c.clone()))?;
            let best = |pred: &dyn Fn(&str) -> bool| {
                top.iter()
                    .filter(|(t, _)| pred(t.trim()))
                    .map(|(_, lp)| *lp)
                    .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))))
            };
            let value = best(&|t| t == key)
                .or_else(|| best(&|t| t.eq_ignore_ascii_case(key)))
                .unwrap_or(floor);
            Ok(TokenScore { token: c.clone(), value, is_logprob: true })
        })
        .collect()
}

impl Backend for OpenAiBackend {
    fn name(&self) -> &str {
        "openai_compatible"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_generate: true,
            supports_loglikelihood: false,
            supports_logits: self.cfg.logprobs,
        }
    }

    fn generate(
        &self,
        messages: &[ChatMessage],
        opts: &GenerationOptions,
    ) -> Result<Response<String>, LlmError> {
        let (completion, latency_ms) = self.post(&self.request_body(messages, opts))?;
        let usage = Self::usage_of(&completion, latency_ms);
        let text = completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("choice has no message content".into()))?;
        Ok(Response { value: text, usage })
    }

    fn loglikelihood(
        &self,
        _messages: &[ChatMessage],
        _target: &str,
    ) -> Result<Response<LoglikelihoodResult>, LlmError> {
        Err(LlmError::CapabilityNotSupported {
            backend: self.name().to_owned(),
            operation: Operation::Loglikelihood,
        })
    }

    fn next_token_scores(
        &self,
        messages: &[ChatMessage],
        candidates: &[String],
    ) -> Result<Response<Vec<TokenScore>>, LlmError> {
        if !self.cfg.logprobs {
            return Err(LlmError::CapabilityNotSupported {
                backend: self.name().to_owned(),
                operation: Operation::Logits,
            });
        }
        let opts = GenerationOptions { temperature: 0.0, max_new_tokens: 1, ..Default::default() };
        let mut body = self.request_body(messages, &opts);
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(self.cfg.top_logprobs);
        let (completion, latency_ms) = self.post(&body)?;
        let usage = Self::usage_of(&completion, latency_ms);
        let first = completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .and_then(|l| l.content)
            .and_then(|c| c.into_iter().next())
            .ok_or_else(|| LlmError::CapabilityNotSupported {
                backend: self.name().to_owned(),
                operation: Operation::Logits,
            })?;
        let top: Vec<(String, f64)> =
            first.top_logprobs.into_iter().map(|t| (t.token, t.logprob)).collect();
        Ok(Response { value: resolve_token_scores(&top, candidates)?, usage })
    }
}
