use std::sync::Arc;

use super::{
    with_retry, Backend, Capabilities, ChatMessage, GenerationOptions, GenerationResult,
    LlmError, LoglikelihoodResult, Operation, Response, RetryPolicy, TokenScore, Usage,
};
use crate::ranking::Paradigm;
use crate::trace::{TraceRecord, TraceSink};

/// Annotations a model attaches to a call for the trace.
#[derive(Debug, Clone, Default)]
pub struct CallMeta {
    pub template: Option<String>,
    pub window_size: Option<usize>,
}

impl CallMeta {
    pub fn template(name: impl Into<String>) -> Self {
        Self { template: Some(name.into()), window_size: None }
    }

    pub fn with_window(mut self, w: usize) -> Self {
        self.window_size = Some(w);
        self
    }
}

/// Handle to the trace record of a completed call.
#[derive(Debug, Clone)]
pub struct CallTicket {
    sink: Option<Arc<TraceSink>>,
    slot: Option<usize>,
    pub attempts: u32,
}

impl CallTicket {
    /// Flags the call's output as having needed repair during parsing.
    pub fn mark_repaired(&self) {
        if let (Some(sink), Some(slot)) = (&self.sink, self.slot) {
            sink.mark_repaired(slot);
        }
    }
}

/// Backend handle that checks preconditions, retries transient failures and
/// writes one trace record per call.
///
/// Cloning is cheap; [`LlmClient::scoped`] derives a client that tags its
/// records with a query id and paradigm.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    sink: Option<Arc<TraceSink>>,
    query_id: String,
    paradigm: Paradigm,
    record_prompts: bool,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.name())
            .field("retry", &self.retry)
            .field("query_id", &self.query_id)
            .field("paradigm", &self.paradigm)
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            sink: None,
            query_id: String::new(),
            paradigm: Paradigm::Pointwise,
            record_prompts: false,
        }
    }

    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.retry = policy;
        self
    }

    pub fn with_sink(mut self, sink: Arc<TraceSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn with_prompt_recording(mut self, on: bool) -> Self {
        self.record_prompts = on;
        self
    }

    pub fn scoped(&self, query_id: &str, paradigm: Paradigm) -> Self {
        Self { query_id: query_id.to_owned(), paradigm, ..self.clone() }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn capabilities(&self) -> Capabilities {
        self.backend.capabilities()
    }

    pub fn sink(&self) -> Option<&Arc<TraceSink>> {
        self.sink.as_ref()
    }

    fn require(&self, supported: bool, operation: Operation) -> Result<(), LlmError> {
        if supported {
            Ok(())
        } else {
            Err(LlmError::CapabilityNotSupported {
                backend: self.backend.name().to_owned(),
                operation,
            })
        }
    }

    fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
        if messages.is_empty() {
            return Err(LlmError::InvalidInput("message list is empty".into()));
        }
        Ok(())
    }

    pub fn generate(
        &self,
        messages: &[ChatMessage],
        opts: &GenerationOptions,
        meta: &CallMeta,
    ) -> Result<(GenerationResult, CallTicket), LlmError> {
        Self::check_messages(messages)?;
        opts.validate()?;
        self.require(self.capabilities().supports_generate, Operation::Generate)?;
        let (res, attempts) = with_retry(&self.retry, |_| self.backend.generate(messages, opts));
        let res = res.map(|r| {
            let raw = r.value.clone();
            (r, raw)
        });
        let (resp, ticket) = self.finish(Operation::Generate, messages, meta, res, attempts)?;
        let result = GenerationResult {
            text: resp.value,
            prompt_tokens: resp.usage.prompt_tokens,
            generated_tokens: resp.usage.generated_tokens,
            latency_ms: resp.usage.latency_ms,
        };
        Ok((result, ticket))
    }

    pub fn loglikelihood(
        &self,
        messages: &[ChatMessage],
        target: &str,
        meta: &CallMeta,
    ) -> Result<LoglikelihoodResult, LlmError> {
        Self::check_messages(messages)?;
        if target.trim().is_empty() {
            return Err(LlmError::InvalidInput("loglikelihood target is empty".into()));
        }
        self.require(self.capabilities().supports_loglikelihood, Operation::Loglikelihood)?;
        let (res, attempts) =
            with_retry(&self.retry, |_| self.backend.loglikelihood(messages, target));
        let res = res.and_then(|r| {
            let v = r.value;
            if !v.total_logprob.is_finite() || v.total_logprob > 1e-9 || v.target_token_count == 0
            {
                return Err(LlmError::MalformedResponse(format!(
                    "invalid loglikelihood result {v:?}"
                )));
            }
            let raw = format!("{}/{}", v.total_logprob, v.target_token_count);
            Ok((r, raw))
        });
        let (resp, _) = self.finish(Operation::Loglikelihood, messages, meta, res, attempts)?;
        Ok(LoglikelihoodResult {
            total_logprob: resp.value.total_logprob.min(0.0),
            target_token_count: resp.value.target_token_count,
        })
    }

    pub fn next_token_scores(
        &self,
        messages: &[ChatMessage],
        candidates: &[String],
        meta: &CallMeta,
    ) -> Result<Vec<TokenScore>, LlmError> {
        Self::check_messages(messages)?;
        if candidates.is_empty() {
            return Err(LlmError::InvalidInput("no candidate tokens requested".into()));
        }
        if let Some(bad) = candidates.iter().find(|c| c.trim().is_empty()) {
            return Err(LlmError::TokenResolution(bad.clone()));
        }
        self.require(self.capabilities().supports_logits, Operation::Logits)?;
        let (res, attempts) =
            with_retry(&self.retry, |_| self.backend.next_token_scores(messages, candidates));
        let res = res.and_then(|r| {
            if r.value.len() != candidates.len() || r.value.iter().any(|s| !s.value.is_finite()) {
                return Err(LlmError::MalformedResponse(format!(
                    "expected {} finite token scores, got {:?}",
                    candidates.len(),
                    r.value
                )));
            }
            let raw = r
                .value
                .iter()
                .map(|s| format!("{}={}", s.token, s.value))
                .collect::<Vec<_>>()
                .join(" ");
            Ok((r, raw))
        });
        let (resp, _) = self.finish(Operation::Logits, messages, meta, res, attempts)?;
        Ok(resp.value)
    }

    fn finish<T>(
        &self,
        operation: Operation,
        messages: &[ChatMessage],
        meta: &CallMeta,
        outcome: Result<(Response<T>, String), LlmError>,
        attempts: u32,
    ) -> Result<(Response<T>, CallTicket), LlmError> {
        let (usage, raw, error) = match &outcome {
            Ok((resp, raw)) => (resp.usage, raw.clone(), None),
            Err(e) => (Usage::default(), String::new(), Some(e.to_string())),
        };
        let slot = self.sink.as_ref().map(|sink| {
            sink.push(TraceRecord {
                query_id: self.query_id.clone(),
                call_index: 0,
                paradigm: self.paradigm,
                operation,
                template: meta.template.clone(),
                latency_ms: usage.latency_ms,
                prompt_tokens: usage.prompt_tokens,
                generated_tokens: usage.generated_tokens,
                raw_output: raw,
                repaired: false,
                attempts,
                error,
                window_size: meta.window_size,
                prompt: self.record_prompts.then(|| super::marker::strip(messages)),
            })
        });
        let (resp, _) = outcome?;
        Ok((resp, CallTicket { sink: self.sink.clone(), slot, attempts }))
    }
}
