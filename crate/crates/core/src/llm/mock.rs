//! Deterministic in-process backend.
//!
//! Two behaviours live here. With a [`ScoreTable`] attached, prompts carrying
//! an intent marker are answered from the table's hidden scores: yes/no and
//! label logits rise with the score, pairwise and listwise prompts get the
//! better-scored identifiers first, and query log-likelihood grows with the
//! score. Everything else falls back to scripted answers (fixed text, a fixed
//! token score table, a uniform per-token log-probability).

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::marker::{self, Intent, Marker};
use super::{
    whitespace_tokens, Backend, Capabilities, ChatMessage, GenerationOptions, LlmError,
    LoglikelihoodResult, Response, TokenScore, Usage,
};
use crate::util::fnv1a;

/// Hidden relevance scores keyed by query id, then document id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreTable(pub BTreeMap<String, BTreeMap<String, f64>>);

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn from_json_file(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, score: f64) {
        self.0.entry(query_id.to_owned()).or_default().insert(doc_id.to_owned(), score);
    }

    pub fn get(&self, query_id: &str, doc_id: &str) -> Option<f64> {
        self.0.get(query_id)?.get(doc_id).copied()
    }
}

type GenerateFn = dyn Fn(&[ChatMessage]) -> String + Send + Sync;
type LogitsFn = dyn Fn(&[ChatMessage], &[String]) -> Vec<f64> + Send + Sync;

pub struct MockBackend {
    name: String,
    caps: Capabilities,
    oracle: Option<ScoreTable>,
    missing_score: f64,
    default_text: String,
    token_scores: HashMap<String, f64>,
    uniform_logprob: f64,
    ll_table: HashMap<(u64, String), f64>,
    generate_fn: Option<Arc<GenerateFn>>,
    logits_fn: Option<Arc<LogitsFn>>,
    failures: Mutex<VecDeque<LlmError>>,
    failing_queries: HashSet<String>,
    calls: AtomicUsize,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("name", &self.name)
            .field("oracle", &self.oracle.is_some())
            .finish_non_exhaustive()
    }
}

#[derive(Default)]
pub struct MockBuilder {
    caps: Option<Capabilities>,
    oracle: Option<ScoreTable>,
    missing_score: f64,
    default_text: Option<String>,
    token_scores: HashMap<String, f64>,
    uniform_logprob: Option<f64>,
    ll_table: HashMap<(u64, String), f64>,
    generate_fn: Option<Arc<GenerateFn>>,
    logits_fn: Option<Arc<LogitsFn>>,
    failures: VecDeque<LlmError>,
    failing_queries: HashSet<String>,
}

impl MockBuilder {
    pub fn oracle(mut self, table: ScoreTable) -> Self {
        self.oracle = Some(table);
        self
    }

    /// Score assumed for documents absent from the oracle table.
    pub fn missing_score(mut self, score: f64) -> Self {
        self.missing_score = score;
        self
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.default_text = Some(text.into());
        self
    }

    pub fn token_score(mut self, token: impl Into<String>, value: f64) -> Self {
        self.token_scores.insert(token.into(), value);
        self
    }

    pub fn uniform_logprob(mut self, per_token: f64) -> Self {
        self.uniform_logprob = Some(per_token);
        self
    }

    /// Scripts the total log-probability of `target` after exactly `messages`.
    pub fn loglikelihood_entry(
        mut self,
        messages: &[ChatMessage],
        target: impl Into<String>,
        total: f64,
    ) -> Self {
        self.ll_table.insert((context_hash(messages), target.into()), total);
        self
    }

    pub fn generate_with(
        mut self,
        f: impl Fn(&[ChatMessage]) -> String + Send + Sync + 'static,
    ) -> Self {
        self.generate_fn = Some(Arc::new(f));
        self
    }

    pub fn logits_with(
        mut self,
        f: impl Fn(&[ChatMessage], &[String]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.logits_fn = Some(Arc::new(f));
        self
    }

    /// Queues an error returned by the next call (of any kind).
    pub fn fail_next(mut self, err: LlmError) -> Self {
        self.failures.push_back(err);
        self
    }

    /// Every call whose marker names `query_id` fails with a transient error.
    pub fn fail_query(mut self, query_id: impl Into<String>) -> Self {
        self.failing_queries.insert(query_id.into());
        self
    }

    pub fn capabilities(mut self, caps: Capabilities) -> Self {
        self.caps = Some(caps);
        self
    }

    pub fn build(self) -> MockBackend {
        MockBackend {
            name: "mock".into(),
            caps: self.caps.unwrap_or(Capabilities {
                supports_generate: true,
                supports_loglikelihood: true,
                supports_logits: true,
            }),
            oracle: self.oracle,
            missing_score: self.missing_score,
            default_text: self.default_text.unwrap_or_else(|| "yes".into()),
            token_scores: self.token_scores,
            uniform_logprob: self.uniform_logprob.unwrap_or(-1.0),
            ll_table: self.ll_table,
            generate_fn: self.generate_fn,
            logits_fn: self.logits_fn,
            failures: Mutex::new(self.failures),
            failing_queries: self.failing_queries,
            calls: AtomicUsize::new(0),
        }
    }
}

/// Stable hash of a conversation with intent markers removed.
pub fn context_hash(messages: &[ChatMessage]) -> u64 {
    let mut buf = Vec::new();
    for m in marker::strip(messages) {
        buf.extend_from_slice(m.role.as_str().as_bytes());
        buf.push(0);
        buf.extend_from_slice(m.content.as_bytes());
        buf.push(0);
    }
    fnv1a(&buf)
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl MockBackend {
    pub fn builder() -> MockBuilder {
        MockBuilder::default()
    }

    pub fn oracle(table: ScoreTable) -> Self {
        Self::builder().oracle(table).build()
    }

    /// Number of calls served, failures included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn begin(&self, messages: &[ChatMessage]) -> Result<(), LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(e) = self.failures.lock().expect("mock poisoned").pop_front() {
            return Err(e);
        }
        if !self.failing_queries.is_empty() {
            if let Some(m) = marker::find(messages) {
                if self.failing_queries.contains(&m.query_id) {
                    return Err(LlmError::transient(format!("mock failure for query {}", m.query_id), Some(503)));
                }
            }
        }
        Ok(())
    }

    fn oracle_marker(&self, messages: &[ChatMessage]) -> Option<(&ScoreTable, Marker)> {
        let table = self.oracle.as_ref()?;
        Some((table, marker::find(messages)?))
    }

    fn score(&self, table: &ScoreTable, query_id: &str, doc_id: &str) -> f64 {
        table.get(query_id, doc_id).unwrap_or(self.missing_score)
    }

    fn doc_scores(&self, table: &ScoreTable, m: &Marker) -> Vec<f64> {
        m.doc_ids.iter().map(|d| self.score(table, &m.query_id, d)).collect()
    }

    fn prompt_tokens(messages: &[ChatMessage]) -> u64 {
        marker::strip(messages).iter().map(|m| whitespace_tokens(&m.content)).sum()
    }
}

/// Positions sorted by descending score, ties by ascending position.
fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn bracketed(ids: &[usize]) -> String {
    ids.iter().map(|i| format!("[{}]", i + 1)).collect::<Vec<_>>().join(" > ")
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn generate(
        &self,
        messages: &[ChatMessage],
        _opts: &GenerationOptions,
    ) -> Result<Response<String>, LlmError> {
        self.begin(messages)?;
        let text = if let Some((table, m)) = self.oracle_marker(messages) {
            let scores = self.doc_scores(table, &m);
            let order = argsort_desc(&scores);
            match m.intent {
                Some(Intent::Listwise) => bracketed(&order),
                Some(Intent::Select) => {
                    let take = m.select.unwrap_or(order.len()).min(order.len());
                    bracketed(&order[..take])
                }
                Some(Intent::Pairwise) => {
                    if order.first() == Some(&1) { "Passage B" } else { "Passage A" }.to_owned()
                }
                _ => if scores.first().copied().unwrap_or(0.0) > 0.0 { "yes" } else { "no" }
                    .to_owned(),
            }
        } else if let Some(f) = &self.generate_fn {
            f(messages)
        } else {
            self.default_text.clone()
        };
        let usage = Usage {
            prompt_tokens: Self::prompt_tokens(messages),
            generated_tokens: whitespace_tokens(&text),
            latency_ms: 0.0,
        };
        Ok(Response { value: text, usage })
    }

    fn loglikelihood(
        &self,
        messages: &[ChatMessage],
        target: &str,
    ) -> Result<Response<LoglikelihoodResult>, LlmError> {
        self.begin(messages)?;
        let count = whitespace_tokens(target);
        if count == 0 {
            return Err(LlmError::InvalidInput("loglikelihood target is empty".into()));
        }
        let total = if let Some((table, m)) = self.oracle_marker(messages) {
            let s = self.doc_scores(table, &m).first().copied().unwrap_or(self.missing_score);
            match m.labels.as_ref().and_then(|l| l.iter().position(|x| x == target).map(|j| (l, j)))
            {
                Some((labels, j)) => {
                    // log-softmax over label logits j * s
                    let logits: Vec<f64> = (0..labels.len()).map(|k| k as f64 * s).collect();
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                    logits[j] - lse
                }
                None => count as f64 * log_sigmoid(s),
            }
        } else {
            self.ll_table
                .get(&(context_hash(messages), target.to_owned()))
                .copied()
                .unwrap_or(self.uniform_logprob * count as f64)
        };
        let usage = Usage {
            prompt_tokens: Self::prompt_tokens(messages) + count,
            generated_tokens: 0,
            latency_ms: 0.0,
        };
        Ok(Response {
            value: LoglikelihoodResult {
                total_logprob: total.min(0.0),
                target_token_count: count as u32,
            },
            usage,
        })
    }

    fn next_token_scores(
        &self,
        messages: &[ChatMessage],
        candidates: &[String],
    ) -> Result<Response<Vec<TokenScore>>, LlmError> {
        self.begin(messages)?;
        let values: Vec<f64> = if let Some((table, m)) = self.oracle_marker(messages) {
            let scores = self.doc_scores(table, &m);
            let floor = scores.iter().copied().fold(0.0, f64::min) - 10.0;
            match m.intent {
                Some(Intent::Pairwise) => candidates
                    .iter()
                    .map(|c| match c.trim() {
                        "A" => scores.first().copied().unwrap_or(floor),
                        "B" => scores.get(1).copied().unwrap_or(floor),
                        _ => floor,
                    })
                    .collect(),
                Some(Intent::Listwise) | Some(Intent::Select) => candidates
                    .iter()
                    .map(|c| match c.trim().parse::<usize>() {
                        Ok(k) if k >= 1 && k <= scores.len() => scores[k - 1],
                        _ => floor,
                    })
                    .collect(),
                _ => {
                    let s = scores.first().copied().unwrap_or(self.missing_score);
                    if m.labels.is_some() {
                        (0..candidates.len()).map(|j| j as f64 * s).collect()
                    } else {
                        candidates
                            .iter()
                            .map(|c| match c.trim().to_ascii_lowercase().as_str() {
                                "yes" => s,
                                "no" => -s,
                                _ => 0.0,
                            })
                            .collect()
                    }
                }
            }
        } else if let Some(f) = &self.logits_fn {
            f(messages, candidates)
        } else {
            candidates
                .iter()
                .map(|c| self.token_scores.get(c.as_str()).copied().unwrap_or(0.0))
                .collect()
        };
        let value = candidates
            .iter()
            .zip(values)
            .map(|(c, v)| TokenScore { token: c.clone(), value: v, is_logprob: false })
            .collect();
        let usage = Usage {
            prompt_tokens: Self::prompt_tokens(messages),
            generated_tokens: 1,
            latency_ms: 0.0,
        };
        Ok(Response { value, usage })
    }
}
