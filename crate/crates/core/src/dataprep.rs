//! Fine-tuning conversations built from listwise traces or teacher rankings.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{marker, ChatMessage, Operation, Role};
use crate::models::{format_permutation, parse_permutation};
use crate::ranking::{is_permutation, Candidate, Ranking};
use crate::trace::TraceRecord;

#[derive(Debug, Error)]
pub enum DataprepError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
}

/// One conversation: optional system turn, then user/assistant pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub id: String,
    pub messages: Vec<ChatMessage>,
}

impl SftSample {
    /// Prompt turns followed by the gold permutation as the assistant turn.
    pub fn new(id: impl Into<String>, prompt: &[ChatMessage], gold: &[usize]) -> Result<Self, DataprepError> {
        let id = id.into();
        if !is_permutation(gold, gold.len()) || gold.is_empty() {
            return Err(DataprepError::InvalidSample { id, reason: format!("gold {gold:?} is not a permutation") });
        }
        let mut messages = marker::strip(prompt);
        messages.push(ChatMessage::assistant(format_permutation(gold)));
        let sample = Self { id, messages };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<(), DataprepError> {
        let bad = |reason: &str| DataprepError::InvalidSample { id: self.id.clone(), reason: reason.to_owned() };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        let turns = match self.messages.first() {
            Some(m) if m.role == Role::System => &self.messages[1..],
            _ => &self.messages[..],
        };
        if turns.is_empty() || turns.len() % 2 != 0 {
            return Err(bad("expected user/assistant pairs after the optional system turn"));
        }
        for (i, m) in turns.iter().enumerate() {
            let want = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != want {
                return Err(bad(&format!("turn {} should be {want:?}", i + 1)));
            }
        }
        Ok(())
    }

    /// Content of the final assistant turn.
    pub fn target(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or_default()
    }
}

/// Samples from successful listwise generate calls with recorded prompts.
/// The gold order is the parsed model reply. Ids are `<query_id>-<call_index>`.
pub fn samples_from_traces(records: &[TraceRecord]) -> Result<Vec<SftSample>, DataprepError> {
    let mut out = Vec::new();
    for r in records {
        if r.operation != Operation::Generate || r.error.is_some() {
            continue;
        }
        let Some(w) = r.window_size else { continue };
        let id = format!("{}-{}", r.query_id, r.call_index);
        let prompt = r.prompt.as_ref().ok_or_else(|| {
            DataprepError::InvalidTrace(format!("{id}: no recorded prompt (enable prompt recording)"))
        })?;
        let gold = parse_permutation(&r.raw_output, w).indices;
        out.push(SftSample::new(id, prompt, &gold)?);
    }
    Ok(out)
}

/// A sample teaching the teacher's order of the first `window` candidates.
/// `prompt` is the listwise prompt over those candidates in initial order.
pub fn sample_from_ranking(
    id: impl Into<String>,
    prompt: &[ChatMessage],
    candidates: &[Candidate],
    ranking: &Ranking,
    window: usize,
) -> Result<SftSample, DataprepError> {
    let id = id.into();
    if !is_permutation(&ranking.order, candidates.len()) {
        return Err(DataprepError::InvalidTrace(format!("{id}: ranking is not a permutation of the candidates")));
    }
    let w = window.min(candidates.len());
    let gold: Vec<usize> = ranking.order.iter().copied().filter(|&i| i < w).collect();
    SftSample::new(id, prompt, &gold)
}

/// Writes one JSON line per sample and returns the count written.
pub fn export_sft(samples: &[SftSample], path: &Path) -> Result<usize, DataprepError> {
    let io_err = |source| DataprepError::Io { path: path.to_owned(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for s in samples {
        s.validate()?;
        let line = serde_json::to_string(s).expect("sample serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(samples.len())
}

/// Reads and validates an exported file.
pub fn read_sft(path: &Path) -> Result<Vec<SftSample>, DataprepError> {
    let io_err = |source| DataprepError::Io { path: path.to_owned(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SftSample = serde_json::from_str(&line).map_err(|e| DataprepError::InvalidSample {
            id: format!("line {}", i + 1),
            reason: e.to_string(),
        })?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}
