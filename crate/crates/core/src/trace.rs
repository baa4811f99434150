//! Per-call records of every backend interaction.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::llm::{ChatMessage, Operation};
use crate::ranking::Paradigm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub query_id: String,
    pub call_index: u64,
    pub paradigm: Paradigm,
    pub operation: Operation,
    /// Template name and content hash, e.g. `rankgpt@5f0c2a91`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub latency_ms: f64,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    pub raw_output: String,
    pub repaired: bool,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_size: Option<usize>,
    /// Prompt as sent, kept only when prompt recording is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<ChatMessage>>,
}

/// Thread-safe collector. Assigns `call_index` per query in arrival order.
#[derive(Debug, Default)]
pub struct TraceSink {
    inner: Mutex<SinkInner>,
}

#[derive(Debug, Default)]
struct SinkInner {
    records: Vec<TraceRecord>,
    next_index: HashMap<String, u64>,
}

impl TraceSink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record, overwriting its `call_index`. Returns a slot id
    /// usable with [`TraceSink::mark_repaired`].
    pub fn push(&self, mut record: TraceRecord) -> usize {
        let mut inner = self.inner.lock().expect("trace sink poisoned");
        let next = inner.next_index.entry(record.query_id.clone()).or_insert(0);
        record.call_index = *next;
        *next += 1;
        inner.records.push(record);
        inner.records.len() - 1
    }

    pub fn mark_repaired(&self, slot: usize) {
        let mut inner = self.inner.lock().expect("trace sink poisoned");
        if let Some(r) = inner.records.get_mut(slot) {
            r.repaired = true;
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("trace sink poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records sorted by `(query_id, call_index)`.
    pub fn snapshot(&self) -> Vec<TraceRecord> {
        let mut records = self.inner.lock().expect("trace sink poisoned").records.clone();
        sort_records(&mut records);
        records
    }

    pub fn records_for(&self, query_id: &str) -> Vec<TraceRecord> {
        self.snapshot().into_iter().filter(|r| r.query_id == query_id).collect()
    }
}

pub fn sort_records(records: &mut [TraceRecord]) {
    records.sort_by(|a, b| a.query_id.cmp(&b.query_id).then(a.call_index.cmp(&b.call_index)));
}

pub fn write_traces(records: &[TraceRecord], path: &Path) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_traces(path: &Path) -> io::Result<Vec<TraceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(qid: &str) -> TraceRecord {
        TraceRecord {
            query_id: qid.into(),
            call_index: 99,
            paradigm: Paradigm::Pointwise,
            operation: Operation::Logits,
            template: None,
            latency_ms: 0.0,
            prompt_tokens: 3,
            generated_tokens: 0,
            raw_output: String::new(),
            repaired: false,
            attempts: 1,
            error: None,
            window_size: None,
            prompt: None,
        }
    }

    #[test]
    fn call_index_is_per_query() {
        let sink = TraceSink::new();
        sink.push(record("q2"));
        let slot = sink.push(record("q1"));
        sink.push(record("q2"));
        sink.mark_repaired(slot);
        let all = sink.snapshot();
        let keys: Vec<_> = all.iter().map(|r| (r.query_id.as_str(), r.call_index)).collect();
        assert_eq!(keys, [("q1", 0), ("q2", 0), ("q2", 1)]);
        assert!(all[0].repaired);
    }

    #[test]
    fn concurrent_appends() {
        let sink = TraceSink::new();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..100 {
                        sink.push(record("q"));
                    }
                });
            }
        });
        let idx: Vec<u64> = sink.snapshot().iter().map(|r| r.call_index).collect();
        assert_eq!(idx, (0..800).collect::<Vec<_>>());
    }
}
