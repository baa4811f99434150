use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ranking::{Candidate, Query};

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    doc_id: String,
    content: String,
    #[serde(default)]
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRecord {
    query_id: String,
    query_text: String,
    candidates: Vec<DocRecord>,
}

/// One query with its retrieved candidates in retrieval order.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryCandidates {
    pub query: Query,
    pub candidates: Vec<Candidate>,
}

impl QueryCandidates {
    /// Keeps the first `k` candidates.
    pub fn truncate(&mut self, k: usize) {
        self.candidates.truncate(k);
    }
}

/// Candidates keyed by query id.
pub type CandidateSet = BTreeMap<String, QueryCandidates>;

/// Reads line-delimited JSON `{query_id, query_text, candidates: [{doc_id,
/// content, score}]}` records. Initial ranks follow line order.
pub fn load_candidates(path: &Path) -> Result<CandidateSet, EvalError> {
    let file = File::open(path).map_err(|e| EvalError::io(path, e))?;
    let mut set = CandidateSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EvalError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err =
            |message: String| EvalError::Parse { path: path.to_owned(), line: i + 1, message };
        let rec: QueryRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let mut seen = HashSet::new();
        for d in &rec.candidates {
            if d.doc_id.is_empty() {
                return Err(parse_err("empty doc_id".into()));
            }
            if !seen.insert(d.doc_id.as_str()) {
                return Err(EvalError::DuplicateDoc {
                    query_id: rec.query_id.clone(),
                    doc_id: d.doc_id.clone(),
                });
            }
        }
        if set.contains_key(&rec.query_id) {
            return Err(parse_err(format!("query {} appears twice", rec.query_id)));
        }
        let candidates = rec
            .candidates
            .into_iter()
            .enumerate()
            .map(|(rank, d)| Candidate {
                doc_id: d.doc_id,
                content: d.content,
                initial_rank: rank as u32 + 1,
                initial_score: d.score,
            })
            .collect();
        set.insert(
            rec.query_id.clone(),
            QueryCandidates { query: Query::new(rec.query_id, rec.query_text), candidates },
        );
    }
    Ok(set)
}

/// Writes records ordered by query id, candidates by initial rank.
pub fn write_candidates(set: &CandidateSet, path: &Path) -> Result<(), EvalError> {
    let file = File::create(path).map_err(|e| EvalError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for qc in set.values() {
        let mut cands: Vec<&Candidate> = qc.candidates.iter().collect();
        cands.sort_by_key(|c| c.initial_rank);
        let rec = QueryRecord {
            query_id: qc.query.id.clone(),
            query_text: qc.query.text.clone(),
            candidates: cands
                .into_iter()
                .map(|c| DocRecord {
                    doc_id: c.doc_id.clone(),
                    content: c.content.clone(),
                    score: c.initial_score,
                })
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| EvalError::io(path, e))?;
    }
    out.flush().map_err(|e| EvalError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn ranks_from_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(
            &p,
            r#"{"query_id":"q1","query_text":"what","candidates":[{"doc_id":"a","content":"A","score":3.5},{"doc_id":"b","content":"B","score":2},{"doc_id":"c","content":"C"}]}"#,
        )
        .unwrap();
        let set = load_candidates(&p).unwrap();
        let qc = &set["q1"];
        assert_eq!(qc.query.text, "what");
        let ranks: Vec<_> = qc.candidates.iter().map(|c| (c.doc_id.as_str(), c.initial_rank)).collect();
        assert_eq!(ranks, [("a", 1), ("b", 2), ("c", 3)]);
        assert_eq!(qc.candidates[0].initial_score, 3.5);
    }

    #[test]
    fn duplicate_doc_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(
            &p,
            r#"{"query_id":"q1","query_text":"x","candidates":[{"doc_id":"a","content":""},{"doc_id":"a","content":""}]}"#,
        )
        .unwrap();
        match load_candidates(&p) {
            Err(EvalError::DuplicateDoc { doc_id, .. }) => assert_eq!(doc_id, "a"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"query_id\":\"q\",\"query_text\":\"\",\"candidates\":[]}\n{oops\n").unwrap();
        assert!(matches!(load_candidates(&p), Err(EvalError::Parse { line: 2, .. })));
    }
}
