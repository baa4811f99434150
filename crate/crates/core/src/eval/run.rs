use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tracing::warn;

use super::EvalError;
use crate::ranking::{Candidate, Ranking};

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
}

/// Ranked lists keyed by query id, each sorted by rank.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run(BTreeMap<String, Vec<RunEntry>>);

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a reranked list. Without model scores each entry gets the
    /// synthetic score `n - rank + 1`.
    pub fn insert_ranking(&mut self, query_id: &str, candidates: &[Candidate], ranking: &Ranking) {
        let n = ranking.order.len();
        let entries = ranking
            .order
            .iter()
            .enumerate()
            .map(|(pos, &i)| RunEntry {
                doc_id: candidates[i].doc_id.clone(),
                rank: pos as u32 + 1,
                score: match &ranking.scores {
                    Some(s) => s[pos],
                    None => (n - pos) as f64,
                },
            })
            .collect();
        self.0.insert(query_id.to_owned(), entries);
    }

    pub fn insert(&mut self, query_id: &str, entries: Vec<RunEntry>) {
        self.0.insert(query_id.to_owned(), entries);
    }

    pub fn get(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.0.get(query_id).map(Vec::as_slice)
    }

    /// Doc ids of one query in rank order.
    pub fn doc_ids(&self, query_id: &str) -> Vec<&str> {
        self.get(query_id)
            .map(|e| e.iter().map(|x| x.doc_id.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Re-sorts every list the way trec_eval does (score descending, then
    /// doc id descending) and renumbers ranks.
    pub fn trec_eval_order(&mut self) {
        for entries in self.0.values_mut() {
            entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| b.doc_id.cmp(&a.doc_id)));
            for (i, e) in entries.iter_mut().enumerate() {
                e.rank = i as u32 + 1;
            }
        }
    }

    fn check(&self) -> Result<(), EvalError> {
        for (qid, entries) in &self.0 {
            let mut seen = HashSet::new();
            for (i, e) in entries.iter().enumerate() {
                if e.rank != i as u32 + 1 {
                    return Err(EvalError::InvalidRun(format!(
                        "query {qid}: rank {} at position {}",
                        e.rank,
                        i + 1
                    )));
                }
                if !seen.insert(e.doc_id.as_str()) {
                    return Err(EvalError::DuplicateDoc { query_id: qid.clone(), doc_id: e.doc_id.clone() });
                }
                if !e.score.is_finite() {
                    return Err(EvalError::InvalidRun(format!("query {qid}: non-finite score for {}", e.doc_id)));
                }
                if i > 0 && e.score > entries[i - 1].score {
                    return Err(EvalError::InvalidRun(format!(
                        "query {qid}: score increases at rank {}",
                        e.rank
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renders `qid Q0 docid rank score tag` lines, queries in id order.
pub fn format_trec_run(run: &Run, tag: &str) -> Result<String, EvalError> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(EvalError::InvalidRun(format!("bad run tag `{tag}`")));
    }
    run.check()?;
    let mut out = String::new();
    for (qid, entries) in run.iter() {
        for e in entries {
            writeln!(out, "{qid} Q0 {} {} {} {tag}", e.doc_id, e.rank, e.score).unwrap();
        }
    }
    Ok(out)
}

pub fn write_trec_run(run: &Run, tag: &str, path: &Path) -> Result<(), EvalError> {
    let text = format_trec_run(run, tag)?;
    fs::write(path, text).map_err(|e| EvalError::io(path, e))
}

/// Parses a TREC run. Lines are grouped per query and ordered by rank;
/// gapped ranks are renumbered and score disorder is only warned about.
pub fn parse_trec_run(text: &str, origin: &Path) -> Result<Run, EvalError> {
    let mut lists: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Parse { path: origin.to_owned(), line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _q0, doc_id, rank, score, _tag] = fields[..] else {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        };
        let rank: u32 = rank.parse().map_err(|_| err(format!("bad rank `{rank}`")))?;
        let score: f64 = score.parse().map_err(|_| err(format!("bad score `{score}`")))?;
        if !score.is_finite() {
            return Err(err(format!("non-finite score `{score}`")));
        }
        lists.entry(qid.to_owned()).or_default().push(RunEntry { doc_id: doc_id.to_owned(), rank, score });
    }
    for (qid, entries) in lists.iter_mut() {
        entries.sort_by_key(|e| e.rank);
        let mut seen = HashSet::new();
        let mut renumbered = false;
        let mut disordered = false;
        for i in 0..entries.len() {
            if !seen.insert(entries[i].doc_id.clone()) {
                return Err(EvalError::DuplicateDoc { query_id: qid.clone(), doc_id: entries[i].doc_id.clone() });
            }
            if entries[i].rank != i as u32 + 1 {
                entries[i].rank = i as u32 + 1;
                renumbered = true;
            }
            if i > 0 && entries[i].score > entries[i - 1].score {
                disordered = true;
            }
        }
        if renumbered {
            warn!(query = %qid, "run ranks are not consecutive from 1; renumbered");
        }
        if disordered {
            warn!(query = %qid, "run scores are not non-increasing in rank order");
        }
    }
    Ok(Run(lists))
}

pub fn load_trec_run(path: &Path) -> Result<Run, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    parse_trec_run(&text, path)
}
