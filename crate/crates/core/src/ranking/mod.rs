//! Paradigm drivers: pointwise, pairwise heapsort, listwise sliding window
//! and tournament selection.
//!
//! A driver owns the ranking algorithm and nothing else. What a "score",
//! "comparison", "window permutation" or "selection" means is supplied by
//! the caller as a closure, normally one of the models in
//! [`crate::models`].

mod listwise;
mod pairwise;
mod pointwise;
mod tournament;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;

pub use listwise::{listwise_sliding_window, window_starts, SlidingWindowConfig};
pub use pairwise::{pairwise_heapsort, Preference};
pub use pointwise::pointwise_rerank;
pub use tournament::{plan_groups, stage_schedule, tournament_rerank, TournamentConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: String,
    pub content: String,
    /// 1-based position in the retriever's list.
    pub initial_rank: u32,
    pub initial_score: f64,
}

impl Candidate {
    pub fn new(doc_id: impl Into<String>, content: impl Into<String>, initial_rank: u32) -> Self {
        Self {
            doc_id: doc_id.into(),
            content: content.into(),
            initial_rank,
            initial_score: 0.0,
        }
    }
}

/// Builds candidates with ranks `1..=n` from `(doc_id, content)` pairs.
pub fn candidates_from<I, A, B>(docs: I) -> Vec<Candidate>
where
    I: IntoIterator<Item = (A, B)>,
    A: Into<String>,
    B: Into<String>,
{
    docs.into_iter()
        .enumerate()
        .map(|(i, (id, content))| Candidate::new(id, content, i as u32 + 1))
        .collect()
}

/// Checks non-empty doc ids and unique initial ranks and doc ids.
pub fn validate_candidates(candidates: &[Candidate]) -> Result<(), RankError> {
    let mut ranks = HashSet::new();
    let mut ids = HashSet::new();
    for c in candidates {
        if c.doc_id.is_empty() {
            return Err(RankError::InvalidCandidates("empty doc_id".into()));
        }
        if !ranks.insert(c.initial_rank) {
            return Err(RankError::InvalidCandidates(format!(
                "initial_rank {} appears twice",
                c.initial_rank
            )));
        }
        if !ids.insert(c.doc_id.as_str()) {
            return Err(RankError::InvalidCandidates(format!("doc_id {} appears twice", c.doc_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Pointwise,
    PairwiseHeapsort,
    ListwiseSlidingWindow,
    Tournament,
    /// Retrieval order passed through unchanged.
    Identity,
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::Pointwise => "pointwise",
            Paradigm::PairwiseHeapsort => "pairwise_heapsort",
            Paradigm::ListwiseSlidingWindow => "listwise_sliding_window",
            Paradigm::Tournament => "tournament",
            Paradigm::Identity => "identity",
        })
    }
}

/// A permutation of the input candidates, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// 0-based indices into the input candidate list.
    pub order: Vec<usize>,
    pub paradigm: Paradigm,
    /// Scores aligned with `order`, when the paradigm produces them.
    pub scores: Option<Vec<f64>>,
    /// Model function invocations (score, compare, window or select calls).
    pub model_calls: usize,
}

impl Ranking {
    pub fn identity(n: usize, paradigm: Paradigm) -> Self {
        Self { order: (0..n).collect(), paradigm, scores: None, model_calls: 0 }
    }

    pub fn is_permutation(&self) -> bool {
        is_permutation(&self.order, self.order.len())
    }

    /// Doc ids in ranked order.
    pub fn doc_ids<'a>(&self, candidates: &'a [Candidate]) -> Vec<&'a str> {
        self.order.iter().map(|&i| candidates[i].doc_id.as_str()).collect()
    }
}

pub fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Indices sorted by ascending initial rank.
pub(crate) fn by_initial_rank(candidates: &[Candidate], mut idx: Vec<usize>) -> Vec<usize> {
    idx.sort_by_key(|&i| candidates[i].initial_rank);
    idx
}

#[derive(Debug, Error)]
pub enum RankError {
    #[error("scoring {doc_id}: {source}")]
    Score { doc_id: String, source: LlmError },
    #[error("comparing {doc_a} vs {doc_b}: {source}")]
    Compare { doc_a: String, doc_b: String, source: LlmError },
    #[error("window at {start}: {source}")]
    Window { start: usize, source: LlmError },
    #[error("window at {start}: model returned {got:?}, not a permutation of 0..{len}")]
    InvalidPermutation { start: usize, len: usize, got: Vec<usize> },
    #[error("selection in stage {stage}: {source}")]
    Select { stage: usize, source: LlmError },
    #[error("selection in stage {stage}: expected {expected} picks, got {got}")]
    SelectionSize { stage: usize, expected: usize, got: usize },
    #[error("model error: {0}")]
    Model(#[from] LlmError),
    #[error("invalid candidates: {0}")]
    InvalidCandidates(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl RankError {
    /// The backend error underneath, if any.
    pub fn llm_error(&self) -> Option<&LlmError> {
        match self {
            RankError::Score { source, .. }
            | RankError::Compare { source, .. }
            | RankError::Window { source, .. }
            | RankError::Select { source, .. }
            | RankError::Model(source) => Some(source),
            _ => None,
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_duplicates() {
        let mut c = testutil::cands(3);
        assert!(validate_candidates(&c).is_ok());
        c[2].initial_rank = 1;
        assert!(validate_candidates(&c).is_err());
        let mut c = testutil::cands(2);
        c[1].doc_id = "d0".into();
        assert!(validate_candidates(&c).is_err());
    }

    #[test]
    fn permutation_check() {
        assert!(is_permutation(&[2, 0, 1], 3));
        assert!(!is_permutation(&[0, 0, 1], 3));
        assert!(!is_permutation(&[0, 1], 3));
        assert!(is_permutation(&[], 0));
    }
}
