//! Dataset ingestion, TREC-style metrics and run files.

mod candidates;
mod metrics;
mod qrels;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use candidates::{load_candidates, write_candidates, CandidateSet, QueryCandidates};
pub use metrics::{average_precision, dcg, ndcg_at_k, recall_at_k, Gain};
pub use qrels::{load_qrels, parse_qrels, Judgments, Qrels};
pub use report::{evaluate_run, EvalSettings, MetricReport};
pub use run::{format_trec_run, load_trec_run, parse_trec_run, write_trec_run, Run, RunEntry};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("query {query_id}: duplicate doc_id {doc_id}")]
    DuplicateDoc { query_id: String, doc_id: String },
    #[error("{}: no relevance judgments", path.display())]
    EmptyQrels { path: PathBuf },
    #[error("run and qrels share no query")]
    NoOverlap,
    #[error("invalid run: {0}")]
    InvalidRun(String),
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io { path: path.into(), source }
    }
}
