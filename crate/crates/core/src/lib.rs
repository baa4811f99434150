pub mod dataprep;
pub mod eval;
pub mod evaluator;
pub mod llm;
pub mod models;
pub mod ranking;
pub mod reranker;
pub mod trace;
mod util;
