use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::EvalError;

/// Graded judgments for one query: doc id to grade.
pub type Judgments = BTreeMap<String, u32>;

/// Relevance judgments from a TREC `qid iter docid grade` file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels(BTreeMap<String, Judgments>);

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.0.entry(query_id.to_owned()).or_default().insert(doc_id.to_owned(), grade);
    }

    pub fn get(&self, query_id: &str) -> Option<&Judgments> {
        self.0.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.0.get(query_id)?.get(doc_id).copied()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Judgments)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn parse_qrels(text: &str, origin: &Path) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Parse { path: origin.to_owned(), line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _iter, doc_id, grade] = fields[..] else {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        };
        let grade: u32 = grade
            .parse()
            .map_err(|_| err(format!("grade `{grade}` is not a non-negative integer")))?;
        qrels.insert(qid, doc_id, grade);
    }
    if qrels.is_empty() {
        return Err(EvalError::EmptyQrels { path: origin.to_owned() });
    }
    Ok(qrels)
}

pub fn load_qrels(path: &Path) -> Result<Qrels, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    parse_qrels(&text, path)
}
