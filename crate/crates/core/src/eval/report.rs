use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, ndcg_at_k, recall_at_k, Gain};
use super::{EvalError, Qrels, Run};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Cutoffs for ndcg@k and recall@k.
    pub cutoffs: Vec<usize>,
    /// Minimum grade counted as relevant by map and recall.
    pub map_threshold: u32,
    pub gain: Gain,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { cutoffs: vec![1, 5, 10, 20, 100], map_threshold: 1, gain: Gain::Linear }
    }
}

/// Means over every judged query plus per-query values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub query_count: usize,
    pub metrics: BTreeMap<String, f64>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub settings: EvalSettings,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }
}

/// Scores `run` against `qrels`. Judged queries absent from the run score 0
/// on every metric.
pub fn evaluate_run(run: &Run, qrels: &Qrels, settings: &EvalSettings) -> Result<MetricReport, EvalError> {
    if !qrels.query_ids().any(|q| run.get(q).is_some()) {
        return Err(EvalError::NoOverlap);
    }
    let mut per_query = BTreeMap::new();
    for (qid, judged) in qrels.iter() {
        let ranked = run.doc_ids(qid);
        let mut values = BTreeMap::new();
        for &k in &settings.cutoffs {
            values.insert(format!("ndcg@{k}"), ndcg_at_k(&ranked, judged, k, settings.gain));
            values.insert(format!("recall@{k}"), recall_at_k(&ranked, judged, k, settings.map_threshold));
        }
        values.insert("map".to_owned(), average_precision(&ranked, judged, settings.map_threshold));
        per_query.insert(qid.to_owned(), values);
    }
    let n = per_query.len();
    let mut metrics: BTreeMap<String, f64> = BTreeMap::new();
    for values in per_query.values() {
        for (name, v) in values {
            *metrics.entry(name.clone()).or_default() += v;
        }
    }
    for v in metrics.values_mut() {
        *v /= n as f64;
    }
    Ok(MetricReport { query_count: n, metrics, per_query, settings: settings.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::RunEntry;

    fn run_of(lists: &[(&str, &[&str])]) -> Run {
        let mut run = Run::new();
        for (q, docs) in lists {
            let n = docs.len();
            let entries = docs
                .iter()
                .enumerate()
                .map(|(i, d)| RunEntry { doc_id: d.to_string(), rank: i as u32 + 1, score: (n - i) as f64 })
                .collect();
            run.insert(q, entries);
        }
        run
    }

    #[test]
    fn missing_query_scores_zero() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "b", 1);
        let run = run_of(&[("q1", &["a"]), ("q9", &["b"])]);
        let settings = EvalSettings { cutoffs: vec![10], ..Default::default() };
        let r = evaluate_run(&run, &qrels, &settings).unwrap();
        assert_eq!(r.query_count, 2);
        assert_eq!(r.get("ndcg@10"), Some(0.5));
        assert_eq!(r.get("map"), Some(0.5));
        assert_eq!(r.per_query["q2"]["recall@10"], 0.0);
    }

    #[test]
    fn no_overlap() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 1);
        let run = run_of(&[("q2", &["a"])]);
        assert!(matches!(evaluate_run(&run, &qrels, &EvalSettings::default()), Err(EvalError::NoOverlap)));
    }
}
