//! Synthetic datasets with hidden relevance scores.
#![allow(dead_code)]

use std::path::Path;

use llmrank::eval::{write_candidates, CandidateSet, Qrels, QueryCandidates};
use llmrank::llm::ScoreTable;
use llmrank::ranking::{Candidate, Query};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

pub struct Synthetic {
    pub queries: CandidateSet,
    pub scores: ScoreTable,
    pub qrels: Qrels,
}

/// Grade of the doc at oracle position `pos` (0-based): 3,3,3,2,2,2,1,1,1,1,
/// then ten judged zeros, the rest unjudged.
pub fn grade_at(pos: usize) -> Option<u32> {
    match pos {
        0..=2 => Some(3),
        3..=5 => Some(2),
        6..=9 => Some(1),
        10..=19 => Some(0),
        _ => None,
    }
}

/// `nq` queries with `nc` candidates each. Hidden scores are distinct and the
/// initial order is shuffled, or oracle-sorted when `presorted`.
pub fn synthetic(nq: usize, nc: usize, seed: u64, presorted: bool) -> Synthetic {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut queries = CandidateSet::new();
    let mut scores = ScoreTable::new();
    let mut qrels = Qrels::new();
    for q in 0..nq {
        let qid = format!("q{q}");
        let mut values: Vec<usize> = (0..nc).collect();
        values.shuffle(&mut rng);
        let mut docs: Vec<(String, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("{qid}d{i}"), v as f64 / nc as f64 * 10.0 - 5.0))
            .collect();
        for (d, s) in &docs {
            scores.insert(&qid, d, *s);
        }
        let mut by_score = docs.clone();
        by_score.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (pos, (d, _)) in by_score.iter().enumerate() {
            if let Some(g) = grade_at(pos) {
                qrels.insert(&qid, d, g);
            }
        }
        if presorted {
            docs = by_score;
        }
        let candidates = docs
            .iter()
            .enumerate()
            .map(|(i, (d, _))| Candidate {
                doc_id: d.clone(),
                content: format!("passage {d} about topic {q}"),
                initial_rank: i as u32 + 1,
                initial_score: (nc - i) as f64,
            })
            .collect::<Vec<_>>();
        queries.insert(qid.clone(), QueryCandidates { query: Query::new(&qid, format!("query number {q}")), candidates });
    }
    Synthetic { queries, scores, qrels }
}

/// Oracle order of a query's candidates as doc ids, best first.
pub fn oracle_ids(s: &Synthetic, qid: &str) -> Vec<String> {
    let mut ids: Vec<(String, f64)> = s.queries[qid]
        .candidates
        .iter()
        .map(|c| (c.doc_id.clone(), s.scores.get(qid, &c.doc_id).unwrap()))
        .collect();
    ids.sort_by(|a, b| b.1.total_cmp(&a.1));
    ids.into_iter().map(|(d, _)| d).collect()
}

/// Writes `candidates.jsonl`, `qrels.txt` and `scores.json` into `dir`.
pub fn write_dataset(s: &Synthetic, dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    write_candidates(&s.queries, &dir.join("candidates.jsonl")).unwrap();
    let mut qrels = String::new();
    for (qid, judged) in s.qrels.iter() {
        for (d, g) in judged {
            qrels.push_str(&format!("{qid} 0 {d} {g}\n"));
        }
    }
    std::fs::write(dir.join("qrels.txt"), qrels).unwrap();
    std::fs::write(dir.join("scores.json"), serde_json::to_string(&s.scores).unwrap()).unwrap();
}
