use super::{Candidate, Paradigm, Query, RankError, Ranking};
use crate::llm::LlmError;
use crate::util::parallel_map;

/// Scores each candidate independently and sorts by descending score.
///
/// Ties keep retrieval order (ascending `initial_rank`). Exactly one
/// `score_fn` call per candidate, spread over up to `parallelism` threads;
/// a single candidate is returned as-is without scoring.
pub fn pointwise_rerank<F>(
    query: &Query,
    candidates: &[Candidate],
    score_fn: F,
    parallelism: usize,
) -> Result<Ranking, RankError>
where
    F: Fn(&Query, &Candidate) -> Result<f64, LlmError> + Sync,
{
    if candidates.len() <= 1 {
        return Ok(Ranking::identity(candidates.len(), Paradigm::Pointwise));
    }
    let scored = parallel_map(candidates, parallelism, |_, c| {
        score_fn(query, c).map_err(|source| RankError::Score { doc_id: c.doc_id.clone(), source })
    });
    let scores = scored.into_iter().collect::<Result<Vec<f64>, _>>()?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(candidates[a].initial_rank.cmp(&candidates[b].initial_rank))
    });
    let ranked_scores = order.iter().map(|&i| scores[i]).collect();
    Ok(Ranking {
        order,
        paradigm: Paradigm::Pointwise,
        scores: Some(ranked_scores),
        model_calls: candidates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::testutil::{cands, oracle_order};
    use rand::{Rng, SeedableRng};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn q() -> Query {
        Query::new("q", "query")
    }

    fn table(scores: Vec<f64>) -> impl Fn(&Query, &Candidate) -> Result<f64, LlmError> + Sync {
        move |_, c| Ok(scores[(c.initial_rank - 1) as usize])
    }

    #[test]
    fn sorts_by_score() {
        let r = pointwise_rerank(&q(), &cands(3), table(vec![0.1, 0.9, 0.5]), 1).unwrap();
        assert_eq!(r.order, [1, 2, 0]);
        assert_eq!(r.scores.unwrap(), [0.9, 0.5, 0.1]);
    }

    #[test]
    fn ties_keep_input_order() {
        let r = pointwise_rerank(&q(), &cands(5), table(vec![1.0; 5]), 3).unwrap();
        assert_eq!(r.order, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn ties_follow_initial_rank_not_position() {
        let mut c = cands(3);
        c.reverse(); // ranks 3,2,1 at positions 0,1,2
        let r = pointwise_rerank(&q(), &c, |_, _| Ok(0.0), 1).unwrap();
        assert_eq!(r.order, [2, 1, 0]);
    }

    #[test]
    fn matches_full_sort_and_counts_calls() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let scores: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let calls = AtomicUsize::new(0);
        let s = scores.clone();
        let r = pointwise_rerank(
            &q(),
            &cands(100),
            |_, c| {
                calls.fetch_add(1, Ordering::SeqCst);
                Ok(s[(c.initial_rank - 1) as usize])
            },
            4,
        )
        .unwrap();
        assert_eq!(r.order, oracle_order(&scores));
        assert_eq!(calls.load(Ordering::SeqCst), 100);
        assert_eq!(r.model_calls, 100);
    }

    #[test]
    fn degenerate_sizes() {
        let r = pointwise_rerank(&q(), &[], |_, _| unreachable!(), 1).unwrap();
        assert!(r.order.is_empty());
        let r = pointwise_rerank(&q(), &cands(1), |_, _| unreachable!(), 1).unwrap();
        assert_eq!((r.order, r.model_calls), (vec![0], 0));
    }

    #[test]
    fn error_names_document() {
        let err = pointwise_rerank(
            &q(),
            &cands(3),
            |_, c| {
                if c.doc_id == "d1" {
                    Err(LlmError::MalformedResponse("x".into()))
                } else {
                    Ok(0.0)
                }
            },
            1,
        )
        .unwrap_err();
        assert!(matches!(err, RankError::Score { ref doc_id, .. } if doc_id == "d1"));
    }
}
