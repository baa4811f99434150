use serde::{Deserialize, Serialize};

use super::{by_initial_rank, Candidate, Paradigm, Query, RankError, Ranking};
use crate::llm::LlmError;

/// Outcome of comparing document A with document B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preference {
    AWins,
    BWins,
    Tie,
}

impl Preference {
    /// The same judgement seen from the other side.
    pub fn flip(self) -> Self {
        match self {
            Preference::AWins => Preference::BWins,
            Preference::BWins => Preference::AWins,
            Preference::Tie => Preference::Tie,
        }
    }
}

struct Heap<'a, F> {
    query: &'a Query,
    candidates: &'a [Candidate],
    compare: F,
    calls: usize,
}

impl<F> Heap<'_, F>
where
    F: FnMut(&Query, &Candidate, &Candidate) -> Result<Preference, LlmError>,
{
    /// Whether candidate `a` outranks `b`; ties go to the lower initial rank.
    fn beats(&mut self, a: usize, b: usize) -> Result<bool, RankError> {
        let (ca, cb) = (&self.candidates[a], &self.candidates[b]);
        self.calls += 1;
        let pref = (self.compare)(self.query, ca, cb).map_err(|source| RankError::Compare {
            doc_a: ca.doc_id.clone(),
            doc_b: cb.doc_id.clone(),
            source,
        })?;
        Ok(match pref {
            Preference::AWins => true,
            Preference::BWins => false,
            Preference::Tie => ca.initial_rank < cb.initial_rank,
        })
    }

    fn sift_down(&mut self, heap: &mut [usize], mut i: usize) -> Result<(), RankError> {
        let len = heap.len();
        loop {
            let left = 2 * i + 1;
            if left >= len {
                return Ok(());
            }
            let right = left + 1;
            let mut best = left;
            if right < len && self.beats(heap[right], heap[left])? {
                best = right;
            }
            if self.beats(heap[best], heap[i])? {
                heap.swap(best, i);
                i = best;
            } else {
                return Ok(());
            }
        }
    }
}

/// Extracts the top `k` candidates with a comparator-driven max-heap.
///
/// The heap is built over all candidates in retrieval order, then the root
/// is popped `k` times. Positions after `k` keep ascending initial rank.
/// `model_calls` counts comparator invocations.
pub fn pairwise_heapsort<F>(
    query: &Query,
    candidates: &[Candidate],
    compare_fn: F,
    k: usize,
) -> Result<Ranking, RankError>
where
    F: FnMut(&Query, &Candidate, &Candidate) -> Result<Preference, LlmError>,
{
    let n = candidates.len();
    if n <= 1 {
        return Ok(Ranking::identity(n, Paradigm::PairwiseHeapsort));
    }
    if k == 0 || k > n {
        return Err(RankError::Config(format!("heapsort k must be in 1..={n}, got {k}")));
    }
    let mut state = Heap { query, candidates, compare: compare_fn, calls: 0 };
    let mut heap = by_initial_rank(candidates, (0..n).collect());
    for i in (0..n / 2).rev() {
        state.sift_down(&mut heap, i)?;
    }

    let mut order = Vec::with_capacity(n);
    for _ in 0..k {
        let last = heap.len() - 1;
        heap.swap(0, last);
        order.push(heap.pop().expect("heap non-empty"));
        if !heap.is_empty() {
            state.sift_down(&mut heap, 0)?;
        }
    }
    order.extend(by_initial_rank(candidates, heap));
    Ok(Ranking {
        order,
        paradigm: Paradigm::PairwiseHeapsort,
        scores: None,
        model_calls: state.calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::testutil::{cands, oracle_order};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn q() -> Query {
        Query::new("q", "query")
    }

    fn by_scores(
        scores: Vec<f64>,
    ) -> impl FnMut(&Query, &Candidate, &Candidate) -> Result<Preference, LlmError> {
        move |_, a, b| {
            let (sa, sb) =
                (scores[(a.initial_rank - 1) as usize], scores[(b.initial_rank - 1) as usize]);
            Ok(if sa > sb {
                Preference::AWins
            } else if sb > sa {
                Preference::BWins
            } else {
                Preference::Tie
            })
        }
    }

    #[test]
    fn full_sort_small() {
        let r = pairwise_heapsort(&q(), &cands(3), by_scores(vec![3.0, 1.0, 2.0]), 3).unwrap();
        assert_eq!(r.order, [0, 2, 1]);
    }

    #[test]
    fn all_ties_keep_input_order() {
        let r = pairwise_heapsort(&q(), &cands(7), |_, _, _| Ok(Preference::Tie), 7).unwrap();
        assert_eq!(r.order, (0..7).collect::<Vec<_>>());
        let r = pairwise_heapsort(&q(), &cands(7), |_, _, _| Ok(Preference::Tie), 3).unwrap();
        assert_eq!(r.order, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn top_k_matches_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let mut scores: Vec<f64> = (0..50).map(f64::from).collect();
        scores.shuffle(&mut rng);
        let r = pairwise_heapsort(&q(), &cands(50), by_scores(scores.clone()), 10).unwrap();
        let oracle = oracle_order(&scores);
        assert_eq!(r.order[..10], oracle[..10]);
        let mut rest = r.order[10..].to_vec();
        let sorted = {
            let mut v = rest.clone();
            v.sort();
            v
        };
        assert_eq!(rest, sorted, "tail keeps retrieval order");
        rest.extend_from_slice(&r.order[..10]);
        rest.sort();
        assert_eq!(rest, (0..50).collect::<Vec<_>>());
        assert!(r.model_calls <= 4 * 50 * 6);
    }

    #[test]
    fn k_out_of_range() {
        assert!(pairwise_heapsort(&q(), &cands(3), by_scores(vec![0.0; 3]), 4).is_err());
        assert!(pairwise_heapsort(&q(), &cands(3), by_scores(vec![0.0; 3]), 0).is_err());
    }

    #[test]
    fn error_names_pair() {
        let err = pairwise_heapsort(
            &q(),
            &cands(2),
            |_, _, _| Err(LlmError::TokenResolution("A".into())),
            2,
        )
        .unwrap_err();
        assert!(matches!(err, RankError::Compare { .. }));
    }

    #[test]
    fn flip_is_involution() {
        for p in [Preference::AWins, Preference::BWins, Preference::Tie] {
            assert_eq!(p.flip().flip(), p);
        }
    }
}
