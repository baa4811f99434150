//! Property tests for metrics, file formats and ranking drivers.

use std::path::Path;

use llmrank::eval::{
    average_precision, evaluate_run, format_trec_run, ndcg_at_k, parse_trec_run, recall_at_k, EvalSettings, Gain,
    Judgments, Qrels, Run, RunEntry,
};
use llmrank::ranking::{
    candidates_from, listwise_sliding_window, pairwise_heapsort, pointwise_rerank, tournament_rerank, window_starts,
    Candidate, Preference, Query, SlidingWindowConfig, TournamentConfig,
};
use proptest::prelude::*;

fn cands(n: usize) -> Vec<Candidate> {
    candidates_from((0..n).map(|i| (format!("d{i}"), format!("text {i}"))))
}

/// Ranked list of ids plus judgments over a shared pool.
fn ranked_and_judged() -> impl Strategy<Value = (Vec<String>, Judgments)> {
    (1usize..12, proptest::collection::vec(proptest::option::of(0u32..4), 12)).prop_flat_map(|(len, grades)| {
        let pool: Vec<String> = (0..12).map(|i| format!("p{i}")).collect();
        let judged: Judgments = pool
            .iter()
            .zip(&grades)
            .filter_map(|(d, g)| g.map(|g| (d.clone(), g)))
            .collect();
        (Just(pool).prop_shuffle().prop_map(move |p| p[..len].to_vec()), Just(judged))
    })
}

fn distinct_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    (2usize..max).prop_flat_map(|n| Just((0..n).map(|i| i as f64).collect::<Vec<_>>()).prop_shuffle())
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval((ranked, judged) in ranked_and_judged(), k in 1usize..15, t in 1u32..4) {
        for v in [
            ndcg_at_k(&ranked, &judged, k, Gain::Linear),
            ndcg_at_k(&ranked, &judged, k, Gain::Exponential),
            average_precision(&ranked, &judged, t),
            recall_at_k(&ranked, &judged, k, t),
        ] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
        }
    }

    #[test]
    fn ideal_order_scores_one(grades in proptest::collection::vec(0u32..4, 1..15), k in 1usize..20) {
        prop_assume!(grades.iter().any(|&g| g > 0));
        let judged: Judgments = grades.iter().enumerate().map(|(i, &g)| (format!("d{i}"), g)).collect();
        let mut ideal: Vec<(&String, &u32)> = judged.iter().collect();
        ideal.sort_by(|a, b| b.1.cmp(a.1));
        let ranked: Vec<&str> = ideal.iter().map(|(d, _)| d.as_str()).collect();
        prop_assert!((ndcg_at_k(&ranked, &judged, k, Gain::Linear) - 1.0).abs() < 1e-12);
        prop_assert!((ndcg_at_k(&ranked, &judged, k, Gain::Exponential) - 1.0).abs() < 1e-12);
        prop_assert!((average_precision(&ranked, &judged, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renaming_and_unjudged_tail_do_not_matter((ranked, judged) in ranked_and_judged(), k in 1usize..12, extra in 0usize..5) {
        let rename = |d: &str| format!("x-{d}");
        let ranked2: Vec<String> = ranked.iter().map(|d| rename(d)).collect();
        let judged2: Judgments = judged.iter().map(|(d, g)| (rename(d), *g)).collect();
        let mut tail = ranked.clone();
        let k = k.min(ranked.len());
        tail.truncate(k);
        tail.extend((0..extra).map(|i| format!("unjudged{i}")));
        let a = ndcg_at_k(&ranked, &judged, k, Gain::Linear);
        prop_assert_eq!(a, ndcg_at_k(&ranked2, &judged2, k, Gain::Linear));
        prop_assert_eq!(a, ndcg_at_k(&tail, &judged, k, Gain::Linear));
        prop_assert_eq!(recall_at_k(&ranked, &judged, k, 1), recall_at_k(&tail, &judged, k, 1));
        prop_assert_eq!(average_precision(&ranked, &judged, 1), average_precision(&ranked2, &judged2, 1));
    }

    #[test]
    fn report_is_mean_of_per_query_values(
        lists in proptest::collection::vec(ranked_and_judged(), 1..6),
    ) {
        let mut run = Run::new();
        let mut qrels = Qrels::new();
        let mut want_ndcg = 0.0;
        let mut want_map = 0.0;
        let mut judged_queries = 0usize;
        for (q, (ranked, judged)) in lists.iter().enumerate() {
            let qid = format!("q{q}");
            let n = ranked.len();
            run.insert(&qid, ranked.iter().enumerate().map(|(i, d)| RunEntry { doc_id: d.clone(), rank: i as u32 + 1, score: (n - i) as f64 }).collect());
            if judged.is_empty() {
                continue;
            }
            judged_queries += 1;
            for (d, g) in judged {
                qrels.insert(&qid, d, *g);
            }
            want_ndcg += ndcg_at_k(ranked, judged, 10, Gain::Linear);
            want_map += average_precision(ranked, judged, 1);
        }
        prop_assume!(judged_queries > 0);
        let settings = EvalSettings { cutoffs: vec![10], ..Default::default() };
        let r = evaluate_run(&run, &qrels, &settings).unwrap();
        prop_assert_eq!(r.query_count, judged_queries);
        prop_assert!((r.metrics["ndcg@10"] - want_ndcg / judged_queries as f64).abs() < 1e-12);
        prop_assert!((r.metrics["map"] - want_map / judged_queries as f64).abs() < 1e-12);
    }

    #[test]
    fn trec_round_trip(
        lists in proptest::collection::btree_map("[a-z][a-z0-9]{0,5}", proptest::collection::vec(-1e6f64..1e6, 0..12), 0..5),
    ) {
        let mut run = Run::new();
        for (qid, scores) in &lists {
            let mut scores = scores.clone();
            scores.sort_by(|a, b| b.total_cmp(a));
            run.insert(qid, scores.iter().enumerate().map(|(i, &s)| RunEntry { doc_id: format!("d{i}"), rank: i as u32 + 1, score: s }).collect());
        }
        let text = format_trec_run(&run, "tag").unwrap();
        let back = parse_trec_run(&text, Path::new("run")).unwrap();
        prop_assert_eq!(format_trec_run(&back, "tag").unwrap(), text);
        for (qid, entries) in run.iter() {
            if !entries.is_empty() {
                prop_assert_eq!(back.get(qid).unwrap(), entries);
            }
        }
    }

    #[test]
    fn pointwise_sorts_by_score(scores in proptest::collection::vec(-5i32..5, 0..40)) {
        let c = cands(scores.len());
        let r = pointwise_rerank(&Query::new("q", "x"), &c, |_, d| {
            let i: usize = d.doc_id[1..].parse().unwrap();
            Ok(scores[i] as f64)
        }, 3).unwrap();
        prop_assert!(r.is_permutation());
        for w in r.order.windows(2) {
            let (a, b) = (scores[w[0]], scores[w[1]]);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
    }

    #[test]
    fn heapsort_top_k_is_exact(scores in distinct_scores(60), k in 1usize..15) {
        let n = scores.len();
        let k = k.min(n);
        let c = cands(n);
        let idx = |d: &Candidate| d.doc_id[1..].parse::<usize>().unwrap();
        let r = pairwise_heapsort(&Query::new("q", "x"), &c, |_, a, b| {
            Ok(if scores[idx(a)] > scores[idx(b)] { Preference::AWins } else { Preference::BWins })
        }, k).unwrap();
        prop_assert!(r.is_permutation());
        let mut oracle: Vec<usize> = (0..n).collect();
        oracle.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        prop_assert_eq!(&r.order[..k], &oracle[..k]);
        // heapify takes at most 2n comparisons, each sift-down at most 2 log2 n
        let bound = 2 * n + 2 * k * ((n as f64).log2().ceil() as usize + 1);
        prop_assert!(r.model_calls <= bound, "{} > {}", r.model_calls, bound);
    }

    #[test]
    fn sliding_window_permutes_and_counts(n in 0usize..130, w in 2usize..25, s in 1usize..25) {
        prop_assume!(s < w);
        let cfg = SlidingWindowConfig { window_size: w, step: s };
        let c = cands(n);
        let r = listwise_sliding_window(&Query::new("q", "x"), &c, |_, win| Ok((0..win.len()).rev().collect()), &cfg).unwrap();
        prop_assert!(r.is_permutation());
        let expected = if n == 0 { 0 } else if n <= w { 1 } else { (n - w).div_ceil(s) + 1 };
        let windows = if n <= 1 { 0 } else { expected };
        prop_assert_eq!(window_starts(n, &cfg).len(), expected);
        prop_assert_eq!(r.model_calls, windows);
    }

    #[test]
    fn sliding_window_oracle_top(scores in distinct_scores(120), w in 4usize..21, s in 1usize..20) {
        prop_assume!(s < w);
        let n = scores.len();
        let cfg = SlidingWindowConfig { window_size: w, step: s };
        let c = cands(n);
        let idx = |d: &Candidate| d.doc_id[1..].parse::<usize>().unwrap();
        let r = listwise_sliding_window(&Query::new("q", "x"), &c, |_, win| {
            let mut o: Vec<usize> = (0..win.len()).collect();
            o.sort_by(|&a, &b| scores[idx(&win[b])].total_cmp(&scores[idx(&win[a])]));
            Ok(o)
        }, &cfg).unwrap();
        let mut oracle: Vec<usize> = (0..n).collect();
        oracle.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let top = (w - s).min(n);
        prop_assert_eq!(&r.order[..top], &oracle[..top]);
    }

    #[test]
    fn tournament_always_permutes(n in 0usize..120, sizes in proptest::collection::btree_set(1usize..100, 1..6), rounds in 1usize..3, max_group in 2usize..25) {
        let cfg = TournamentConfig { stage_sizes: sizes.into_iter().rev().collect(), rounds, max_group };
        prop_assume!(cfg.validate().is_ok());
        let c = cands(n);
        let r = tournament_rerank(&Query::new("q", "x"), &c, |_, g, m| Ok((0..m.min(g.len())).collect()), &cfg, 2).unwrap();
        prop_assert!(r.is_permutation());
        prop_assert_eq!(r.order.len(), n);
        if let Some(points) = &r.scores {
            prop_assert!(points.windows(2).all(|p| p[0] >= p[1]));
        }
    }
}

#[test]
fn per_query_map_keys() {
    let mut qrels = Qrels::new();
    qrels.insert("q", "a", 1);
    let mut run = Run::new();
    run.insert("q", vec![RunEntry { doc_id: "a".into(), rank: 1, score: 1.0 }]);
    let r = evaluate_run(&run, &qrels, &EvalSettings { cutoffs: vec![5, 10], ..Default::default() }).unwrap();
    let keys: Vec<&String> = r.metrics.keys().collect();
    assert_eq!(keys, ["map", "ndcg@10", "ndcg@5", "recall@10", "recall@5"]);
    assert_eq!(r.per_query["q"]["map"], 1.0);
}
