use serde::{Deserialize, Serialize};

use super::{Candidate, Paradigm, Query, RankError, Ranking};
use crate::llm::LlmError;
use crate::util::parallel_map;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TournamentConfig {
    /// Field size at each stage, strictly decreasing. Sizes not below the
    /// candidate count are dropped and the count itself becomes stage 0.
    pub stage_sizes: Vec<usize>,
    pub rounds: usize,
    /// Largest group handed to a single selection call.
    pub max_group: usize,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        Self { stage_sizes: vec![100, 50, 20, 10, 5, 2], rounds: 1, max_group: 20 }
    }
}

impl TournamentConfig {
    pub fn validate(&self) -> Result<(), RankError> {
        if self.rounds == 0 || self.max_group == 0 {
            return Err(RankError::Config("tournament rounds and max_group must be >= 1".into()));
        }
        if self.stage_sizes.is_empty()
            || self.stage_sizes.contains(&0)
            || self.stage_sizes.windows(2).any(|w| w[0] <= w[1])
        {
            return Err(RankError::Config(format!(
                "stage_sizes must be strictly decreasing positive integers, got {:?}",
                self.stage_sizes
            )));
        }
        Ok(())
    }
}

/// Stage sizes for `n` candidates: `n` followed by every configured size
/// below it.
pub fn stage_schedule(n: usize, cfg: &TournamentConfig) -> Result<Vec<usize>, RankError> {
    cfg.validate()?;
    let mut sizes = vec![n];
    sizes.extend(cfg.stage_sizes.iter().copied().filter(|&s| s < n));
    Ok(sizes)
}

/// One group of a stage: standing positions and how many of them advance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPlan {
    pub members: Vec<usize>,
    pub quota: usize,
}

/// Splits a field of `current` standings into `ceil(current / max_group)`
/// round-robin groups whose quotas sum to `next`.
///
/// Group `g` holds standings `g, g+G, g+2G, ...` and advances as many
/// members as it has standings below `next`, so a perfectly ordered field
/// keeps exactly its top `next`.
pub fn plan_groups(current: usize, next: usize, max_group: usize) -> Vec<GroupPlan> {
    let groups = current.div_ceil(max_group.max(1)).max(1);
    (0..groups)
        .map(|g| GroupPlan {
            members: (g..current).step_by(groups).collect(),
            quota: if g < next { (next - g).div_ceil(groups) } else { 0 },
        })
        .collect()
}

/// Dedups and range-checks picks, filling any shortfall with the
/// best-standing unpicked members.
fn repair_selection(
    picks: Vec<usize>,
    group_len: usize,
    quota: usize,
    stage: usize,
) -> Result<Vec<usize>, RankError> {
    let mut taken = vec![false; group_len];
    let mut out = Vec::with_capacity(quota);
    for p in picks {
        if p < group_len && !taken[p] {
            taken[p] = true;
            out.push(p);
        }
    }
    if out.len() > quota {
        return Err(RankError::SelectionSize { stage, expected: quota, got: out.len() });
    }
    for (i, t) in taken.iter().enumerate() {
        if out.len() == quota {
            break;
        }
        if !t {
            out.push(i);
        }
    }
    Ok(out)
}

/// Tournament selection over `cfg.rounds` rounds.
///
/// Every round starts from the full field. At each stage the survivors,
/// ordered by accumulated points then initial rank, are split by
/// [`plan_groups`] and `select_fn` picks each group's advancing members
/// (group-local indices, group given in standing order). Each candidate
/// earns one point for every stage field it belongs to, the initial field
/// included. The final order is by points, ties by initial rank.
pub fn tournament_rerank<F>(
    query: &Query,
    candidates: &[Candidate],
    select_fn: F,
    cfg: &TournamentConfig,
    parallelism: usize,
) -> Result<Ranking, RankError>
where
    F: Fn(&Query, &[Candidate], usize) -> Result<Vec<usize>, LlmError> + Sync,
{
    let n = candidates.len();
    let schedule = stage_schedule(n.max(1), cfg)?;
    if n <= 1 {
        return Ok(Ranking::identity(n, Paradigm::Tournament));
    }
    let mut points = vec![0u64; n];
    let mut calls = 0;
    let standing = |points: &[u64], idx: &mut Vec<usize>| {
        idx.sort_by(|&a, &b| {
            points[b].cmp(&points[a]).then(candidates[a].initial_rank.cmp(&candidates[b].initial_rank))
        });
    };

    for _ in 0..cfg.rounds {
        let mut field: Vec<usize> = (0..n).collect();
        for &i in &field {
            points[i] += 1;
        }
        for (stage, pair) in schedule.windows(2).enumerate() {
            let next = pair[1];
            standing(&points, &mut field);
            let plans = plan_groups(field.len(), next, cfg.max_group);
            let picked = parallel_map(&plans, parallelism, |_, plan| -> Result<(Vec<usize>, bool), RankError> {
                let members: Vec<usize> = plan.members.iter().map(|&p| field[p]).collect();
                if plan.quota == 0 {
                    return Ok((Vec::new(), false));
                }
                if plan.quota >= members.len() {
                    return Ok((members, false));
                }
                let group: Vec<Candidate> = members.iter().map(|&i| candidates[i].clone()).collect();
                let picks = select_fn(query, &group, plan.quota)
                    .map_err(|source| RankError::Select { stage, source })?;
                let picks = repair_selection(picks, group.len(), plan.quota, stage)?;
                Ok((picks.into_iter().map(|j| members[j]).collect(), true))
            });
            let mut survivors = Vec::with_capacity(next);
            for r in picked {
                let (chosen, called) = r?;
                calls += usize::from(called);
                survivors.extend(chosen);
            }
            for &i in &survivors {
                points[i] += 1;
            }
            field = survivors;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    standing(&points, &mut order);
    let scores = order.iter().map(|&i| points[i] as f64).collect();
    Ok(Ranking { order, paradigm: Paradigm::Tournament, scores: Some(scores), model_calls: calls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::testutil::{cands, oracle_order};
    use std::collections::BTreeSet;

    fn q() -> Query {
        Query::new("q", "query")
    }

    fn perfect(
        scores: Vec<f64>,
    ) -> impl Fn(&Query, &[Candidate], usize) -> Result<Vec<usize>, LlmError> + Sync {
        move |_, group, m| {
            let s: Vec<f64> = group.iter().map(|c| scores[(c.initial_rank - 1) as usize]).collect();
            Ok(oracle_order(&s)[..m].to_vec())
        }
    }

    #[test]
    fn groups_for_default_funnel() {
        let p = plan_groups(100, 50, 20);
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|g| g.members.len() == 20 && g.quota == 10));
        assert_eq!(p[1].members[..3], [1, 6, 11]);

        let p = plan_groups(50, 20, 20);
        let sizes: Vec<_> = p.iter().map(|g| g.members.len()).collect();
        let quotas: Vec<_> = p.iter().map(|g| g.quota).collect();
        assert_eq!(sizes, [17, 17, 16]);
        assert_eq!(quotas, [7, 7, 6]);

        let p = plan_groups(20, 10, 20);
        assert_eq!((p.len(), p[0].quota), (1, 10));
    }

    #[test]
    fn quotas_sum_to_next() {
        for cur in 2..=120 {
            for next in 1..cur {
                for w in [1, 3, 7, 20] {
                    let p = plan_groups(cur, next, w);
                    assert_eq!(p.iter().map(|g| g.quota).sum::<usize>(), next);
                    assert!(p.iter().all(|g| g.quota <= g.members.len()));
                    let max = p.iter().map(|g| g.members.len()).max().unwrap();
                    let min = p.iter().map(|g| g.members.len()).min().unwrap();
                    assert!(max - min <= 1);
                }
            }
        }
    }

    #[test]
    fn four_candidate_points() {
        let scores = vec![4.0, 3.0, 2.0, 1.0];
        let cfg = TournamentConfig { stage_sizes: vec![4, 2, 1], ..Default::default() };
        let r = tournament_rerank(&q(), &cands(4), perfect(scores), &cfg, 1).unwrap();
        assert_eq!(r.order, [0, 1, 2, 3]);
        assert_eq!(r.scores.unwrap(), [3.0, 2.0, 1.0, 1.0]);
        assert_eq!(r.model_calls, 2);
    }

    #[test]
    fn two_rounds_double_points() {
        let scores = vec![4.0, 3.0, 2.0, 1.0];
        let one = TournamentConfig { stage_sizes: vec![4, 2, 1], ..Default::default() };
        let two = TournamentConfig { rounds: 2, ..one.clone() };
        let r1 = tournament_rerank(&q(), &cands(4), perfect(scores.clone()), &one, 1).unwrap();
        let r2 = tournament_rerank(&q(), &cands(4), perfect(scores), &two, 1).unwrap();
        assert_eq!(r1.order, r2.order);
        let doubled: Vec<f64> = r1.scores.unwrap().iter().map(|p| p * 2.0).collect();
        assert_eq!(r2.scores.unwrap(), doubled);
    }

    #[test]
    fn presorted_funnel_preserves_stage_sets() {
        let scores: Vec<f64> = (0..100).rev().map(f64::from).collect();
        let r = tournament_rerank(&q(), &cands(100), perfect(scores.clone()), &TournamentConfig::default(), 4)
            .unwrap();
        let oracle = oracle_order(&scores);
        for s in [100, 50, 20, 10, 5, 2] {
            let got: BTreeSet<_> = r.order[..s].iter().collect();
            let want: BTreeSet<_> = oracle[..s].iter().collect();
            assert_eq!(got, want, "stage {s}");
        }
    }

    #[test]
    fn schedule_clamps_to_field() {
        let cfg = TournamentConfig::default();
        assert_eq!(stage_schedule(30, &cfg).unwrap(), [30, 20, 10, 5, 2]);
        assert_eq!(stage_schedule(100, &cfg).unwrap(), [100, 50, 20, 10, 5, 2]);
        let bad = TournamentConfig { stage_sizes: vec![10, 10], ..Default::default() };
        assert!(stage_schedule(5, &bad).is_err());
    }

    #[test]
    fn sloppy_selection_is_repaired() {
        assert_eq!(repair_selection(vec![3, 3, 9], 5, 3, 0).unwrap(), [3, 0, 1]);
        assert!(matches!(
            repair_selection(vec![0, 1, 2], 5, 2, 1),
            Err(RankError::SelectionSize { stage: 1, expected: 2, got: 3 })
        ));
        let cfg = TournamentConfig { stage_sizes: vec![6, 3, 1], ..Default::default() };
        let r = tournament_rerank(&q(), &cands(6), |_, _, _| Ok(vec![42]), &cfg, 1).unwrap();
        assert_eq!(r.order, [0, 1, 2, 3, 4, 5]);
    }
}
