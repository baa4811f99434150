use serde::{Deserialize, Serialize};

use super::{is_permutation, Candidate, Paradigm, Query, RankError, Ranking};
use crate::llm::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlidingWindowConfig {
    pub window_size: usize,
    pub step: usize,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        Self { window_size: 20, step: 10 }
    }
}

impl SlidingWindowConfig {
    pub fn validate(&self) -> Result<(), RankError> {
        if self.step == 0 || self.window_size == 0 || self.step > self.window_size {
            return Err(RankError::Config(format!(
                "sliding window needs 1 <= step <= window_size, got window_size={} step={}",
                self.window_size, self.step
            )));
        }
        Ok(())
    }
}

/// Window start offsets in processing order (back to front).
pub fn window_starts(n: usize, cfg: &SlidingWindowConfig) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut starts = vec![n.saturating_sub(cfg.window_size)];
    while let Some(&last) = starts.last() {
        if last == 0 {
            break;
        }
        starts.push(last.saturating_sub(cfg.step));
    }
    starts
}

/// One back-to-front sliding-window pass.
///
/// Each window `[start, start + w)` of the working list is handed to
/// `window_fn`, whose returned window-local permutation replaces it in
/// place. With a perfect `window_fn` the final top `w - s` is exact.
pub fn listwise_sliding_window<F>(
    query: &Query,
    candidates: &[Candidate],
    mut window_fn: F,
    cfg: &SlidingWindowConfig,
) -> Result<Ranking, RankError>
where
    F: FnMut(&Query, &[Candidate]) -> Result<Vec<usize>, LlmError>,
{
    cfg.validate()?;
    let n = candidates.len();
    if n <= 1 {
        return Ok(Ranking::identity(n, Paradigm::ListwiseSlidingWindow));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut calls = 0;
    for start in window_starts(n, cfg) {
        let end = (start + cfg.window_size).min(n);
        let window: Vec<Candidate> = order[start..end].iter().map(|&i| candidates[i].clone()).collect();
        calls += 1;
        let perm = window_fn(query, &window).map_err(|source| RankError::Window { start, source })?;
        if !is_permutation(&perm, window.len()) {
            return Err(RankError::InvalidPermutation { start, len: window.len(), got: perm });
        }
        let reordered: Vec<usize> = perm.iter().map(|&j| order[start + j]).collect();
        order[start..end].copy_from_slice(&reordered);
    }
    Ok(Ranking { order, paradigm: Paradigm::ListwiseSlidingWindow, scores: None, model_calls: calls })
}
