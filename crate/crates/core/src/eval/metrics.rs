//! trec_eval-compatible ranking metrics. Unjudged documents count as
//! grade 0.

use serde::{Deserialize, Serialize};

use super::Judgments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// gain = grade (trec_eval `ndcg_cut`)
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    pub fn of(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => f64::from(grade),
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

/// DCG of a grade sequence, truncated at `k`.
pub fn dcg(grades: impl IntoIterator<Item = u32>, k: usize, gain: Gain) -> f64 {
    grades
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain.of(g) / ((i + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], judged: &Judgments, k: usize, gain: Gain) -> f64 {
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal, k, gain);
    if idcg == 0.0 {
        return 0.0;
    }
    let grades = ranked.iter().map(|d| judged.get(d.as_ref()).copied().unwrap_or(0));
    dcg(grades, k, gain) / idcg
}

fn relevant_count(judged: &Judgments, threshold: u32) -> usize {
    judged.values().filter(|&&g| g >= threshold).count()
}

/// Uninterpolated average precision over the full ranking.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], judged: &Judgments, threshold: u32) -> f64 {
    let total = relevant_count(judged, threshold);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if judged.get(d.as_ref()).is_some_and(|&g| g >= threshold) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], judged: &Judgments, k: usize, threshold: u32) -> f64 {
    let total = relevant_count(judged, threshold);
    if total == 0 {
        return 0.0;
    }
    let found = ranked
        .iter()
        .take(k)
        .filter(|d| judged.get(d.as_ref()).is_some_and(|&g| g >= threshold))
        .count();
    found as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judged(pairs: &[(&str, u32)]) -> Judgments {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ndcg_examples() {
        let j = judged(&[("a", 2), ("b", 0)]);
        assert_eq!(ndcg_at_k(&["a", "b"], &j, 2, Gain::Linear), 1.0);
        let v = ndcg_at_k(&["b", "a"], &j, 2, Gain::Linear);
        assert!((v - 0.63093).abs() < 1e-4, "{v}");
        assert_eq!(ndcg_at_k(&["a"], &judged(&[("a", 0)]), 10, Gain::Linear), 0.0);
    }

    #[test]
    fn exponential_gain() {
        let j = judged(&[("a", 1), ("b", 3)]);
        // ranked a,b: (1 + 7/log2 3) / (7 + 1/log2 3)
        let want = (1.0 + 7.0 / 3f64.log2()) / (7.0 + 1.0 / 3f64.log2());
        assert!((ndcg_at_k(&["a", "b"], &j, 2, Gain::Exponential) - want).abs() < 1e-12);
    }

    #[test]
    fn ap_examples() {
        let j = judged(&[("a", 1), ("b", 1)]);
        assert_eq!(average_precision(&["a", "b"], &j, 1), 1.0);
        let j = judged(&[("a", 0), ("b", 1)]);
        assert_eq!(average_precision(&["a", "b"], &j, 1), 0.5);
        assert_eq!(average_precision(&["a"], &judged(&[("a", 0)]), 1), 0.0);
        // threshold 2 makes grade-1 docs non-relevant
        let j = judged(&[("a", 1), ("b", 2)]);
        assert_eq!(average_precision(&["a", "b"], &j, 2), 0.5);
    }

    #[test]
    fn recall_examples() {
        let j = judged(&[("a", 1), ("b", 1)]);
        assert_eq!(recall_at_k(&["a", "b", "c"], &j, 2, 1), 1.0);
        assert_eq!(recall_at_k(&["a", "c", "b"], &j, 2, 1), 0.5);
        assert_eq!(recall_at_k(&["b", "a"], &j, 100, 1), 1.0);
        assert_eq!(recall_at_k(&["x"], &judged(&[("a", 0)]), 5, 1), 0.0);
    }
}
