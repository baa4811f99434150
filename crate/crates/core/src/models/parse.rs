//! Identifier extraction from free-form ranking replies.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPermutation {
    /// Window-local, 0-based.
    pub indices: Vec<usize>,
    pub repaired: bool,
    pub raw: String,
}

/// Every maximal run of ASCII digits, in order. Runs too long to fit in a
/// `usize` come back as `None`.
pub fn extract_numbers(raw: &str) -> Vec<Option<usize>> {
    let mut out = Vec::new();
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            out.push(raw[start..i].parse().ok());
        } else {
            i += 1;
        }
    }
    out
}

/// 1-based identifiers mapped to 0-based indices in order of first
/// appearance. The flag reports whether anything had to be dropped.
pub(crate) fn valid_ids(raw: &str, w: usize) -> (Vec<usize>, bool) {
    let mut seen = vec![false; w];
    let mut ids = Vec::new();
    let mut dropped = false;
    for n in extract_numbers(raw) {
        match n {
            Some(k) if (1..=w).contains(&k) && !seen[k - 1] => {
                seen[k - 1] = true;
                ids.push(k - 1);
            }
            _ => dropped = true,
        }
    }
    (ids, dropped)
}

/// Parses a reply such as `"[2] > [1] > [3]"` into a permutation of `0..w`.
///
/// Out-of-range and repeated identifiers are dropped, and identifiers that
/// never appear are appended in ascending order. Never fails: an empty or
/// unusable reply yields the identity with `repaired = true`.
pub fn parse_permutation(raw: &str, w: usize) -> ParsedPermutation {
    let (mut indices, dropped) = valid_ids(raw, w);
    let missing = indices.len() < w;
    if missing {
        let mut present = vec![false; w];
        for &i in &indices {
            present[i] = true;
        }
        indices.extend((0..w).filter(|&i| !present[i]));
    }
    ParsedPermutation { indices, repaired: dropped || missing, raw: raw.to_owned() }
}

/// Renders a window-local permutation as `"[2] > [1] > [3]"`.
pub fn format_permutation(indices: &[usize]) -> String {
    indices.iter().map(|i| format!("[{}]", i + 1)).collect::<Vec<_>>().join(" > ")
}
