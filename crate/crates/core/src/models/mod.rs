//! Concrete relevance models built on the three backend contracts.
//!
//! Generation-based: [`Models::rankgpt_window`], [`Models::tourrank_select`].
//! Log-likelihood-based: [`Models::query_generation_score`],
//! [`Models::fine_grained_relevance_score`] (when logits are unavailable).
//! Logits-based: [`Models::relevance_generation_score`],
//! [`Models::prp_compare`], [`Models::first_window`].

mod parse;
pub mod templates;

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use parse::{extract_numbers, format_permutation, parse_permutation, ParsedPermutation};
pub use templates::{PromptTemplate, TemplateRegistry};

use crate::llm::marker::{self, Intent, Marker};
use crate::llm::{CallMeta, ChatMessage, GenerationOptions, LlmClient, LlmError};
use crate::ranking::{Candidate, Preference, Query};

/// Ordered relevance labels with strictly increasing gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet(Vec<(String, f64)>);

impl LabelSet {
    pub fn new(labels: Vec<(String, f64)>) -> Result<Self, String> {
        if labels.len() < 2 {
            return Err("a label set needs at least two labels".into());
        }
        if labels.windows(2).any(|w| w[0].1.partial_cmp(&w[1].1) != Some(std::cmp::Ordering::Less))
        {
            return Err("label gains must be strictly increasing".into());
        }
        if labels.iter().any(|(l, _)| l.split_whitespace().next().is_none()) {
            return Err("labels must be non-blank".into());
        }
        Ok(Self(labels))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(l, _)| l.as_str())
    }

    pub fn gains(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|(_, g)| *g)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self(vec![
            ("Not Relevant".into(), 0.0),
            ("Somewhat Relevant".into(), 1.0),
            ("Highly Relevant".into(), 2.0),
        ])
    }
}

/// `Not Relevant:0/Somewhat Relevant:1/Highly Relevant:2`
impl FromStr for LabelSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let labels = s
            .split('/')
            .map(|part| {
                let (label, gain) =
                    part.rsplit_once(':').ok_or_else(|| format!("label `{part}` lacks `:gain`"))?;
                let gain = gain.trim().parse().map_err(|_| format!("bad gain in `{part}`"))?;
                Ok((label.trim().to_owned(), gain))
            })
            .collect::<Result<Vec<_>, String>>()?;
        Self::new(labels)
    }
}

/// Which relevance-generation score to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceScore {
    /// score(yes) - score(no)
    #[default]
    YesMinusNo,
    /// score(yes) alone
    Yes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub generation: GenerationOptions,
    pub labels: LabelSet,
    pub relevance_score: RelevanceScore,
    /// Query both passage orders in PRP and call disagreement a tie.
    pub prp_both_orders: bool,
    /// Largest window accepted by the listwise models.
    pub max_window: usize,
    /// Passages are cut to this many whitespace-separated words.
    pub max_doc_words: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            generation: GenerationOptions::default(),
            labels: LabelSet::default(),
            relevance_score: RelevanceScore::default(),
            prp_both_orders: true,
            max_window: 20,
            max_doc_words: 300,
        }
    }
}

fn truncate_words(text: &str, max: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max {
        return words.join(" ");
    }
    words[..max].join(" ")
}

/// Model functions sharing one backend client, template set and config.
#[derive(Debug, Clone)]
pub struct Models {
    client: LlmClient,
    templates: Arc<TemplateRegistry>,
    cfg: ModelConfig,
}

impl Models {
    pub fn new(client: LlmClient, templates: Arc<TemplateRegistry>, cfg: ModelConfig) -> Self {
        Self { client, templates, cfg }
    }

    pub fn with_defaults(client: LlmClient) -> Self {
        Self::new(client, Arc::new(TemplateRegistry::default()), ModelConfig::default())
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn template(&self, name: &str) -> Result<&PromptTemplate, LlmError> {
        self.templates
            .get(name)
            .ok_or_else(|| LlmError::InvalidInput(format!("no prompt template named `{name}`")))
    }

    fn doc(&self, c: &Candidate) -> String {
        truncate_words(&c.content, self.cfg.max_doc_words)
    }

    fn render(
        &self,
        name: &str,
        vars: &[(&str, &str)],
        marker: &Marker,
    ) -> Result<(Vec<ChatMessage>, CallMeta), LlmError> {
        let t = self.template(name)?;
        Ok((t.render(vars, marker), CallMeta::template(t.version())))
    }

    fn numbered_items(&self, docs: &[Candidate]) -> String {
        docs.iter()
            .enumerate()
            .map(|(i, c)| format!("[{}] {}", i + 1, self.doc(c)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Yes/no relevance from next-token scores.
    pub fn relevance_generation_score(&self, query: &Query, doc: &Candidate) -> Result<f64, LlmError> {
        let marker = Marker::new(Intent::Pointwise, &query.id, vec![doc.doc_id.clone()]);
        let content = self.doc(doc);
        let (msgs, meta) = self.render(
            templates::RELEVANCE_GENERATION,
            &[("query", &query.text), ("doc", &content)],
            &marker,
        )?;
        let scores = self.client.next_token_scores(&msgs, &["yes".into(), "no".into()], &meta)?;
        Ok(match self.cfg.relevance_score {
            RelevanceScore::YesMinusNo => scores[0].value - scores[1].value,
            RelevanceScore::Yes => scores[0].value,
        })
    }

    /// Mean per-token log-probability of the query given the passage.
    pub fn query_generation_score(&self, query: &Query, doc: &Candidate) -> Result<f64, LlmError> {
        let marker = Marker::new(Intent::Pointwise, &query.id, vec![doc.doc_id.clone()]);
        let content = self.doc(doc);
        let (msgs, meta) =
            self.render(templates::QUERY_GENERATION, &[("doc", &content)], &marker)?;
        let ll = self.client.loglikelihood(&msgs, &query.text, &meta)?;
        Ok(ll.mean_logprob())
    }

    /// Expected gain under a softmax over per-label scores.
    ///
    /// Uses first-token logits when the backend offers them, otherwise the
    /// log-likelihood of each full label.
    pub fn fine_grained_relevance_score(
        &self,
        query: &Query,
        doc: &Candidate,
    ) -> Result<f64, LlmError> {
        let labels: Vec<String> = self.cfg.labels.labels().map(str::to_owned).collect();
        let mut marker = Marker::new(Intent::Pointwise, &query.id, vec![doc.doc_id.clone()]);
        marker.labels = Some(labels.clone());
        let quoted: Vec<String> = labels.iter().rev().map(|l| format!("'{l}'")).collect();
        let label_text = match quoted.split_last() {
            Some((last, init)) if !init.is_empty() => format!("{}, or {last}", init.join(", ")),
            _ => quoted.join(""),
        };
        let content = self.doc(doc);
        let (msgs, meta) = self.render(
            templates::FINE_GRAINED,
            &[("query", &query.text), ("doc", &content), ("labels", &label_text)],
            &marker,
        )?;
        let caps = self.client.capabilities();
        let scores: Vec<f64> = if caps.supports_logits {
            let first_tokens: Vec<String> = labels
                .iter()
                .map(|l| l.split_whitespace().next().unwrap_or_default().to_owned())
                .collect();
            let mut distinct = first_tokens.clone();
            distinct.sort();
            distinct.dedup();
            if distinct.len() != first_tokens.len() {
                return Err(LlmError::TokenResolution(format!(
                    "labels share a first token: {first_tokens:?}"
                )));
            }
            self.client
                .next_token_scores(&msgs, &first_tokens, &meta)?
                .into_iter()
                .map(|s| s.value)
                .collect()
        } else if caps.supports_loglikelihood {
            labels
                .iter()
                .map(|l| self.client.loglikelihood(&msgs, l, &meta).map(|r| r.total_logprob))
                .collect::<Result<_, _>>()?
        } else {
            return Err(LlmError::CapabilityNotSupported {
                backend: self.client.backend_name().to_owned(),
                operation: crate::llm::Operation::Logits,
            });
        };
        Ok(expected_gain(&scores, &self.cfg.labels.gains().collect::<Vec<_>>()))
    }

    fn prp_once(&self, query: &Query, a: &Candidate, b: &Candidate) -> Result<Preference, LlmError> {
        let marker = Marker::new(Intent::Pairwise, &query.id, vec![a.doc_id.clone(), b.doc_id.clone()]);
        let (da, db) = (self.doc(a), self.doc(b));
        let (msgs, meta) = self.render(
            templates::PRP,
            &[("query", &query.text), ("docA", &da), ("docB", &db)],
            &marker,
        )?;
        let s = self.client.next_token_scores(&msgs, &["A".into(), "B".into()], &meta)?;
        Ok(if s[0].value > s[1].value {
            Preference::AWins
        } else if s[1].value > s[0].value {
            Preference::BWins
        } else {
            Preference::Tie
        })
    }

    /// Pairwise preference from identifier logits, checked in both orders.
    pub fn prp_compare(&self, query: &Query, a: &Candidate, b: &Candidate) -> Result<Preference, LlmError> {
        let first = self.prp_once(query, a, b)?;
        if !self.cfg.prp_both_orders {
            return Ok(first);
        }
        let second = self.prp_once(query, b, a)?.flip();
        Ok(if first == second { first } else { Preference::Tie })
    }

    fn check_window(&self, n: usize) -> Result<(), LlmError> {
        if n == 0 || n > self.cfg.max_window {
            return Err(LlmError::InvalidInput(format!(
                "window of {n} passages, expected 1..={}",
                self.cfg.max_window
            )));
        }
        Ok(())
    }

    fn rankgpt_render(&self, query: &Query, window: &[Candidate]) -> Result<(Vec<ChatMessage>, CallMeta), LlmError> {
        let marker = Marker::new(
            Intent::Listwise,
            &query.id,
            window.iter().map(|c| c.doc_id.clone()).collect(),
        );
        let items = self.numbered_items(window);
        let num = window.len().to_string();
        let (msgs, meta) = self.render(
            templates::RANKGPT,
            &[("query", &query.text), ("items", &items), ("num", &num)],
            &marker,
        )?;
        Ok((msgs, meta.with_window(window.len())))
    }

    /// The listwise prompt for `window` as it would be sent, without the
    /// routing marker.
    pub fn rankgpt_messages(&self, query: &Query, window: &[Candidate]) -> Result<Vec<ChatMessage>, LlmError> {
        self.check_window(window.len())?;
        let (msgs, _) = self.rankgpt_render(query, window)?;
        Ok(marker::strip(&msgs))
    }

    /// Listwise permutation from a generated `[i] > [j] > ...` reply.
    pub fn rankgpt_window(&self, query: &Query, window: &[Candidate]) -> Result<Vec<usize>, LlmError> {
        self.check_window(window.len())?;
        if window.len() == 1 {
            return Ok(vec![0]);
        }
        let (msgs, meta) = self.rankgpt_render(query, window)?;
        let (res, ticket) = self.client.generate(&msgs, &self.cfg.generation, &meta)?;
        let parsed = parse_permutation(&res.text, window.len());
        if parsed.repaired {
            ticket.mark_repaired();
        }
        Ok(parsed.indices)
    }

    /// Listwise permutation from first-position identifier logits.
    pub fn first_window(&self, query: &Query, window: &[Candidate]) -> Result<Vec<usize>, LlmError> {
        if window.len() > self.cfg.max_window.min(20) {
            return Err(LlmError::TokenResolution(format!(
                "identifier {} is not guaranteed to be a single token",
                window.len()
            )));
        }
        self.check_window(window.len())?;
        if window.len() == 1 {
            return Ok(vec![0]);
        }
        let marker = Marker::new(
            Intent::Listwise,
            &query.id,
            window.iter().map(|c| c.doc_id.clone()).collect(),
        );
        let items = self.numbered_items(window);
        let num = window.len().to_string();
        let (msgs, meta) = self.render(
            templates::FIRST,
            &[("query", &query.text), ("items", &items), ("num", &num)],
            &marker,
        )?;
        let ids: Vec<String> = (1..=window.len()).map(|i| i.to_string()).collect();
        let scores = self.client.next_token_scores(&msgs, &ids, &meta.with_window(window.len()))?;
        let mut order: Vec<usize> = (0..window.len()).collect();
        order.sort_by(|&a, &b| scores[b].value.total_cmp(&scores[a].value).then(a.cmp(&b)));
        Ok(order)
    }

    /// Picks the `m` most relevant members of `group` (group-local indices).
    ///
    /// Unparseable, out-of-range or repeated identifiers are dropped, extras
    /// beyond `m` are cut, and a shortfall is filled with the earliest
    /// unpicked members.
    pub fn tourrank_select(&self, query: &Query, group: &[Candidate], m: usize) -> Result<Vec<usize>, LlmError> {
        if m == 0 {
            return Ok(Vec::new());
        }
        if m >= group.len() {
            return Ok((0..group.len()).collect());
        }
        let mut marker = Marker::new(
            Intent::Select,
            &query.id,
            group.iter().map(|c| c.doc_id.clone()).collect(),
        );
        marker.select = Some(m);
        let items = self.numbered_items(group);
        let (num, m_text) = (group.len().to_string(), m.to_string());
        let (msgs, meta) = self.render(
            templates::TOURRANK,
            &[("query", &query.text), ("items", &items), ("num", &num), ("m", &m_text)],
            &marker,
        )?;
        let (res, ticket) = self.client.generate(&msgs, &self.cfg.generation, &meta)?;
        let (mut picks, dropped) = parse::valid_ids(&res.text, group.len());
        let mut repaired = dropped || picks.len() != m;
        picks.truncate(m);
        for i in 0..group.len() {
            if picks.len() == m {
                break;
            }
            if !picks.contains(&i) {
                picks.push(i);
                repaired = true;
            }
        }
        if repaired {
            ticket.mark_repaired();
        }
        Ok(picks)
    }
}

/// Σ softmax(scores)_i · gains_i, computed with the max-shift.
pub fn expected_gain(scores: &[f64], gains: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().zip(gains).map(|(w, g)| w / total * g).sum()
}

/// A pointwise score function usable by [`ensemble_pointwise`].
pub type ScoreFn<'a> = dyn Fn(&Query, &Candidate) -> Result<f64, LlmError> + Send + Sync + 'a;

/// Weighted sum of independent pointwise scores.
pub fn ensemble_pointwise(
    query: &Query,
    doc: &Candidate,
    members: &[&ScoreFn<'_>],
    weights: &[f64],
) -> Result<f64, LlmError> {
    if members.is_empty() || members.len() != weights.len() {
        return Err(LlmError::InvalidInput(format!(
            "ensemble needs matching non-empty members and weights, got {} and {}",
            members.len(),
            weights.len()
        )));
    }
    members
        .iter()
        .zip(weights)
        .map(|(f, w)| f(query, doc).map(|s| w * s))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_gain_examples() {
        let gains = [0.0, 1.0, 2.0];
        assert!((expected_gain(&[0.3, 0.3, 0.3], &gains) - 1.0).abs() < 1e-12);
        assert!((expected_gain(&[0.0, 0.0, 100.0], &gains) - 2.0).abs() < 1e-6);
        let ln = |x: f64| x.ln();
        let v = expected_gain(&[0.0, ln(2.0), ln(4.0)], &gains);
        assert!((v - 10.0 / 7.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn label_set_parsing() {
        let l: LabelSet = "Not Relevant:0/Somewhat Relevant:1/Highly Relevant:2".parse().unwrap();
        assert_eq!(l, LabelSet::default());
        assert!("A:1/B:1".parse::<LabelSet>().is_err());
        assert!("A:0".parse::<LabelSet>().is_err());
        assert!("A/B:1".parse::<LabelSet>().is_err());
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_words("a  b\nc d", 3), "a b c");
        assert_eq!(truncate_words("a b", 3), "a b");
    }
}
