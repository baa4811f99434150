//! Approach registry: each named approach pairs a ranking driver with a
//! model function.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::llm::LlmClient;
use crate::models::{ensemble_pointwise, LabelSet, ModelConfig, Models, RelevanceScore, ScoreFn, TemplateRegistry};
use crate::ranking::{
    listwise_sliding_window, pairwise_heapsort, pointwise_rerank, tournament_rerank,
    validate_candidates, Candidate, Paradigm, Query, RankError, Ranking, SlidingWindowConfig,
    TournamentConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    Rankgpt,
    First,
    RelevanceGeneration,
    QueryGeneration,
    FineGrained,
    EnsemblePointwise,
    PrpHeap,
    Tourrank,
    Identity,
}

impl Approach {
    pub const ALL: [Approach; 9] = [
        Approach::Rankgpt,
        Approach::First,
        Approach::RelevanceGeneration,
        Approach::QueryGeneration,
        Approach::FineGrained,
        Approach::EnsemblePointwise,
        Approach::PrpHeap,
        Approach::Tourrank,
        Approach::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Rankgpt => "rankgpt",
            Approach::First => "first",
            Approach::RelevanceGeneration => "relevance-generation",
            Approach::QueryGeneration => "query-generation",
            Approach::FineGrained => "fine-grained",
            Approach::EnsemblePointwise => "ensemble-pointwise",
            Approach::PrpHeap => "prp-heap",
            Approach::Tourrank => "tourrank",
            Approach::Identity => "identity",
        }
    }

    pub fn paradigm(self) -> Paradigm {
        match self {
            Approach::Rankgpt | Approach::First => Paradigm::ListwiseSlidingWindow,
            Approach::RelevanceGeneration
            | Approach::QueryGeneration
            | Approach::FineGrained
            | Approach::EnsemblePointwise => Paradigm::Pointwise,
            Approach::PrpHeap => Paradigm::PairwiseHeapsort,
            Approach::Tourrank => Paradigm::Tournament,
            Approach::Identity => Paradigm::Identity,
        }
    }

    pub fn registered() -> String {
        Self::ALL.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = RankError;

    fn from_str(s: &str) -> Result<Self, RankError> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let alias = match norm.as_str() {
            "relgen" => "relevance-generation",
            "qgen" => "query-generation",
            "prp" => "prp-heap",
            "none" | "bm25" => "identity",
            other => other,
        };
        Self::ALL.into_iter().find(|a| a.name() == alias).ok_or_else(|| {
            RankError::Config(format!(
                "unknown reranking approach `{s}`; registered approaches: {}",
                Self::registered()
            ))
        })
    }
}

/// Driver and model parameters for one approach. Every field has a
/// concrete default so a serialized copy fully describes a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub window: SlidingWindowConfig,
    /// Heap extractions for `prp-heap`; `None` sorts the whole list.
    pub heap_k: Option<usize>,
    pub tournament: TournamentConfig,
    /// Concurrent model calls within one query (pointwise, tournament).
    pub parallelism: usize,
    pub model: ModelConfig,
    /// Weights of relevance generation and query generation in
    /// `ensemble-pointwise`.
    pub ensemble_weights: Vec<f64>,
    pub template_dir: Option<PathBuf>,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            window: SlidingWindowConfig::default(),
            heap_k: None,
            tournament: TournamentConfig::default(),
            parallelism: 4,
            model: ModelConfig::default(),
            ensemble_weights: vec![1.0, 1.0],
            template_dir: None,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, RankError> {
    v.split(['/', ';', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| RankError::Config(format!("{key}: bad element `{s}`"))))
        .collect()
}

impl RerankConfig {
    /// Applies `--reranking_args` pairs. List values use `/` separators,
    /// e.g. `stage_sizes=100/50/20/10/5/2`.
    pub fn apply_kv(&mut self, kv: &BTreeMap<String, String>) -> Result<(), RankError> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T, RankError> {
            v.trim().parse().map_err(|_| RankError::Config(format!("reranking_args {k}={v}")))
        }
        for (k, v) in kv {
            match k.as_str() {
                "window_size" => self.window.window_size = num(k, v)?,
                "step" => self.window.step = num(k, v)?,
                "k" | "topk" => self.heap_k = Some(num(k, v)?),
                "stage_sizes" => self.tournament.stage_sizes = parse_list(k, v)?,
                "rounds" | "tournaments" => self.tournament.rounds = num(k, v)?,
                "max_group" => self.tournament.max_group = num(k, v)?,
                "parallelism" => self.parallelism = num(k, v)?,
                "max_window" => self.model.max_window = num(k, v)?,
                "max_doc_words" => self.model.max_doc_words = num(k, v)?,
                "prp_both_orders" => self.model.prp_both_orders = num(k, v)?,
                "relevance_score" => {
                    self.model.relevance_score = match v.as_str() {
                        "yes" => RelevanceScore::Yes,
                        "yes_minus_no" | "yes-no" => RelevanceScore::YesMinusNo,
                        _ => return Err(RankError::Config(format!("relevance_score={v}"))),
                    }
                }
                "labels" => {
                    self.model.labels = v.parse::<LabelSet>().map_err(RankError::Config)?
                }
                "weights" => self.ensemble_weights = parse_list(k, v)?,
                "template_dir" => self.template_dir = Some(PathBuf::from(v)),
                other => {
                    return Err(RankError::Config(format!("unknown reranking_args key `{other}`")))
                }
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), RankError> {
        self.window.validate()?;
        self.tournament.validate()?;
        if self.window.window_size > self.model.max_window {
            return Err(RankError::Config(format!(
                "window_size {} exceeds max_window {}",
                self.window.window_size, self.model.max_window
            )));
        }
        if self.heap_k == Some(0) {
            return Err(RankError::Config("k must be >= 1".into()));
        }
        if self.ensemble_weights.len() != 2 {
            return Err(RankError::Config("weights takes exactly two values".into()));
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateRegistry, RankError> {
        match &self.template_dir {
            Some(dir) => TemplateRegistry::with_overrides(dir)
                .map_err(|e| RankError::Config(format!("templates in {}: {e}", dir.display()))),
            None => Ok(TemplateRegistry::default()),
        }
    }
}

/// Reranks one query's candidates with the named approach.
///
/// The client is scoped to the query and the approach's paradigm so every
/// backend call lands in the trace under that query.
pub fn rerank(
    query: &Query,
    candidates: &[Candidate],
    approach: Approach,
    client: &LlmClient,
    templates: Arc<TemplateRegistry>,
    cfg: &RerankConfig,
) -> Result<Ranking, RankError> {
    validate_candidates(candidates)?;
    let paradigm = approach.paradigm();
    let models = Models::new(client.scoped(&query.id, paradigm), templates, cfg.model.clone());
    let par = cfg.parallelism.max(1);
    match approach {
        Approach::Identity => Ok(Ranking::identity(candidates.len(), Paradigm::Identity)),
        Approach::Rankgpt => listwise_sliding_window(
            query,
            candidates,
            |q, w| models.rankgpt_window(q, w),
            &cfg.window,
        ),
        Approach::First => listwise_sliding_window(
            query,
            candidates,
            |q, w| models.first_window(q, w),
            &cfg.window,
        ),
        Approach::RelevanceGeneration => pointwise_rerank(
            query,
            candidates,
            |q, d| models.relevance_generation_score(q, d),
            par,
        ),
        Approach::QueryGeneration => {
            pointwise_rerank(query, candidates, |q, d| models.query_generation_score(q, d), par)
        }
        Approach::FineGrained => pointwise_rerank(
            query,
            candidates,
            |q, d| models.fine_grained_relevance_score(q, d),
            par,
        ),
        Approach::EnsemblePointwise => {
            let relgen = |q: &Query, d: &Candidate| models.relevance_generation_score(q, d);
            let qgen = |q: &Query, d: &Candidate| models.query_generation_score(q, d);
            let members: [&ScoreFn<'_>; 2] = [&relgen, &qgen];
            pointwise_rerank(
                query,
                candidates,
                |q, d| ensemble_pointwise(q, d, &members, &cfg.ensemble_weights),
                par,
            )
        }
        Approach::PrpHeap => {
            let k = cfg.heap_k.unwrap_or(candidates.len()).min(candidates.len()).max(1);
            pairwise_heapsort(query, candidates, |q, a, b| models.prp_compare(q, a, b), k)
        }
        Approach::Tourrank => tournament_rerank(
            query,
            candidates,
            |q, g, m| models.tourrank_select(q, g, m),
            &cfg.tournament,
            par,
        ),
    }
}

/// Convenience wrapper holding an approach, a client and its configuration.
#[derive(Debug, Clone)]
pub struct Reranker {
    approach: Approach,
    client: LlmClient,
    templates: Arc<TemplateRegistry>,
    cfg: RerankConfig,
}

impl Reranker {
    pub fn new(approach: &str, client: LlmClient, cfg: RerankConfig) -> Result<Self, RankError> {
        let approach = approach.parse()?;
        cfg.validate()?;
        let templates = Arc::new(cfg.templates()?);
        Ok(Self { approach, client, templates, cfg })
    }

    pub fn approach(&self) -> Approach {
        self.approach
    }

    pub fn rerank(&self, query: &Query, candidates: &[Candidate]) -> Result<Ranking, RankError> {
        rerank(query, candidates, self.approach, &self.client, self.templates.clone(), &self.cfg)
    }

    /// Reorders plain passages; ids are `doc0..`, the query id is `q0`.
    pub fn rerank_texts(&self, query: &str, docs: &[&str]) -> Result<Vec<String>, RankError> {
        let candidates = crate::ranking::candidates_from(
            docs.iter().enumerate().map(|(i, d)| (format!("doc{i}"), d.to_string())),
        );
        let ranking = self.rerank(&Query::new("q0", query), &candidates)?;
        Ok(ranking.order.iter().map(|&i| docs[i].to_string()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn approach_lookup() {
        assert_eq!("rankgpt".parse::<Approach>().unwrap(), Approach::Rankgpt);
        assert_eq!("relevance_generation".parse::<Approach>().unwrap(), Approach::RelevanceGeneration);
        assert_eq!("PRP".parse::<Approach>().unwrap(), Approach::PrpHeap);
        let err = "nonsense".parse::<Approach>().unwrap_err().to_string();
        assert!(err.contains("rankgpt") && err.contains("tourrank"), "{err}");
        for a in Approach::ALL {
            assert_eq!(a.name().parse::<Approach>().unwrap(), a);
        }
    }

    #[test]
    fn kv_overrides() {
        let mut cfg = RerankConfig::default();
        let kv: BTreeMap<String, String> = [
            ("window_size", "10"),
            ("step", "5"),
            ("stage_sizes", "50/20/10"),
            ("k", "10"),
            ("labels", "no:0/yes:1"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        cfg.apply_kv(&kv).unwrap();
        assert_eq!(cfg.window, SlidingWindowConfig { window_size: 10, step: 5 });
        assert_eq!(cfg.tournament.stage_sizes, [50, 20, 10]);
        assert_eq!(cfg.heap_k, Some(10));
        assert_eq!(cfg.model.labels.len(), 2);

        let mut bad = BTreeMap::new();
        bad.insert("step".to_string(), "30".to_string());
        assert!(RerankConfig::default().apply_kv(&bad).is_err());
        let mut unknown = BTreeMap::new();
        unknown.insert("windowsize".to_string(), "3".to_string());
        assert!(RerankConfig::default().apply_kv(&unknown).is_err());
    }
}
