//! Batch reranking and evaluation over whole datasets.
//!
//! For each dataset, [`simple_evaluate`] reranks every query's top-`topk`
//! candidates and writes `<name>.run.trec` and `<name>.traces.jsonl` into
//! `output_dir`. It also writes one `report.json` covering all datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{info, warn};

use crate::eval::{
    evaluate_run, load_candidates, load_qrels, load_trec_run, write_trec_run, EvalError, EvalSettings, Gain,
    MetricReport, Run,
};
use crate::llm::{
    Backend, GenerationOptions, LlmClient, LlmError, MockBackend, OpenAiBackend, OpenAiConfig, RetryPolicy,
    ScoreTable,
};
use crate::ranking::{Paradigm, RankError, Ranking};
use crate::reranker::{rerank, Approach, RerankConfig};
use crate::trace::{read_traces, sort_records, write_traces, TraceSink};
use crate::util::parallel_map;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("backend: {0}")]
    Backend(String),
}

impl EvaluateError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EvaluateError::Io { path: path.to_owned(), source }
    }
}

impl From<RankError> for EvaluateError {
    fn from(e: RankError) -> Self {
        if e.llm_error().is_some() && !is_fatal(&e) {
            EvaluateError::Backend(e.to_string())
        } else {
            EvaluateError::Config(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    OpenaiCompatible,
    Mock,
}

impl std::str::FromStr for ModelType {
    type Err = EvaluateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openai_compatible" | "openai" => Ok(ModelType::OpenaiCompatible),
            "mock" => Ok(ModelType::Mock),
            other => Err(EvaluateError::Config(format!(
                "unknown model_type `{other}` (expected openai_compatible or mock)"
            ))),
        }
    }
}

/// Everything needed to reproduce an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model_type: ModelType,
    pub model_args: BTreeMap<String, String>,
    /// Decoding options forwarded to every generate call.
    pub model_fw_args: BTreeMap<String, String>,
    pub reranking_approach: String,
    pub reranking_args: BTreeMap<String, String>,
    pub datasets: Vec<String>,
    /// JSON file mapping dataset names to candidate and qrels paths.
    pub manifest: Option<PathBuf>,
    pub retriever: String,
    pub topk: usize,
    pub output_dir: PathBuf,
    /// Concurrent queries.
    pub workers: usize,
    pub resume: bool,
    pub map_threshold: u32,
    pub cutoffs: Vec<usize>,
    pub gain: Gain,
    /// Keep rendered prompts in traces (needed for SFT export).
    pub record_prompts: bool,
    pub run_tag: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            model_type: ModelType::OpenaiCompatible,
            model_args: BTreeMap::new(),
            model_fw_args: BTreeMap::new(),
            reranking_approach: "rankgpt".into(),
            reranking_args: BTreeMap::new(),
            datasets: Vec::new(),
            manifest: None,
            retriever: "bm25".into(),
            topk: 100,
            output_dir: PathBuf::from("results"),
            workers: 4,
            resume: false,
            map_threshold: 1,
            cutoffs: vec![1, 5, 10, 20, 100],
            gain: Gain::Linear,
            record_prompts: false,
            run_tag: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvaluateError> {
        if self.datasets.is_empty() {
            return Err(EvaluateError::Config("no datasets given".into()));
        }
        if self.topk == 0 {
            return Err(EvaluateError::Config("topk must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(EvaluateError::Config("workers must be >= 1".into()));
        }
        if self.map_threshold == 0 {
            return Err(EvaluateError::Config("map_threshold must be >= 1".into()));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(EvaluateError::Config("cutoffs must be non-empty and >= 1".into()));
        }
        self.reranking_approach.parse::<Approach>()?;
        Ok(())
    }

    /// Copy safe to write to disk: secret-looking model args are masked.
    pub fn redacted(&self) -> Self {
        let mut out = self.clone();
        for (k, v) in out.model_args.iter_mut() {
            if k.contains("key") || k.contains("token") || k.contains("secret") {
                *v = "***".into();
            }
        }
        out
    }

    fn tag(&self) -> String {
        self.run_tag.clone().unwrap_or_else(|| self.reranking_approach.clone())
    }
}

/// Parses `k=v,k2=v2`. Values may not contain commas.
pub fn parse_kv(s: &str) -> Result<BTreeMap<String, String>, EvaluateError> {
    let mut out = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| EvaluateError::Config(format!("expected key=value, got `{part}`")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(EvaluateError::Config(format!("empty key in `{part}`")));
        }
        if out.insert(k.to_owned(), v.trim().to_owned()).is_some() {
            return Err(EvaluateError::Config(format!("key `{k}` given twice")));
        }
    }
    Ok(out)
}

fn take_retry(args: &mut BTreeMap<String, String>) -> Result<RetryPolicy, EvaluateError> {
    let mut policy = RetryPolicy::default();
    let bad = |k: &str, v: &str| EvaluateError::Config(format!("model_args {k}={v}"));
    if let Some(v) = args.remove("max_attempts") {
        policy.max_attempts = v.parse().map_err(|_| bad("max_attempts", &v))?;
    }
    if let Some(v) = args.remove("retry_base_ms") {
        policy.base_delay_ms = v.parse().map_err(|_| bad("retry_base_ms", &v))?;
    }
    if policy.max_attempts == 0 {
        return Err(EvaluateError::Config("max_attempts must be >= 1".into()));
    }
    Ok(policy)
}

/// Builds the backend and retry policy named by `model_type` and
/// `model_args`. The mock needs `scores=<path>` holding a
/// `{query_id: {doc_id: score}}` table; `fail_queries=q1/q2` makes every
/// call for those queries fail.
pub fn build_backend(
    model_type: ModelType,
    model_args: &BTreeMap<String, String>,
) -> Result<(Arc<dyn Backend>, RetryPolicy), EvaluateError> {
    let mut args = model_args.clone();
    let retry = take_retry(&mut args)?;
    let backend: Arc<dyn Backend> = match model_type {
        ModelType::OpenaiCompatible => {
            let cfg = OpenAiConfig::from_kv(&args).map_err(|e| EvaluateError::Config(e.to_string()))?;
            Arc::new(OpenAiBackend::new(cfg).map_err(|e| EvaluateError::Backend(e.to_string()))?)
        }
        ModelType::Mock => {
            let mut b = MockBackend::builder();
            let mut have_scores = false;
            for (k, v) in &args {
                let num = |v: &str| v.parse::<f64>().map_err(|_| EvaluateError::Config(format!("model_args {k}={v}")));
                b = match k.as_str() {
                    "scores" => {
                        have_scores = true;
                        let table = ScoreTable::from_json_file(Path::new(v))
                            .map_err(|e| EvaluateError::Config(format!("mock scores {v}: {e}")))?;
                        b.oracle(table)
                    }
                    "missing_score" => b.missing_score(num(v)?),
                    "uniform_logprob" => b.uniform_logprob(num(v)?),
                    "text" => b.text(v.clone()),
                    "fail_queries" => v.split('/').filter(|q| !q.is_empty()).fold(b, |b, q| b.fail_query(q)),
                    other => return Err(EvaluateError::Config(format!("unknown mock model_args key `{other}`"))),
                };
            }
            if !have_scores {
                return Err(EvaluateError::Config("mock backend needs model_args scores=<path>".into()));
            }
            Arc::new(b.build())
        }
    };
    Ok((backend, retry))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub name: String,
    pub candidates: PathBuf,
    pub qrels: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidateSpec {
    Single(PathBuf),
    PerRetriever(BTreeMap<String, PathBuf>),
}

#[derive(Deserialize)]
struct ManifestEntry {
    candidates: CandidateSpec,
    qrels: PathBuf,
}

/// Resolves a dataset through the manifest, falling back to a directory
/// holding `<retriever>.jsonl` or `candidates.jsonl` plus `qrels.txt`.
pub fn resolve_dataset(name: &str, manifest: Option<&Path>, retriever: &str) -> Result<DatasetPaths, EvaluateError> {
    if let Some(mpath) = manifest {
        let text = fs::read_to_string(mpath).map_err(|e| EvaluateError::io(mpath, e))?;
        let entries: BTreeMap<String, ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| EvaluateError::Config(format!("manifest {}: {e}", mpath.display())))?;
        if let Some(entry) = entries.get(name) {
            let base = mpath.parent().unwrap_or(Path::new("."));
            let candidates = match &entry.candidates {
                CandidateSpec::Single(p) => p.clone(),
                CandidateSpec::PerRetriever(m) => m.get(retriever).cloned().ok_or_else(|| {
                    EvaluateError::Config(format!("dataset {name} has no candidates for retriever {retriever}"))
                })?,
            };
            return Ok(DatasetPaths { name: name.to_owned(), candidates: base.join(candidates), qrels: base.join(&entry.qrels) });
        }
    }
    let dir = Path::new(name);
    if !dir.is_dir() {
        return Err(EvaluateError::Config(format!(
            "dataset `{name}` is neither in the manifest nor a directory"
        )));
    }
    let per_retriever = dir.join(format!("{retriever}.jsonl"));
    let candidates = if per_retriever.is_file() { per_retriever } else { dir.join("candidates.jsonl") };
    let label = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "dataset".into());
    Ok(DatasetPaths { name: label, candidates, qrels: dir.join("qrels.txt") })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub queries: usize,
    /// Queries taken from an earlier run via resume.
    pub resumed: usize,
    /// Driver-level model invocations over reranked queries.
    pub model_calls: usize,
    /// Backend calls in the trace file, including failed ones.
    pub backend_calls: usize,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    pub latency_ms: f64,
    /// Queries that fell back to the initial order.
    pub failed_queries: Vec<QueryFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub metrics: MetricReport,
    pub run_path: PathBuf,
    pub traces_path: PathBuf,
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub datasets: BTreeMap<String, DatasetResult>,
    /// Aggregate metrics per dataset.
    pub metrics: BTreeMap<String, BTreeMap<String, f64>>,
    pub config: EvalConfig,
    /// Defaults materialized from the config.
    pub resolved: Value,
    pub traces_path: BTreeMap<String, PathBuf>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl EvaluationReport {
    pub fn metric(&self, dataset: &str, metric: &str) -> Option<f64> {
        self.metrics.get(dataset)?.get(metric).copied()
    }

    /// Totals over all datasets.
    pub fn total_stats(&self) -> RunStats {
        let mut t = RunStats::default();
        for d in self.datasets.values() {
            t.queries += d.stats.queries;
            t.resumed += d.stats.resumed;
            t.model_calls += d.stats.model_calls;
            t.backend_calls += d.stats.backend_calls;
            t.prompt_tokens += d.stats.prompt_tokens;
            t.generated_tokens += d.stats.generated_tokens;
            t.latency_ms += d.stats.latency_ms;
            t.failed_queries.extend(d.stats.failed_queries.iter().cloned());
        }
        t
    }
}

/// Errors that would hit every query the same way abort the run.
fn is_fatal(e: &RankError) -> bool {
    match e {
        RankError::Config(_) | RankError::InvalidCandidates(_) => true,
        _ => matches!(
            e.llm_error(),
            Some(LlmError::CapabilityNotSupported { .. } | LlmError::InvalidInput(_))
        ),
    }
}

struct Setup {
    approach: Approach,
    rerank_cfg: RerankConfig,
    templates: Arc<crate::models::TemplateRegistry>,
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    settings: EvalSettings,
}

fn setup(cfg: &EvalConfig) -> Result<Setup, EvaluateError> {
    cfg.validate()?;
    let approach: Approach = cfg.reranking_approach.parse()?;
    let mut rerank_cfg = RerankConfig::default();
    rerank_cfg.apply_kv(&cfg.reranking_args)?;
    rerank_cfg.model.generation =
        GenerationOptions::from_kv(&cfg.model_fw_args).map_err(|e| EvaluateError::Config(e.to_string()))?;
    let templates = Arc::new(rerank_cfg.templates()?);
    let (backend, retry) = build_backend(cfg.model_type, &cfg.model_args)?;
    let settings = EvalSettings { cutoffs: cfg.cutoffs.clone(), map_threshold: cfg.map_threshold, gain: cfg.gain };
    Ok(Setup { approach, rerank_cfg, templates, backend, retry, settings })
}

fn resolved_echo(cfg: &EvalConfig, s: &Setup) -> Value {
    let backend = match cfg.model_type {
        ModelType::OpenaiCompatible => {
            let mut args = cfg.model_args.clone();
            args.retain(|k, _| k != "max_attempts" && k != "retry_base_ms");
            match OpenAiConfig::from_kv(&args) {
                Ok(o) => json!({
                    "base_url": o.base_url,
                    "model": o.model,
                    "api_key": o.api_key.map(|_| "***"),
                    "logprobs": o.logprobs,
                    "top_logprobs": o.top_logprobs,
                    "max_concurrency": o.max_concurrency,
                    "timeout_s": o.timeout.as_secs_f64(),
                }),
                Err(_) => Value::Null,
            }
        }
        ModelType::Mock => json!({ "name": s.backend.name() }),
    };
    json!({
        "approach": s.approach.name(),
        "paradigm": s.approach.paradigm(),
        "rerank": s.rerank_cfg,
        "retry": {
            "max_attempts": s.retry.max_attempts,
            "base_delay_ms": s.retry.base_delay_ms,
            "multiplier": s.retry.multiplier,
            "jitter": s.retry.jitter,
        },
        "backend": backend,
        "eval": s.settings,
        "run_tag": cfg.tag(),
    })
}

fn run_dataset(cfg: &EvalConfig, s: &Setup, ds: &DatasetPaths) -> Result<DatasetResult, EvaluateError> {
    let mut queries = load_candidates(&ds.candidates)?;
    for qc in queries.values_mut() {
        qc.truncate(cfg.topk);
    }
    let qrels = load_qrels(&ds.qrels)?;
    let run_name = format!("{}.run.trec", ds.name);
    let traces_name = format!("{}.traces.jsonl", ds.name);
    let run_path = cfg.output_dir.join(&run_name);
    let traces_path = cfg.output_dir.join(&traces_name);

    let mut run = Run::new();
    let mut old_traces = Vec::new();
    if cfg.resume && run_path.is_file() {
        let previous = load_trec_run(&run_path)?;
        let done: BTreeSet<String> = previous
            .iter()
            .filter(|(qid, entries)| queries.get(*qid).is_some_and(|qc| qc.candidates.len() == entries.len()))
            .map(|(qid, _)| qid.to_owned())
            .collect();
        for qid in &done {
            run.insert(qid, previous.get(qid).unwrap_or_default().to_vec());
        }
        if traces_path.is_file() {
            old_traces = read_traces(&traces_path).map_err(|e| EvaluateError::io(&traces_path, e))?;
            old_traces.retain(|r| done.contains(&r.query_id));
        }
        info!(dataset = %ds.name, resumed = done.len(), "resuming");
    }
    let resumed = run.len();

    let pending: Vec<_> = queries.values().filter(|qc| run.get(&qc.query.id).is_none()).collect();
    let sink = Arc::new(TraceSink::new());
    let client = LlmClient::new(s.backend.clone())
        .with_retry(s.retry)
        .with_sink(sink.clone())
        .with_prompt_recording(cfg.record_prompts);

    let outcomes = parallel_map(&pending, cfg.workers, |_, qc| {
        rerank(&qc.query, &qc.candidates, s.approach, &client, s.templates.clone(), &s.rerank_cfg)
    });

    let mut stats = RunStats { queries: queries.len(), resumed, ..Default::default() };
    for (qc, outcome) in pending.iter().zip(outcomes) {
        let ranking = match outcome {
            Ok(r) => {
                stats.model_calls += r.model_calls;
                r
            }
            Err(e) if is_fatal(&e) => return Err(e.into()),
            Err(e) => {
                warn!(query = %qc.query.id, error = %e, "reranking failed; keeping initial order");
                stats.failed_queries.push(QueryFailure { query_id: qc.query.id.clone(), error: e.to_string() });
                Ranking::identity(qc.candidates.len(), Paradigm::Identity)
            }
        };
        run.insert_ranking(&qc.query.id, &qc.candidates, &ranking);
    }

    let mut records = old_traces;
    records.extend(sink.snapshot());
    sort_records(&mut records);
    stats.backend_calls = records.len();
    for r in &records {
        stats.prompt_tokens += r.prompt_tokens;
        stats.generated_tokens += r.generated_tokens;
        stats.latency_ms += r.latency_ms;
    }

    write_trec_run(&run, &cfg.tag(), &run_path)?;
    write_traces(&records, &traces_path).map_err(|e| EvaluateError::io(&traces_path, e))?;
    let metrics = evaluate_run(&run, &qrels, &s.settings)?;
    Ok(DatasetResult { metrics, run_path: PathBuf::from(run_name), traces_path: PathBuf::from(traces_name), stats })
}

/// Reranks and evaluates every dataset in `cfg`, writing run, trace and
/// report files into `cfg.output_dir`.
pub fn simple_evaluate(cfg: &EvalConfig) -> Result<EvaluationReport, EvaluateError> {
    let s = setup(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| EvaluateError::io(&cfg.output_dir, e))?;
    let mut datasets = BTreeMap::new();
    for name in &cfg.datasets {
        let paths = resolve_dataset(name, cfg.manifest.as_deref(), &cfg.retriever)?;
        if datasets.contains_key(&paths.name) {
            return Err(EvaluateError::Config(format!("dataset {} listed twice", paths.name)));
        }
        info!(dataset = %paths.name, candidates = %paths.candidates.display(), "evaluating");
        let result = run_dataset(cfg, &s, &paths)?;
        datasets.insert(paths.name, result);
    }
    let report = EvaluationReport {
        metrics: datasets.iter().map(|(k, d)| (k.clone(), d.metrics.metrics.clone())).collect(),
        traces_path: datasets.iter().map(|(k, d)| (k.clone(), d.traces_path.clone())).collect(),
        datasets,
        config: cfg.redacted(),
        resolved: resolved_echo(cfg, &s),
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let path = cfg.output_dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, text + "\n").map_err(|e| EvaluateError::io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let kv = parse_kv("model=gpt-4o, api_key=abc").unwrap();
        assert_eq!(kv["model"], "gpt-4o");
        assert_eq!(kv["api_key"], "abc");
        assert!(parse_kv("").unwrap().is_empty());
        assert!(parse_kv("novalue").is_err());
        assert!(parse_kv("a=1,a=2").is_err());
        assert_eq!(parse_kv("stop=a=b").unwrap()["stop"], "a=b");
    }

    #[test]
    fn config_checks() {
        let cfg = EvalConfig::default();
        assert!(matches!(cfg.validate(), Err(EvaluateError::Config(_))));
        let cfg = EvalConfig { datasets: vec!["x".into()], reranking_approach: "nope".into(), ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = EvalConfig { datasets: vec!["x".into()], topk: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn redaction() {
        let mut cfg = EvalConfig::default();
        cfg.model_args.insert("api_key".into(), "sk-secret".into());
        cfg.model_args.insert("model".into(), "m".into());
        let r = cfg.redacted();
        assert_eq!(r.model_args["api_key"], "***");
        assert_eq!(r.model_args["model"], "m");
    }

    #[test]
    fn mock_requires_scores() {
        assert!(matches!(build_backend(ModelType::Mock, &BTreeMap::new()), Err(EvaluateError::Config(_))));
        let kv = parse_kv("scores=x.json,bogus=1").unwrap();
        assert!(build_backend(ModelType::Mock, &kv).is_err());
    }

    #[test]
    fn manifest_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("datasets.json");
        fs::write(
            &m,
            r#"{"dl19": {"candidates": {"bm25": "dl19/bm25.jsonl"}, "qrels": "dl19/qrels.txt"},
                "toy": {"candidates": "toy.jsonl", "qrels": "toy.qrels"}}"#,
        )
        .unwrap();
        let p = resolve_dataset("dl19", Some(&m), "bm25").unwrap();
        assert_eq!(p.candidates, dir.path().join("dl19/bm25.jsonl"));
        assert_eq!(p.qrels, dir.path().join("dl19/qrels.txt"));
        assert!(resolve_dataset("dl19", Some(&m), "splade").is_err());
        assert_eq!(resolve_dataset("toy", Some(&m), "bm25").unwrap().candidates, dir.path().join("toy.jsonl"));

        let sub = dir.path().join("mini");
        fs::create_dir(&sub).unwrap();
        let p = resolve_dataset(sub.to_str().unwrap(), Some(&m), "bm25").unwrap();
        assert_eq!(p.name, "mini");
        assert_eq!(p.candidates, sub.join("candidates.jsonl"));
        assert!(resolve_dataset("/no/such/dir", None, "bm25").is_err());
    }
}
