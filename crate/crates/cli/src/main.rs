use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use llmrank::dataprep::{export_sft, samples_from_traces, DataprepError};
use llmrank::eval::{
    evaluate_run, load_candidates, load_qrels, load_trec_run, write_trec_run, EvalError, EvalSettings, Gain, Run,
};
use llmrank::evaluator::{build_backend, parse_kv, simple_evaluate, EvalConfig, EvaluateError, ModelType};
use llmrank::llm::{GenerationOptions, LlmClient};
use llmrank::ranking::{candidates_from, Query};
use llmrank::reranker::{rerank, Approach, RerankConfig};
use llmrank::trace::read_traces;

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "llmrank", version, about = "Rerank retrieval candidates with LLMs and evaluate the results")]
struct Cli {
    /// Log more (repeat for debug output). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rerank one query's candidates and print the doc ids best first.
    Rerank(RerankArgs),
    /// Rerank and evaluate whole datasets.
    Evaluate(EvaluateArgs),
    /// Score an existing TREC run against qrels.
    EvalRun(EvalRunArgs),
    /// Turn listwise traces into fine-tuning conversations.
    ExportSft(ExportSftArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long = "model_type", alias = "model-type", default_value = "openai_compatible")]
    model_type: String,
    /// k=v pairs, e.g. model=gpt-4o,api_key=...
    #[arg(long = "model_args", alias = "model-args", default_value = "")]
    model_args: String,
    /// Decoding options, e.g. temperature=0,max_new_tokens=128
    #[arg(long = "model_fw_args", alias = "model-fw-args", default_value = "")]
    model_fw_args: String,
    #[arg(long = "reranking_approach", alias = "reranking-approach", alias = "approach", default_value = "rankgpt")]
    reranking_approach: String,
    /// k=v pairs, e.g. window_size=20,step=10
    #[arg(long = "reranking_args", alias = "reranking-args", default_value = "")]
    reranking_args: String,
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    query: Option<String>,
    #[arg(long = "query_id", alias = "query-id", default_value = "q0")]
    query_id: String,
    /// Candidate passage, repeatable. Ids are d0, d1, ...
    #[arg(long = "doc")]
    docs: Vec<String>,
    /// Candidates file; the record matching --query_id is used.
    #[arg(long, conflicts_with = "docs")]
    candidates: Option<PathBuf>,
    /// Also write the ranking as a TREC run.
    #[arg(long)]
    trec: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset names (looked up in the manifest) or directories.
    #[arg(long, num_args = 1.., required = true)]
    datasets: Vec<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "bm25")]
    retriever: String,
    #[arg(long, default_value_t = 100)]
    topk: usize,
    #[arg(long = "output_dir", alias = "output-dir", default_value = "results")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Skip queries already present in the output run file.
    #[arg(long)]
    resume: bool,
    #[arg(long = "map_threshold", alias = "map-threshold", default_value_t = 1)]
    map_threshold: u32,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,100")]
    cutoffs: Vec<usize>,
    /// Use 2^grade - 1 gains for nDCG.
    #[arg(long = "exp_gain", alias = "exp-gain")]
    exp_gain: bool,
    /// Keep prompts in traces for export-sft.
    #[arg(long = "record_prompts", alias = "record-prompts")]
    record_prompts: bool,
    #[arg(long = "run_tag", alias = "run-tag")]
    run_tag: Option<String>,
}

#[derive(Args)]
struct EvalRunArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,100")]
    cutoffs: Vec<usize>,
    #[arg(long = "map_threshold", alias = "map-threshold", default_value_t = 1)]
    map_threshold: u32,
    #[arg(long = "exp_gain", alias = "exp-gain")]
    exp_gain: bool,
    /// Reorder by score, breaking ties by doc id descending, before scoring.
    #[arg(long = "trec_eval_order", alias = "trec-eval-order")]
    trec_eval_order: bool,
    /// Print per-query values too.
    #[arg(long = "per_query", alias = "per-query")]
    per_query: bool,
}

#[derive(Args)]
struct ExportSftArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<EvaluateError> for Failure {
    fn from(e: EvaluateError) -> Self {
        let code = if matches!(e, EvaluateError::Backend(_)) { EXIT_BACKEND } else { EXIT_CONFIG };
        Failure { code, message: e.to_string() }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }
}

impl From<DataprepError> for Failure {
    fn from(e: DataprepError) -> Self {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }
}

fn config_err(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.into() }
}

fn gain(exp: bool) -> Gain {
    if exp {
        Gain::Exponential
    } else {
        Gain::Linear
    }
}

fn cmd_rerank(a: RerankArgs) -> Result<(), Failure> {
    let approach: Approach = a.model.reranking_approach.parse().map_err(EvaluateError::from)?;
    let model_type: ModelType = a.model.model_type.parse()?;
    let mut cfg = RerankConfig::default();
    cfg.apply_kv(&parse_kv(&a.model.reranking_args)?).map_err(EvaluateError::from)?;
    cfg.model.generation = GenerationOptions::from_kv(&parse_kv(&a.model.model_fw_args)?)
        .map_err(|e| config_err(e.to_string()))?;
    let templates = Arc::new(cfg.templates().map_err(EvaluateError::from)?);

    let (query, candidates) = match &a.candidates {
        Some(path) => {
            let mut set = load_candidates(path)?;
            let qc = match set.remove(&a.query_id) {
                Some(qc) => qc,
                None if set.len() == 1 && a.query_id == "q0" => set.into_values().next().unwrap(),
                None => return Err(config_err(format!("query {} not in {}", a.query_id, path.display()))),
            };
            let query = match a.query {
                Some(text) => Query::new(qc.query.id, text),
                None => qc.query,
            };
            (query, qc.candidates)
        }
        None => {
            let text = a.query.ok_or_else(|| config_err("--query is required with inline --doc candidates"))?;
            if a.docs.is_empty() {
                return Err(config_err("no candidates: pass --doc or --candidates"));
            }
            let docs = a.docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.as_str()));
            (Query::new(a.query_id, text), candidates_from(docs))
        }
    };

    let (backend, retry) = build_backend(model_type, &parse_kv(&a.model.model_args)?)?;
    let client = LlmClient::new(backend).with_retry(retry);
    let ranking = rerank(&query, &candidates, approach, &client, templates, &cfg).map_err(EvaluateError::from)?;
    for id in ranking.doc_ids(&candidates) {
        println!("{id}");
    }
    if let Some(path) = a.trec {
        let mut run = Run::new();
        run.insert_ranking(&query.id, &candidates, &ranking);
        write_trec_run(&run, approach.name(), &path)?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let cfg = EvalConfig {
        model_type: a.model.model_type.parse()?,
        model_args: parse_kv(&a.model.model_args)?,
        model_fw_args: parse_kv(&a.model.model_fw_args)?,
        reranking_approach: a.model.reranking_approach,
        reranking_args: parse_kv(&a.model.reranking_args)?,
        datasets: a.datasets,
        manifest: a.manifest,
        retriever: a.retriever,
        topk: a.topk,
        output_dir: a.output_dir,
        workers: a.workers,
        resume: a.resume,
        map_threshold: a.map_threshold,
        cutoffs: a.cutoffs,
        gain: gain(a.exp_gain),
        record_prompts: a.record_prompts,
        run_tag: a.run_tag,
    };
    let report = simple_evaluate(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&report.metrics).expect("metrics serialize"));
    let totals = report.total_stats();
    let reranked = totals.queries - totals.resumed;
    if reranked > 0 && totals.failed_queries.len() == reranked {
        return Err(Failure {
            code: EXIT_BACKEND,
            message: format!(
                "every query failed; first error: {}",
                totals.failed_queries[0].error
            ),
        });
    }
    Ok(())
}

fn cmd_eval_run(a: EvalRunArgs) -> Result<(), Failure> {
    let mut run = load_trec_run(&a.run)?;
    if a.trec_eval_order {
        run.trec_eval_order();
    }
    let qrels = load_qrels(&a.qrels)?;
    if a.cutoffs.is_empty() || a.cutoffs.contains(&0) || a.map_threshold == 0 {
        return Err(config_err("cutoffs and map_threshold must be >= 1"));
    }
    let settings = EvalSettings { cutoffs: a.cutoffs, map_threshold: a.map_threshold, gain: gain(a.exp_gain) };
    let report = evaluate_run(&run, &qrels, &settings)?;
    let out = if a.per_query {
        serde_json::to_value(&report).expect("report serializes")
    } else {
        serde_json::json!({ "query_count": report.query_count, "metrics": report.metrics })
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn cmd_export_sft(a: ExportSftArgs) -> Result<(), Failure> {
    let records = read_traces(&a.traces).map_err(|e| config_err(format!("{}: {e}", a.traces.display())))?;
    let samples = samples_from_traces(&records)?;
    let n = export_sft(&samples, &a.out)?;
    println!("{n}");
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Rerank(a) => cmd_rerank(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::EvalRun(a) => cmd_eval_run(a),
        Command::ExportSft(a) => cmd_export_sft(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
