//! Batch evaluation: ingest each conversation into a bank (cached by
//! content hash), run every question through the reflective loop, score
//! the rewritten answers, and account for every call, token, and second.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::{Category, Dataset, EvalQuestion};
use crate::error::{Error, Result};
use crate::gateway::{CounterSnapshot, Gateway};
use crate::ingest::Ingestor;
use crate::keyword::fnv1a64;
use crate::metrics::{
    aggregate, score_all, AggregateReport, CostCounters, CostSummary, MetricScores,
};
use crate::prompts::PromptSet;
use crate::reflect::{strip_wall_clock, LoopConfig, QueryTrace, ReflectiveLoop};
use crate::store::MemoryBank;

/// Harness options beyond the per-query loop config.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub loop_config: LoopConfig,
    pub parallelism: usize,
    pub rouge_beta: f64,
    /// When set, per-conversation banks are snapshotted here keyed by
    /// content hash, and matching snapshots skip re-ingestion.
    pub cache_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            loop_config: LoopConfig::default(),
            parallelism: 1,
            rouge_beta: crate::metrics::ROUGE_BETA_DEFAULT,
            cache_dir: None,
        }
    }
}

/// Config echo embedded in every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub depth: usize,
    pub max_rounds: usize,
    pub main_provider: String,
    pub aux_provider: String,
    pub rouge_beta: f64,
    pub parallelism: usize,
}

/// One question's outcome. Failures keep their slot with zero scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    pub conversation_id: String,
    pub category: Category,
    pub question: String,
    pub references: Vec<String>,
    /// The scored text: the rewritten answer.
    pub answer: String,
    pub scores: MetricScores,
    pub trace: Option<QueryTrace>,
    pub error: Option<String>,
    pub wall_ms: u64,
}

/// Ingestion-stage totals across all conversations in the run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub memory_items: usize,
    pub indexed: usize,
    pub aux: CostCounters,
    pub cache_hits: usize,
    pub errors: Vec<String>,
}

/// A full evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRun {
    pub config: ConfigSnapshot,
    pub ingest: IngestStats,
    pub results: Vec<QuestionResult>,
    pub aggregate: AggregateReport,
    pub cost: CostSummary,
    /// Gateway counters at the end of the run, for cross-checking the
    /// summed per-question accounting.
    pub gateway_main: CounterSnapshot,
    pub gateway_aux: CounterSnapshot,
}

impl EvalRun {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    /// JSON with wall-clock fields removed; byte-stable under a scripted
    /// provider and fixed config.
    pub fn stable_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serialization");
        strip_wall_clock(&mut value);
        serde_json::to_string_pretty(&value).expect("report serialization")
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Build or load the bank for one conversation.
fn bank_for_conversation(
    conversation_id: &str,
    memories: &[crate::ingest::MemoryInput],
    ingestor: &Ingestor,
    options: &EvalOptions,
    stats: &mut IngestStats,
) -> Result<MemoryBank> {
    let cache_path = options.cache_dir.as_ref().map(|dir| {
        let key = fnv1a64(&serde_json::to_string(memories).expect("memory inputs serialize"));
        dir.join(format!("{}-{key:016x}.bank.json", sanitize(conversation_id)))
    });
    if let Some(path) = &cache_path {
        if path.exists() {
            match MemoryBank::load(path) {
                Ok(bank) => {
                    info!("bank cache hit for {conversation_id}");
                    stats.cache_hits += 1;
                    return Ok(bank);
                }
                Err(e) => warn!("ignoring unreadable bank cache {}: {e}", path.display()),
            }
        }
    }
    let mut bank = MemoryBank::new();
    let report = ingestor.ingest(memories, &mut bank);
    stats.memory_items += report.records_added;
    stats.indexed += report.records_indexed;
    stats.aux.merge(&report.aux);
    for (index, error) in &report.errors {
        stats
            .errors
            .push(format!("{conversation_id}[{index}]: {error}"));
    }
    if let Some(path) = &cache_path {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        bank.snapshot(path)?;
    }
    Ok(bank)
}

fn run_question(
    question: &EvalQuestion,
    banks: &HashMap<String, MemoryBank>,
    main: &Gateway,
    aux: &Gateway,
    prompts: &PromptSet,
    options: &EvalOptions,
) -> QuestionResult {
    let started = Instant::now();
    let mut result = QuestionResult {
        id: question.id.clone(),
        conversation_id: question.conversation_id.clone(),
        category: question.category,
        question: question.question.clone(),
        references: question.references.clone(),
        answer: String::new(),
        scores: MetricScores::default(),
        trace: None,
        error: None,
        wall_ms: 0,
    };
    let Some(bank) = banks.get(&question.conversation_id) else {
        result.error = Some(format!(
            "conversation {:?} has no bank",
            question.conversation_id
        ));
        result.wall_ms = started.elapsed().as_millis() as u64;
        return result;
    };
    let looper = ReflectiveLoop::new(main, aux, prompts, options.loop_config);
    match looper.run_query(&question.question, bank) {
        Ok(trace) => {
            result.answer = trace.rewritten_answer.clone();
            match score_all(&result.answer, &question.references, options.rouge_beta) {
                Ok(scores) => result.scores = scores,
                Err(e) => result.error = Some(e.to_string()),
            }
            result.wall_ms = trace.wall_ms;
            result.trace = Some(trace);
        }
        Err(e) => {
            result.error = Some(e.to_string());
            result.wall_ms = started.elapsed().as_millis() as u64;
        }
    }
    result
}

/// Run the whole dataset. Questions may be evaluated concurrently
/// (`options.parallelism`); the report is deterministic regardless of
/// schedule because results keep dataset order and token accounting is
/// integer arithmetic.
pub fn evaluate(
    dataset: &Dataset,
    main: &Gateway,
    aux: &Gateway,
    prompts: &PromptSet,
    options: &EvalOptions,
) -> Result<EvalRun> {
    let ingestor = Ingestor::new(aux, prompts);
    let mut ingest_stats = IngestStats::default();
    let mut banks: HashMap<String, MemoryBank> = HashMap::new();
    for conversation in &dataset.conversations {
        let bank = bank_for_conversation(
            &conversation.id,
            &conversation.memories,
            &ingestor,
            options,
            &mut ingest_stats,
        )?;
        banks.insert(conversation.id.clone(), bank);
    }

    let slots: Mutex<Vec<Option<QuestionResult>>> =
        Mutex::new((0..dataset.questions.len()).map(|_| None).collect());
    let next: AtomicUsize = AtomicUsize::new(0);
    let workers = options.parallelism.max(1).min(dataset.questions.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                let Some(question) = dataset.questions.get(index) else {
                    break;
                };
                let result = run_question(question, &banks, main, aux, prompts, options);
                slots.lock().expect("result slots")[index] = Some(result);
            });
        }
    });
    let results: Vec<QuestionResult> = slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every question evaluated"))
        .collect();

    let rows: Vec<(String, MetricScores)> = results
        .iter()
        .map(|r| (r.category.as_str().to_string(), r.scores))
        .collect();
    let aggregate = aggregate(&rows);

    let mut cost = CostSummary {
        memory_items: ingest_stats.memory_items,
        questions: results.len(),
        aux_memory: ingest_stats.aux,
        ..CostSummary::default()
    };
    let mut wall_total: u64 = 0;
    for r in &results {
        if let Some(trace) = &r.trace {
            cost.main_response.calls += trace.main_calls;
            cost.main_response.centitokens += trace.main_centitokens;
            cost.aux_response.calls += trace.aux_calls;
            cost.aux_response.centitokens += trace.aux_centitokens;
        }
        wall_total += r.wall_ms;
    }
    if !results.is_empty() {
        cost.mean_response_ms = wall_total as f64 / results.len() as f64;
    }

    Ok(EvalRun {
        config: ConfigSnapshot {
            depth: options.loop_config.depth_cap,
            max_rounds: options.loop_config.max_rounds,
            main_provider: main.provider_name().to_string(),
            aux_provider: aux.provider_name().to_string(),
            rouge_beta: options.rouge_beta,
            parallelism: options.parallelism,
        },
        ingest: ingest_stats,
        results,
        aggregate,
        cost,
        gateway_main: main.counters(),
        gateway_aux: aux.counters(),
    })
}

/// Cost table in the shape of the per-stage accounting: calls and tokens
/// per memory item for the construction stage, calls, tokens, and time
/// per question for the response stage.
pub fn cost_report(run: &EvalRun) -> String {
    let items = run.cost.memory_items;
    let questions = run.cost.questions;
    let per = |c: &CostCounters, n: usize| -> (f64, f64) {
        if n == 0 {
            (0.0, 0.0)
        } else {
            (c.calls as f64 / n as f64, c.tokens() / n as f64)
        }
    };
    let (mm_calls, mm_tokens) = per(&run.cost.main_memory, items);
    let (am_calls, am_tokens) = per(&run.cost.aux_memory, items);
    let (mr_calls, mr_tokens) = per(&run.cost.main_response, questions);
    let (ar_calls, ar_tokens) = per(&run.cost.aux_response, questions);
    let mut out = String::new();
    out.push_str("Stage     Provider  Calls     Tokens\n");
    out.push_str(&format!(
        "memory    main      {mm_calls:<9.2} {mm_tokens:<10.1}\n"
    ));
    out.push_str(&format!(
        "memory    aux       {am_calls:<9.2} {am_tokens:<10.1}\n"
    ));
    out.push_str(&format!(
        "response  main      {mr_calls:<9.2} {mr_tokens:<10.1}\n"
    ));
    out.push_str(&format!(
        "response  aux       {ar_calls:<9.2} {ar_tokens:<10.1}\n"
    ));
    out.push_str(&format!(
        "memory items: {items}   questions: {questions}   mean response time: {:.2} s\n",
        run.cost.mean_response_ms / 1000.0
    ));
    out
}

/// Human-readable score table (scores are displayed x100).
pub fn render_human(run: &EvalRun) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "depth={} max_rounds={} main={} aux={} rouge_beta={}\n\n",
        run.config.depth, run.config.max_rounds, run.config.main_provider,
        run.config.aux_provider, run.config.rouge_beta
    ));
    out.push_str("Category     Count  F1      BLEU-1  ROUGE-L ROUGE-2 METEOR\n");
    let row = |name: &str, count: usize, s: &MetricScores| {
        format!(
            "{name:<12} {count:<6} {:<7.2} {:<7.2} {:<7.2} {:<7.2} {:<7.2}\n",
            s.f1 * 100.0,
            s.bleu1 * 100.0,
            s.rouge_l * 100.0,
            s.rouge_2 * 100.0,
            s.meteor * 100.0
        )
    };
    for cat in &run.aggregate.per_category {
        out.push_str(&row(&cat.category, cat.count, &cat.scores));
    }
    out.push_str(&row(
        "weighted",
        run.aggregate.total_questions,
        &run.aggregate.weighted,
    ));
    out.push('\n');
    out.push_str(&cost_report(run));
    if !run.ingest.errors.is_empty() {
        out.push_str(&format!("\ningestion errors: {}\n", run.ingest.errors.len()));
    }
    let failed = run.results.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        out.push_str(&format!("failed questions (scored 0): {failed}\n"));
    }
    out
}

/// Write `report.json` and `report.txt` under `dir`.
pub fn write_report(run: &EvalRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, run.to_json()).map_err(|e| Error::io(&json_path, e))?;
    let txt_path = dir.join("report.txt");
    std::fs::write(&txt_path, render_human(run)).map_err(|e| Error::io(&txt_path, e))?;
    Ok(())
}

/// Parse a previously written `report.json` into a generic value for
/// the cost-report command.
pub fn read_report_value(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: not a report file: {e}", path.display())))
}
