//! Command-line interface: ingest memories, run queries, inspect the
//! retrieval pyramid, evaluate datasets, and print cost reports.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use pyramem::config::AppConfig;
use pyramem::dataset::{load_dataset, DatasetFormat};
use pyramem::error::{Error, Result};
use pyramem::eval::{cost_report, evaluate, render_human, write_report, EvalOptions};
use pyramem::ingest::{Ingestor, MemoryInput};
use pyramem::prompts::PromptSet;
use pyramem::pyramid::{build_pyramid, select_query_keywords};
use pyramem::reflect::ReflectiveLoop;
use pyramem::store::MemoryBank;

#[derive(Parser)]
#[command(name = "pyramem", version, about = "Keyword-pyramid memory retrieval")]
struct Cli {
    /// Config file (TOML). Defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index line-delimited {question, answer, session?} records into a bank.
    Ingest {
        /// Input file, one JSON record per line.
        #[arg(long)]
        input: PathBuf,
        /// Bank snapshot to create or extend.
        #[arg(long)]
        bank: PathBuf,
        /// Prompt template directory override.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Answer one question against a bank.
    Query {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        max_rounds: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        /// Write the full query trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Dump the keyword pyramid for a query (debugging aid).
    Inspect {
        #[arg(long)]
        bank: PathBuf,
        /// Query text; keyword selection uses the auxiliary provider.
        #[arg(long, conflicts_with = "keywords")]
        query: Option<String>,
        /// Comma-separated keywords; skips the LLM call.
        #[arg(long)]
        keywords: Option<String>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Evaluate a dataset end to end and write reports.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        format: DatasetFormat,
        /// Output directory for report.json and report.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Print the cost table from a previous evaluate run.
    CostReport {
        /// Path to a report.json written by evaluate.
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<(AppConfig, PathBuf)> {
    match path {
        Some(p) => {
            let base = p.parent().unwrap_or(Path::new(".")).to_path_buf();
            Ok((AppConfig::load(p)?, base))
        }
        None => Ok((AppConfig::default(), PathBuf::from("."))),
    }
}

fn prompt_set(config: &AppConfig, flag: Option<&Path>) -> Result<PromptSet> {
    match flag {
        Some(dir) => PromptSet::from_dir(dir),
        None => config.prompt_set(),
    }
}

fn read_memory_inputs(path: &Path) -> Result<Vec<MemoryInput>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut inputs = Vec::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let input: MemoryInput = serde_json::from_str(line).map_err(|e| Error::Dataset {
            path: path.display().to_string(),
            detail: format!("line {}: {e}", number + 1),
        })?;
        inputs.push(input);
    }
    Ok(inputs)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let (config, base_dir) = load_config(cli.config.as_deref())?;

    match cli.command {
        Command::Ingest {
            input,
            bank: bank_path,
            prompts,
        } => {
            let prompts = prompt_set(&config, prompts.as_deref())?;
            let aux = config.provider.aux.build_gateway(&base_dir)?;
            let inputs = read_memory_inputs(&input)?;
            let mut bank = if bank_path.exists() {
                MemoryBank::load(&bank_path)?
            } else {
                MemoryBank::new()
            };
            let ingestor = Ingestor::new(&aux, &prompts);
            let report = ingestor.ingest(&inputs, &mut bank);
            bank.snapshot(&bank_path)?;
            println!(
                "ingested {} records ({} indexed, {} unindexed), {} new vocabulary entries, {} postings",
                report.records_added,
                report.records_indexed,
                report.unindexed.len(),
                report.new_vocabulary_entries,
                report.postings_updated
            );
            println!(
                "auxiliary cost: {} calls, {:.1} tokens",
                report.aux.calls,
                report.aux.tokens()
            );
            for (index, error) in &report.errors {
                eprintln!("record {index}: {error}");
            }
            Ok(())
        }
        Command::Query {
            bank,
            question,
            max_rounds,
            depth,
            trace: trace_path,
            prompts,
        } => {
            let prompts = prompt_set(&config, prompts.as_deref())?;
            let main = config.provider.main.build_gateway(&base_dir)?;
            let aux = config.provider.aux.build_gateway(&base_dir)?;
            let mut loop_config = config.retrieval.loop_config()?;
            if let Some(r) = max_rounds {
                loop_config.max_rounds = r;
            }
            if let Some(d) = depth {
                loop_config.depth_cap = d;
            }
            let bank = MemoryBank::load(&bank)?;
            let looper = ReflectiveLoop::new(&main, &aux, &prompts, loop_config);
            let trace = looper.run_query(&question, &bank)?;
            if let Some(path) = trace_path {
                std::fs::write(&path, trace.to_json()).map_err(|e| Error::io(&path, e))?;
            }
            println!("{}", trace.rewritten_answer);
            eprintln!(
                "rounds: {}  stop: {:?}  main calls: {}  aux calls: {}  tokens: {:.1}",
                trace.rounds.len(),
                trace.stop_reason,
                trace.main_calls,
                trace.aux_calls,
                (trace.main_centitokens + trace.aux_centitokens) as f64 / 100.0
            );
            Ok(())
        }
        Command::Inspect {
            bank,
            query,
            keywords,
            depth,
            prompts,
        } => {
            let prompts = prompt_set(&config, prompts.as_deref())?;
            let bank = MemoryBank::load(&bank)?;
            let depth = depth.unwrap_or(config.retrieval.loop_config()?.depth_cap);
            let selected: Vec<String> = match (keywords, query) {
                (Some(list), _) => list
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                (None, Some(query)) => {
                    let aux = config.provider.aux.build_gateway(&base_dir)?;
                    let selection =
                        select_query_keywords(&aux, &prompts, &query, bank.vocabulary(), depth)?;
                    for w in &selection.warnings {
                        eprintln!("{w}");
                    }
                    selection.keywords
                }
                (None, None) => {
                    return Err(Error::Config(
                        "inspect needs --query or --keywords".into(),
                    ))
                }
            };
            let pyramid = build_pyramid(&selected, bank.mapping());
            let group_json = |g: &pyramem::pyramid::KeywordGroup| {
                serde_json::json!({
                    "keywords": g.keywords,
                    "level": g.level,
                    "size": g.memories.len(),
                    "memories": g.memories,
                })
            };
            let dump = serde_json::json!({
                "query_keywords": pyramid.query_keywords,
                "levels": pyramid
                    .levels()
                    .iter()
                    .enumerate()
                    .map(|(i, groups)| {
                        serde_json::json!({
                            "level": i + 1,
                            "groups": groups.iter().map(group_json).collect::<Vec<_>>(),
                        })
                    })
                    .collect::<Vec<_>>(),
                "traversal": pyramid.traversal().map(group_json).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&dump).expect("dump"));
            Ok(())
        }
        Command::Evaluate {
            dataset,
            format,
            out,
            prompts,
        } => {
            let prompts = prompt_set(&config, prompts.as_deref())?;
            let main = config.provider.main.build_gateway(&base_dir)?;
            let aux = config.provider.aux.build_gateway(&base_dir)?;
            let dataset = load_dataset(&dataset, format)?;
            let options = EvalOptions {
                loop_config: config.retrieval.loop_config()?,
                parallelism: config.eval.parallelism,
                rouge_beta: config.eval.rouge_beta,
                cache_dir: config
                    .eval
                    .cache_dir
                    .clone()
                    .or_else(|| Some(out.join("banks"))),
            };
            let run = evaluate(&dataset, &main, &aux, &prompts, &options)?;
            write_report(&run, &out)?;
            print!("{}", render_human(&run));
            println!("reports written to {}", out.display());
            Ok(())
        }
        Command::CostReport { run } => {
            let value = pyramem::eval::read_report_value(&run)?;
            let run: pyramem::eval::EvalRun = serde_json::from_value(value)
                .map_err(|e| Error::Config(format!("{}: not a report: {e}", run.display())))?;
            print!("{}", cost_report(&run));
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
