//! `retask`: retrieve, rerank and transform existing datasets into
//! task-aligned training data, then analyze the result.
//!
//! Configuration layers, weakest first: built-in defaults, the `--config`
//! JSON file, `RETASK_*` environment variables, and explicit flags.
//! Provider credentials come only from the environment (`LLM_API_KEY`,
//! `LLM_BASE_URL`). Exit codes: 0 success (including partial-quota runs),
//! 1 pipeline or validation failure, 2 usage errors.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "retask", version, about = "Transform existing datasets into task-aligned training data")]
struct Cli {
    /// JSON config file; any field can be overridden by flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log more (-v debug); logs go to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset embedding index from corpus cards.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Rank candidate datasets for a task by embedding similarity.
    Retrieve(RetrieveArgs),
    /// Run the full pipeline: retrieve, rerank, transform, accumulate.
    Run(RunArgs),
    /// Transform one named dataset, skipping retrieval and reranking.
    Transform(TransformArgs),
    /// Analyze a JSONL dataset: uniqueness, diversity, difficulty.
    Analyze(AnalyzeArgs),
    /// Remove near-duplicate examples from a JSONL dataset.
    Dedup(DedupArgs),
    /// Pretty-print a run report.
    Report {
        /// Path to a report.json produced by `run` or `transform`.
        #[arg(long)]
        report: PathBuf,
    },
    /// Task-file utilities.
    Task {
        #[command(subcommand)]
        action: TaskAction,
    },
}

#[derive(Subcommand)]
enum IndexAction {
    /// Embed every card in the corpus into an index file.
    Build {
        /// Corpus: a local directory or a hub base URL.
        #[arg(long)]
        corpus: String,
        /// Where to write the index JSON.
        #[arg(long)]
        out: PathBuf,
        /// Hashing embedder dimension.
        #[arg(long, default_value_t = 256)]
        dim: usize,
        /// Explicit dataset names (one per line); required for remote hubs.
        #[arg(long)]
        names: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TaskAction {
    /// Convert a BIG-Bench task JSON into the native task format.
    ImportBigbench {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Identifier for the imported task.
        #[arg(long)]
        task_id: String,
        /// Keep at most this many demonstration examples.
        #[arg(long, default_value_t = 2)]
        max_examples: usize,
    },
}

#[derive(Args)]
struct RetrieveArgs {
    /// Task JSON file: {instruction, examples, task_id}.
    #[arg(long, visible_alias = "task-file")]
    task: PathBuf,
    /// Corpus directory or hub URL (used when no --index is given).
    #[arg(long)]
    corpus: Option<String>,
    /// Previously built index file.
    #[arg(long)]
    index: Option<PathBuf>,
    /// How many candidates to print.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long, default_value_t = 256)]
    dim: usize,
}

#[derive(Args, Clone)]
struct PipelineFlags {
    #[arg(long)]
    target_count: Option<u64>,
    #[arg(long)]
    retrieval_k: Option<u32>,
    #[arg(long)]
    max_datasets: Option<u32>,
    /// Self-consistency votes for reranking.
    #[arg(long)]
    votes: Option<u32>,
    #[arg(long)]
    failure_threshold: Option<f64>,
    #[arg(long)]
    probe_batch: Option<u32>,
    #[arg(long)]
    rouge_threshold: Option<f64>,
    /// Concurrent LLM calls.
    #[arg(long)]
    concurrency: Option<u32>,
    #[arg(long)]
    planner_model: Option<String>,
    #[arg(long)]
    executor_model: Option<String>,
    #[arg(long)]
    judge_model: Option<String>,
    /// Dataset split to read rows from.
    #[arg(long)]
    split: Option<String>,
    /// Sampling temperature for rerank votes.
    #[arg(long)]
    rerank_temperature: Option<f64>,
    /// Shuffle candidate order per rerank vote.
    #[arg(long)]
    shuffle_candidates: bool,
    /// Fail instead of falling back to rank order when the reranker
    /// settles on no dataset.
    #[arg(long)]
    no_fallback: bool,
    /// Sample rows shown to the schema selector.
    #[arg(long)]
    schema_sample_rows: Option<u32>,
    /// Sample rows shown to the planner.
    #[arg(long)]
    plan_sample_rows: Option<u32>,
    /// Transport retries per LLM call.
    #[arg(long)]
    max_retries: Option<u32>,
    /// First retry delay in milliseconds.
    #[arg(long)]
    backoff_ms: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    task: PathBuf,
    /// Corpus directory or hub base URL.
    #[arg(long)]
    corpus: String,
    /// Output directory for data.jsonl, report.json and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Reuse a prebuilt index (built on the fly otherwise).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Serve all LLM calls from this transcript instead of a provider.
    #[arg(long)]
    mock_transcript: Option<PathBuf>,
    /// Persist LLM responses here so interrupted runs resume cheaply.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Directory of in-context fixture overrides.
    #[arg(long)]
    fixtures_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    corpus: String,
    #[arg(long)]
    out: PathBuf,
    /// Dataset to transform.
    #[arg(long)]
    dataset: String,
    /// Config within the dataset (defaults to the card's first).
    #[arg(long)]
    dataset_config: Option<String>,
    #[arg(long)]
    mock_transcript: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    fixtures_dir: Option<PathBuf>,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// JSONL dataset (one {input, output, provenance} object per line).
    #[arg(long)]
    data: PathBuf,
    /// Uniqueness threshold; defaults to the task-kind lookup.
    #[arg(long)]
    threshold: Option<f64>,
    /// Task flavor for the default threshold (code 0.8, long-text 0.9,
    /// general 0.7).
    #[arg(long, value_parser = ["code", "long-text", "general"], default_value = "general")]
    task_kind: String,
    /// Also judge per-example difficulty through the LLM.
    #[arg(long)]
    judge: bool,
    /// Judge prompt template override (text file with {{placeholders}}).
    #[arg(long)]
    judge_prompt: Option<PathBuf>,
    #[arg(long)]
    mock_transcript: Option<PathBuf>,
    #[arg(long)]
    fixtures_dir: Option<PathBuf>,
    /// Where to write quality.json (defaults next to the data file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump raw input texts (one per line) for external tools.
    #[arg(long)]
    export_inputs: Option<PathBuf>,
    #[arg(long)]
    judge_model: Option<String>,
}

#[derive(Args)]
struct DedupArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output path; rewrites the input file when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_parser = ["code", "long-text", "general"], default_value = "general")]
    task_kind: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = if cli.verbose { "debug" } else { "info" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .with_writer(std::io::stderr)
        .init();

    let outcome = match cli.command {
        Command::Index { action } => match action {
            IndexAction::Build { corpus, out, dim, names } => {
                commands::index_build(&corpus, &out, dim, names.as_deref())
            }
        },
        Command::Retrieve(args) => commands::retrieve(&cli.config, args),
        Command::Run(args) => commands::run(&cli.config, args),
        Command::Transform(args) => commands::transform(&cli.config, args),
        Command::Analyze(args) => commands::analyze(&cli.config, args),
        Command::Dedup(args) => commands::dedup(args),
        Command::Report { report } => commands::print_report(&report),
        Command::Task { action } => match action {
            TaskAction::ImportBigbench { input, out, task_id, max_examples } => {
                commands::import_bigbench(&input, &out, &task_id, max_examples)
            }
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
