//! Implementations of the CLI verbs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use retask_core::llm::provider::{HttpProvider, Provider};
use retask_core::llm::{template::PromptTemplate, MockProvider, TemplateName};
use retask_core::orchestrator::read_jsonl;
use retask_core::transform::{
    execute_row, expand_task, generate_plan, select_schema, ExecutionOutcome, InContextFixtures,
};
use retask_core::{
    build_index, dedup_filter, default_rouge_threshold, diversity_report, estimate_difficulty,
    retrieve_top_k, uniqueness_report, CorpusSource, DatasetRef, DemoExample, EmbeddingIndex,
    Gateway, GatewayOptions, HashEmbedder, HubClient, Pipeline, PipelineConfig, RunContext,
    RunReport, SelectedDataset, TaskKind, TaskSpec, TransformedExample,
};

use crate::{AnalyzeArgs, DedupArgs, RetrieveArgs, RunArgs, TransformArgs};
use crate::settings::resolve_config;

fn corpus_source(spec: &str) -> CorpusSource {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        CorpusSource::remote(spec)
    } else {
        CorpusSource::local(spec)
    }
}

fn load_task(path: &Path) -> Result<TaskSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading task file {}", path.display()))?;
    let task: TaskSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing task file {}", path.display()))?;
    task.validate()?;
    Ok(task)
}

fn build_provider(mock_transcript: Option<&Path>) -> Result<Arc<dyn Provider>> {
    match mock_transcript {
        Some(path) => Ok(Arc::new(MockProvider::from_file(path)?)),
        None => Ok(Arc::new(HttpProvider::from_env(None, "LLM_API_KEY")?)),
    }
}

fn build_gateway(
    config: &PipelineConfig,
    mock_transcript: Option<&Path>,
    cache_dir: Option<PathBuf>,
) -> Result<Arc<Gateway>> {
    let provider = build_provider(mock_transcript)?;
    let options = GatewayOptions { cache_dir, ..GatewayOptions::from_config(config) };
    Ok(Arc::new(Gateway::new(provider, options)))
}

fn load_fixtures(dir: Option<&Path>) -> Result<InContextFixtures> {
    match dir {
        Some(dir) => Ok(InContextFixtures::from_dir(dir)?),
        None => Ok(InContextFixtures::default()),
    }
}

fn task_kind(kind: &str) -> TaskKind {
    match kind {
        "code" => TaskKind::Code,
        "long-text" => TaskKind::LongText,
        _ => TaskKind::General,
    }
}

pub fn index_build(
    corpus: &str,
    out: &Path,
    dim: usize,
    names: Option<&Path>,
) -> Result<()> {
    let hub = HubClient::open(&corpus_source(corpus))?;
    let names: Vec<String> = match names {
        Some(path) => std::fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => hub.list_datasets()?,
    };
    if names.is_empty() {
        bail!("no datasets to index");
    }
    let cards = names
        .iter()
        .map(|name| hub.fetch_card(name))
        .collect::<Result<Vec<_>, _>>()?;
    let embedder = HashEmbedder::new(dim);
    let index = build_index(&cards, &embedder)?;
    index.save(out)?;
    println!("indexed {} datasets -> {}", index.entries.len(), out.display());
    Ok(())
}

pub fn retrieve(config_file: &Option<PathBuf>, args: RetrieveArgs) -> Result<()> {
    let config = resolve_config(config_file.as_deref(), None)?;
    let task = load_task(&args.task)?;
    let embedder = HashEmbedder::new(args.dim);
    let index = match (&args.index, &args.corpus) {
        (Some(path), _) => EmbeddingIndex::load(path)?,
        (None, Some(corpus)) => {
            let hub = HubClient::open(&corpus_source(corpus))?;
            let names = hub.list_datasets()?;
            let cards = names
                .iter()
                .map(|name| hub.fetch_card(name))
                .collect::<Result<Vec<_>, _>>()?;
            build_index(&cards, &embedder)?
        }
        (None, None) => bail!("retrieve needs --index or --corpus"),
    };
    let k = args.k.unwrap_or(config.retrieval_k) as usize;
    for (rank, hit) in retrieve_top_k(&index, &embedder, &task, k)?.iter().enumerate() {
        println!("{:>3}  {:<40} {:.4}", rank + 1, hit.name, hit.score);
    }
    Ok(())
}

pub fn run(config_file: &Option<PathBuf>, args: RunArgs) -> Result<()> {
    let config = resolve_config(config_file.as_deref(), Some(&args.flags))?;
    let task = load_task(&args.task)?;
    let gateway = build_gateway(&config, args.mock_transcript.as_deref(), args.cache_dir.clone())?;
    let context = RunContext {
        gateway,
        embedder: Arc::new(HashEmbedder::new(args.dim)),
        fixtures: load_fixtures(args.fixtures_dir.as_deref())?,
        index_path: args.index.clone(),
    };
    let corpus = corpus_source(&args.corpus);
    let mut pipeline = Pipeline::new(task, config, &corpus, &args.out, context)?;
    let (examples, report) = pipeline.run()?;
    report.check_identities()?;
    for warning in &report.warnings {
        tracing::warn!("{warning}");
    }
    println!(
        "emitted {} examples from {} datasets -> {}",
        examples.len(),
        report.datasets.len(),
        args.out.join("data.jsonl").display()
    );
    Ok(())
}

/// Transform one named dataset end to end, without retrieval/reranking.
pub fn transform(config_file: &Option<PathBuf>, args: TransformArgs) -> Result<()> {
    let config = resolve_config(config_file.as_deref(), Some(&args.flags))?;
    let task = load_task(&args.task)?;
    let gateway = build_gateway(&config, args.mock_transcript.as_deref(), args.cache_dir.clone())?;
    let fixtures = load_fixtures(args.fixtures_dir.as_deref())?;
    let hub = HubClient::open(&corpus_source(&args.corpus))?;

    let card = hub.fetch_card(&args.dataset)?;
    let dataset_config = args
        .dataset_config
        .clone()
        .or_else(|| card.configs.first().cloned())
        .unwrap_or_else(|| "default".to_string());
    let sample_n = config.plan_sample_rows.max(config.schema_sample_rows) as usize;
    let (schema, sample_rows) =
        hub.fetch_schema_and_samples(&args.dataset, &dataset_config, &config.split, sample_n)?;
    let dataset = SelectedDataset {
        card,
        config: dataset_config.clone(),
        schema,
        sample_rows,
        retrieval_rank: 1,
    };
    let dataset_ref = DatasetRef::new(args.dataset.clone(), dataset_config);

    let expanded = expand_task(&gateway, &config, &task)?;
    let selection = select_schema(&gateway, &config, &fixtures, &expanded, &dataset)?;
    let plan = generate_plan(&gateway, &config, &fixtures, &expanded, &dataset, &selection)?;

    std::fs::create_dir_all(&args.out)?;
    let attempt_dir = args.out.join("attempts").join(format!(
        "{}__{}",
        dataset_ref.name, dataset_ref.config
    ));
    std::fs::create_dir_all(&attempt_dir)?;
    std::fs::write(attempt_dir.join("plan.txt"), format!("{}\n", plan.render_steps()))?;
    std::fs::write(attempt_dir.join("selection.json"), serde_json::to_string_pretty(&selection)?)?;

    let mut report = RunReport::default();
    let mut emitted: Vec<TransformedExample> = Vec::new();
    let mut offset = 0u64;
    while (emitted.len() as u64) < config.target_example_count {
        let rows = hub.fetch_rows_flat(
            &dataset_ref.name,
            &dataset_ref.config,
            &config.split,
            offset,
            config.probe_batch_size as u64,
        )?;
        if rows.is_empty() {
            break;
        }
        offset += rows.len() as u64;
        for row in &rows {
            let outcome = execute_row(
                &gateway, &config, &fixtures, &expanded, &plan, &selection, &dataset_ref, row,
            )?;
            let counters = report.dataset_mut(&dataset_ref);
            counters.rows_attempted += 1;
            match outcome {
                ExecutionOutcome::Success(example) => {
                    counters.rows_succeeded += 1;
                    if (emitted.len() as u64) < config.target_example_count {
                        emitted.push(example);
                    }
                }
                ExecutionOutcome::NullSample => counters.rows_null += 1,
                ExecutionOutcome::Malformed { .. } => counters.rows_malformed += 1,
            }
        }
    }
    report.totals.examples_emitted = emitted.len() as u64;
    report.recompute_totals();
    report.llm_usage = gateway.usage_snapshot();
    report.check_identities()?;

    let data_path = args.out.join("data.jsonl");
    let mut buffer = String::new();
    for example in &emitted {
        buffer.push_str(&serde_json::to_string(example)?);
        buffer.push('\n');
    }
    std::fs::write(&data_path, buffer)?;
    std::fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("emitted {} examples -> {}", emitted.len(), data_path.display());
    Ok(())
}

pub fn analyze(config_file: &Option<PathBuf>, args: AnalyzeArgs) -> Result<()> {
    let config = resolve_config(config_file.as_deref(), None)?;
    let examples = read_jsonl(&args.data)?;
    if examples.is_empty() {
        bail!("{} holds no examples", args.data.display());
    }
    let inputs: Vec<String> = examples.iter().map(|e| e.input.clone()).collect();
    let threshold = args
        .threshold
        .unwrap_or_else(|| default_rouge_threshold(task_kind(&args.task_kind)));

    if let Some(path) = &args.export_inputs {
        let mut dump = String::new();
        for input in &inputs {
            dump.push_str(&input.replace('\n', " "));
            dump.push('\n');
        }
        std::fs::write(path, dump)?;
    }

    let uniqueness = uniqueness_report(&inputs, threshold);
    let diversity = diversity_report(&inputs);
    let difficulty = if args.judge {
        let judge_model =
            args.judge_model.clone().unwrap_or_else(|| config.judge_model.clone());
        let gateway = build_gateway(&config, args.mock_transcript.as_deref(), None)?;
        let fixtures = load_fixtures(args.fixtures_dir.as_deref())?;
        let template = match &args.judge_prompt {
            Some(path) => PromptTemplate::new(
                TemplateName::Difficulty,
                std::fs::read_to_string(path)?,
            ),
            None => PromptTemplate::builtin(TemplateName::Difficulty),
        };
        Some(estimate_difficulty(
            &gateway,
            &inputs,
            &template,
            &fixtures.difficulty,
            &judge_model,
        )?)
    } else {
        None
    };

    println!("examples            {}", uniqueness.total);
    println!(
        "uniqueness          {}/{} unique ({:.1}%) at ROUGE-L threshold {:.2}",
        uniqueness.unique_count,
        uniqueness.total,
        uniqueness.unique_fraction * 100.0,
        threshold
    );
    println!(
        "diversity           {:.2} unique bigrams/example, {:.2} tokens/example",
        diversity.unique_bigrams_per_example, diversity.tokens_per_example
    );
    if let Some(difficulty) = &difficulty {
        let histogram: Vec<String> = (1u8..=5)
            .map(|s| format!("{s}:{}", difficulty.scores.get(&s).copied().unwrap_or(0)))
            .collect();
        println!(
            "difficulty          mean {:.2}  [{}]  unparsed {}",
            difficulty.mean,
            histogram.join(" "),
            difficulty.unparsed
        );
    }

    let out_path = args
        .out
        .clone()
        .unwrap_or_else(|| args.data.parent().unwrap_or(Path::new(".")).join("quality.json"));
    let quality = serde_json::json!({
        "uniqueness": uniqueness,
        "diversity": diversity,
        "difficulty": difficulty,
    });
    std::fs::write(&out_path, serde_json::to_string_pretty(&quality)?)?;
    println!("wrote {}", out_path.display());
    Ok(())
}

pub fn dedup(args: DedupArgs) -> Result<()> {
    let examples = read_jsonl(&args.data)?;
    let threshold = args
        .threshold
        .unwrap_or_else(|| default_rouge_threshold(task_kind(&args.task_kind)));
    let kept = dedup_filter(&examples, threshold);
    let out = args.out.clone().unwrap_or_else(|| args.data.clone());
    let mut buffer = String::new();
    for example in &kept {
        buffer.push_str(&serde_json::to_string(example)?);
        buffer.push('\n');
    }
    std::fs::write(&out, buffer)?;
    println!(
        "kept {} of {} examples at threshold {:.2} -> {}",
        kept.len(),
        examples.len(),
        threshold,
        out.display()
    );
    Ok(())
}

pub fn print_report(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading report {}", path.display()))?;
    let report: RunReport = serde_json::from_str(&text)?;
    println!(
        "{:<40} {:>9} {:>9} {:>6} {:>9}  excluded",
        "dataset", "attempted", "succeeded", "null", "malformed"
    );
    for (name, counters) in &report.datasets {
        println!(
            "{:<40} {:>9} {:>9} {:>6} {:>9}  {}",
            name,
            counters.rows_attempted,
            counters.rows_succeeded,
            counters.rows_null,
            counters.rows_malformed,
            if counters.excluded {
                counters.exclusion_reason.as_deref().unwrap_or("yes")
            } else {
                "no"
            }
        );
    }
    println!(
        "totals: attempted {} succeeded {} null {} malformed {} emitted {}",
        report.totals.rows_attempted,
        report.totals.rows_succeeded,
        report.totals.rows_null,
        report.totals.rows_malformed,
        report.totals.examples_emitted
    );
    println!("duration: {} ms", report.duration_ms);
    for (stage, usage) in &report.llm_usage {
        println!(
            "llm[{stage}]: {} calls, {} cache hits, {} prompt tokens, {} completion tokens",
            usage.calls, usage.cache_hits, usage.prompt_tokens, usage.completion_tokens
        );
    }
    for warning in &report.warnings {
        println!("warning: {warning}");
    }
    Ok(())
}

/// BIG-Bench task JSON -> native task file. `description` becomes the
/// instruction; each example keeps `input` and either `target` or the
/// best-scoring `target_scores` key.
pub fn import_bigbench(
    input: &Path,
    out: &Path,
    task_id: &str,
    max_examples: usize,
) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let instruction = value
        .get("description")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_default();
    if instruction.is_empty() {
        bail!("{} has no task description", input.display());
    }
    let mut examples = Vec::new();
    if let Some(raw_examples) = value.get("examples").and_then(|v| v.as_array()) {
        for example in raw_examples {
            if examples.len() >= max_examples {
                break;
            }
            let Some(example_input) = example.get("input").and_then(|v| v.as_str()) else {
                continue;
            };
            let output = if let Some(target) = example.get("target") {
                match target {
                    serde_json::Value::String(s) => Some(s.clone()),
                    serde_json::Value::Array(items) => {
                        items.first().and_then(|v| v.as_str()).map(str::to_string)
                    }
                    _ => None,
                }
            } else if let Some(scores) = example.get("target_scores").and_then(|v| v.as_object()) {
                scores
                    .iter()
                    .max_by(|a, b| {
                        let fa = a.1.as_f64().unwrap_or(f64::MIN);
                        let fb = b.1.as_f64().unwrap_or(f64::MIN);
                        fa.partial_cmp(&fb).unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .map(|(k, _)| k.clone())
            } else {
                None
            };
            if let Some(output) = output {
                if !example_input.trim().is_empty() && !output.trim().is_empty() {
                    examples.push(DemoExample { input: example_input.to_string(), output });
                }
            }
        }
    }
    let task = TaskSpec { instruction, examples, task_id: task_id.to_string() };
    task.validate()?;
    std::fs::write(out, serde_json::to_string_pretty(&task)?)?;
    println!("wrote task {} -> {}", task_id, out.display());
    Ok(())
}
