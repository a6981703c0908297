//! End-to-end pipeline: retrieve and rerank candidates, then transform
//! ranked datasets one at a time, probing each and excluding high-failure
//! ones, until the target example count is met or candidates run out.
//!
//! Datasets are processed strictly sequentially; rows within a dataset run
//! concurrently and are re-ordered by `source_index` before emission, so
//! output files are deterministic given deterministic responses. A
//! checkpoint is written after every dataset attempt and picked up on the
//! next invocation against the same output directory.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{validate_config, ConfigError, PipelineConfig};
use crate::hub::{CorpusSource, HubClient, HubError};
use crate::llm::{Gateway, GatewayError};
use crate::report::{ReportError, RunReport};
use crate::retrieval::{
    build_index, rerank_with_self_consistency, retrieve_top_k, Embedder, EmbeddingIndex,
    RerankOptions, RetrievalError,
};
use crate::transform::{
    execute_row, expand_task, generate_plan, select_schema, ColumnSelection, ExecutionOutcome,
    ExpandedTask, InContextFixtures, TransformError,
};
use crate::types::{
    DataRow, DatasetRef, InvariantError, SelectedDataset, TaskSpec, TransformPlan,
    TransformedExample,
};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("no suitable dataset for this task")]
    NoSuitableDataset,
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// How one dataset attempt ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    /// Probe passed and the dataset filled the remaining quota.
    Accepted,
    /// Probe failure rate exceeded the threshold.
    ExcludedFailureRate,
    /// Schema selection found nothing usable (or planning failed).
    ExcludedUnusableSchema,
    /// Probe passed but the dataset ran out of rows before the quota.
    Exhausted,
}

/// Record of one dataset attempt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetAttempt {
    pub dataset: SelectedDataset,
    pub probe_attempted: u64,
    pub probe_succeeded: u64,
    pub status: AttemptStatus,
    /// Examples emitted from this dataset (never exceeds the quota
    /// remaining when the attempt started).
    pub produced: u64,
}

/// Verdict of probing a dataset's first rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeVerdict {
    pub attempted: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub failure_rate: f64,
    pub passed: bool,
}

/// Judge probe outcomes: fail iff (nulls + malformed) / attempted strictly
/// exceeds the threshold.
pub fn probe_verdict(outcomes: &[ExecutionOutcome], failure_rate_threshold: f64) -> ProbeVerdict {
    let attempted = outcomes.len() as u64;
    let succeeded = outcomes
        .iter()
        .filter(|o| matches!(o, ExecutionOutcome::Success(_)))
        .count() as u64;
    let failed = attempted - succeeded;
    let failure_rate = if attempted == 0 { 0.0 } else { failed as f64 / attempted as f64 };
    ProbeVerdict {
        attempted,
        succeeded,
        failed,
        failure_rate,
        passed: failure_rate <= failure_rate_threshold,
    }
}

/// Candidate iteration order: the reranked winner first, then remaining
/// candidates by stage-1 rank, skipping already-attempted ones. `None`
/// once `max_datasets` attempts have happened or candidates are exhausted.
pub fn next_candidate(
    winner: Option<&DatasetRef>,
    ranked: &[DatasetRef],
    attempted: &[DatasetRef],
    max_datasets: usize,
) -> Option<DatasetRef> {
    if attempted.len() >= max_datasets {
        return None;
    }
    if let Some(winner) = winner {
        if !attempted.contains(winner) {
            return Some(winner.clone());
        }
    }
    ranked
        .iter()
        .find(|c| !attempted.contains(c) && Some(*c) != winner)
        .cloned()
}

/// Serialized run state; written after every dataset attempt.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    task_id: String,
    config_digest: String,
    expanded_text: Option<String>,
    /// Stage-1 ranked candidates that survived schema/sample fetch.
    candidates: Vec<DatasetRef>,
    reranked: bool,
    winner: Option<DatasetRef>,
    attempts: Vec<DatasetAttempt>,
    emitted: u64,
    report: RunReport,
}

impl Checkpoint {
    fn fresh(task: &TaskSpec, config: &PipelineConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            task_id: task.task_id.clone(),
            config_digest: config.digest(),
            expanded_text: None,
            candidates: Vec::new(),
            reranked: false,
            winner: None,
            attempts: Vec::new(),
            emitted: 0,
            report: RunReport::default(),
        }
    }
}

/// Everything a run needs besides the task and config.
pub struct RunContext {
    pub gateway: Arc<Gateway>,
    pub embedder: Arc<dyn Embedder>,
    pub fixtures: InContextFixtures,
    /// Load the index from here when present; otherwise build from the
    /// corpus cards (and save to this path when given).
    pub index_path: Option<PathBuf>,
}

pub struct Pipeline {
    task: TaskSpec,
    config: PipelineConfig,
    hub: HubClient,
    context: RunContext,
    out_dir: PathBuf,
    state: Checkpoint,
    /// LLM usage carried over from the checkpoint; the live gateway only
    /// counts this process's calls.
    base_usage: BTreeMap<String, crate::report::StageUsage>,
    /// Materialized candidates by ref, with stage-1 rank.
    materialized: BTreeMap<DatasetRef, SelectedDataset>,
    started: Instant,
}

impl Pipeline {
    pub fn new(
        task: TaskSpec,
        config: PipelineConfig,
        corpus: &CorpusSource,
        out_dir: impl Into<PathBuf>,
        context: RunContext,
    ) -> Result<Self, PipelineError> {
        task.validate()?;
        let config = validate_config(config)?;
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir)?;
        let hub = HubClient::open(corpus)?;
        let state = load_or_init_state(&out_dir, &task, &config)?;
        let base_usage = state.report.llm_usage.clone();
        Ok(Self {
            task,
            config,
            hub,
            context,
            out_dir,
            state,
            base_usage,
            materialized: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn data_path(&self) -> PathBuf {
        self.out_dir.join("data.jsonl")
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("checkpoint.json")
    }

    fn report_path(&self) -> PathBuf {
        self.out_dir.join("report.json")
    }

    fn attempts_dir(&self, dataset: &DatasetRef) -> PathBuf {
        self.out_dir
            .join("attempts")
            .join(format!("{}__{}", dataset.name, dataset.config))
    }

    /// Run to completion. Partial quota is a success with a warning;
    /// producing nothing at all is `NoSuitableDataset`.
    pub fn run(&mut self) -> Result<(Vec<TransformedExample>, RunReport), PipelineError> {
        self.run_steps(usize::MAX)?;
        self.finalize()
    }

    /// Process at most `max_attempts` further dataset attempts, then stop.
    /// The checkpoint keeps the run resumable; tests use this to simulate
    /// interrupted runs.
    pub fn run_steps(&mut self, max_attempts: usize) -> Result<(), PipelineError> {
        self.prepare()?;
        let mut attempts_done = 0usize;
        while attempts_done < max_attempts {
            if self.state.emitted >= self.config.target_example_count {
                break;
            }
            let attempted: Vec<DatasetRef> =
                self.state.attempts.iter().map(|a| a.dataset.dataset_ref()).collect();
            let Some(candidate) = next_candidate(
                self.state.winner.as_ref(),
                &self.state.candidates,
                &attempted,
                self.config.max_datasets as usize,
            ) else {
                break;
            };
            self.attempt_dataset(&candidate)?;
            attempts_done += 1;
        }
        Ok(())
    }

    /// Expansion, stage-1 retrieval and reranking; all skipped when the
    /// checkpoint already carries their results.
    fn prepare(&mut self) -> Result<(), PipelineError> {
        if self.state.expanded_text.is_none() {
            let expanded = expand_task(&self.context.gateway, &self.config, &self.task)?;
            self.state.expanded_text = Some(expanded.expanded_text);
        }

        if self.state.candidates.is_empty() && !self.state.reranked {
            let index = self.load_or_build_index()?;
            let hits = retrieve_top_k(
                &index,
                self.context.embedder.as_ref(),
                &self.task,
                self.config.retrieval_k as usize,
            )?;
            let mut rank = 0u32;
            for hit in hits {
                match self.materialize(&hit.name, rank + 1) {
                    Ok(dataset) => {
                        rank += 1;
                        let dataset_ref = dataset.dataset_ref();
                        self.state.candidates.push(dataset_ref.clone());
                        self.materialized.insert(dataset_ref, dataset);
                    }
                    Err(e) => {
                        tracing::warn!(dataset = %hit.name, error = %e, "dropping candidate");
                    }
                }
            }
            if self.state.candidates.is_empty() {
                return Err(PipelineError::NoSuitableDataset);
            }
        }

        if !self.state.reranked {
            let candidate_refs = self.state.candidates.clone();
            let candidates: Vec<SelectedDataset> = candidate_refs
                .iter()
                .map(|r| self.get_materialized(r))
                .collect::<Result<_, _>>()?;
            let options = RerankOptions {
                votes: self.config.self_consistency_votes,
                model: self.config.planner_model.clone(),
                temperature: self.config.rerank_temperature,
                shuffle_candidates: self.config.shuffle_rerank_candidates,
                seed_name: self.task.task_id.clone(),
            };
            let result =
                rerank_with_self_consistency(&self.context.gateway, &self.task, &candidates, &options)?;
            tracing::info!(winner = ?result.winner, counts = ?result.vote_counts, "rerank complete");
            if result.winner.is_none() && !self.config.fallback_on_none {
                return Err(PipelineError::NoSuitableDataset);
            }
            if result.winner.is_none() {
                let warning =
                    "reranker chose no dataset; falling back to retrieval rank order".to_string();
                tracing::warn!("{warning}");
                self.state.report.warnings.push(warning);
            }
            self.state.winner = result.winner;
            self.state.reranked = true;
            self.write_checkpoint()?;
        }
        Ok(())
    }

    fn load_or_build_index(&self) -> Result<EmbeddingIndex, PipelineError> {
        if let Some(path) = &self.context.index_path {
            if path.is_file() {
                return Ok(EmbeddingIndex::load(path)?);
            }
        }
        let names = self.hub.list_datasets()?;
        let cards = names
            .iter()
            .map(|name| self.hub.fetch_card(name))
            .collect::<Result<Vec<_>, _>>()?;
        let index = build_index(&cards, self.context.embedder.as_ref())?;
        if let Some(path) = &self.context.index_path {
            index.save(path)?;
        }
        Ok(index)
    }

    /// Fetch card, pick the first config, and load schema plus sample rows.
    fn materialize(&self, name: &str, rank: u32) -> Result<SelectedDataset, PipelineError> {
        let card = self.hub.fetch_card(name)?;
        let config = card.configs.first().cloned().unwrap_or_else(|| "default".to_string());
        let sample_n = self.config.plan_sample_rows.max(self.config.schema_sample_rows) as usize;
        let (schema, sample_rows) =
            self.hub
                .fetch_schema_and_samples(name, &config, &self.config.split, sample_n)?;
        Ok(SelectedDataset { card, config, schema, sample_rows, retrieval_rank: rank })
    }

    fn get_materialized(&mut self, dataset: &DatasetRef) -> Result<SelectedDataset, PipelineError> {
        if let Some(found) = self.materialized.get(dataset) {
            return Ok(found.clone());
        }
        let rank = self
            .state
            .candidates
            .iter()
            .position(|c| c == dataset)
            .map(|p| p as u32 + 1)
            .unwrap_or(u32::MAX);
        let materialized = self.materialize(&dataset.name, rank)?;
        self.materialized.insert(dataset.clone(), materialized.clone());
        Ok(materialized)
    }

    fn expanded_task(&self) -> ExpandedTask {
        ExpandedTask {
            original: self.task.clone(),
            expanded_text: self.state.expanded_text.clone().unwrap_or_default(),
        }
    }

    fn attempt_dataset(&mut self, dataset_ref: &DatasetRef) -> Result<(), PipelineError> {
        let dataset = self.get_materialized(dataset_ref)?;
        let expanded = self.expanded_task();
        tracing::info!(dataset = %dataset_ref, "attempting dataset");

        let selection = match select_schema(
            &self.context.gateway,
            &self.config,
            &self.context.fixtures,
            &expanded,
            &dataset,
        ) {
            Ok(selection) => selection,
            Err(TransformError::UnusableDataset) => {
                return self.record_excluded(dataset, "no usable columns for this task");
            }
            Err(TransformError::SchemaViolation(reason)) => {
                return self.record_excluded(dataset, &format!("schema selection violation: {reason}"));
            }
            Err(other) => return Err(other.into()),
        };

        let plan = match generate_plan(
            &self.context.gateway,
            &self.config,
            &self.context.fixtures,
            &expanded,
            &dataset,
            &selection,
        ) {
            Ok(plan) => plan,
            Err(TransformError::EmptyPlan) => {
                return self.record_excluded(dataset, "planner returned an empty plan");
            }
            Err(other) => return Err(other.into()),
        };
        self.write_attempt_artifacts(dataset_ref, &selection, &plan)?;

        // Probe: execute the first rows and judge the failure rate.
        let probe_rows = self.hub.fetch_rows_flat(
            &dataset_ref.name,
            &dataset_ref.config,
            &self.config.split,
            0,
            self.config.probe_batch_size as u64,
        )?;
        let probe_outcomes =
            self.execute_batch(&expanded, &plan, &selection, dataset_ref, &probe_rows);
        let verdict = probe_verdict(&probe_outcomes, self.config.failure_rate_threshold);
        let mut all_outcomes = probe_outcomes;

        if verdict.passed {
            // Keep drawing row batches until the quota is met or the
            // dataset runs dry.
            let mut offset = verdict.attempted;
            loop {
                let emitted_if_stopped: u64 = self.state.emitted
                    + count_successes(&all_outcomes).min(self.remaining_quota());
                if emitted_if_stopped >= self.config.target_example_count {
                    break;
                }
                let batch = self.hub.fetch_rows_flat(
                    &dataset_ref.name,
                    &dataset_ref.config,
                    &self.config.split,
                    offset,
                    self.config.probe_batch_size as u64,
                )?;
                if batch.is_empty() {
                    break;
                }
                offset += batch.len() as u64;
                let outcomes =
                    self.execute_batch(&expanded, &plan, &selection, dataset_ref, &batch);
                all_outcomes.extend(outcomes);
            }
        } else {
            tracing::warn!(
                dataset = %dataset_ref,
                rate = verdict.failure_rate,
                threshold = self.config.failure_rate_threshold,
                "probe failed; keeping probe successes and abandoning dataset"
            );
        }

        self.commit_attempt(dataset, verdict, all_outcomes)
    }

    /// Execute a batch of rows with bounded concurrency; outcomes keep row
    /// order regardless of scheduling.
    fn execute_batch(
        &self,
        task: &ExpandedTask,
        plan: &TransformPlan,
        selection: &ColumnSelection,
        dataset: &DatasetRef,
        rows: &[DataRow],
    ) -> Vec<ExecutionOutcome> {
        if rows.is_empty() {
            return Vec::new();
        }
        let workers = (self.config.max_concurrent_llm_calls as usize).min(rows.len());
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<ExecutionOutcome>>> = Mutex::new(vec![None; rows.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= rows.len() {
                        break;
                    }
                    let outcome = execute_row(
                        &self.context.gateway,
                        &self.config,
                        &self.context.fixtures,
                        task,
                        plan,
                        selection,
                        dataset,
                        &rows[i],
                    )
                    .unwrap_or_else(|e| ExecutionOutcome::Malformed {
                        reason: format!("internal: {e}"),
                        raw: String::new(),
                    });
                    slots.lock().expect("outcome slots")[i] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .expect("outcome slots")
            .into_iter()
            .map(|o| o.expect("every row executed"))
            .collect()
    }

    fn remaining_quota(&self) -> u64 {
        self.config.target_example_count.saturating_sub(self.state.emitted)
    }

    fn record_excluded(
        &mut self,
        dataset: SelectedDataset,
        reason: &str,
    ) -> Result<(), PipelineError> {
        let dataset_ref = dataset.dataset_ref();
        tracing::warn!(dataset = %dataset_ref, reason, "excluding dataset");
        {
            let counters = self.state.report.dataset_mut(&dataset_ref);
            counters.excluded = true;
            counters.exclusion_reason = Some(reason.to_string());
        }
        self.state.attempts.push(DatasetAttempt {
            dataset,
            probe_attempted: 0,
            probe_succeeded: 0,
            status: AttemptStatus::ExcludedUnusableSchema,
            produced: 0,
        });
        self.state.report.recompute_totals();
        self.write_checkpoint()?;
        self.write_report()?;
        Ok(())
    }

    /// Account outcomes, emit successes up to the remaining quota in row
    /// order, and persist data, report and checkpoint.
    fn commit_attempt(
        &mut self,
        dataset: SelectedDataset,
        verdict: ProbeVerdict,
        outcomes: Vec<ExecutionOutcome>,
    ) -> Result<(), PipelineError> {
        let dataset_ref = dataset.dataset_ref();
        let quota = self.remaining_quota();
        let mut emitted: Vec<TransformedExample> = Vec::new();
        let mut discarded = 0u64;
        {
            let counters = self.state.report.dataset_mut(&dataset_ref);
            for outcome in &outcomes {
                counters.rows_attempted += 1;
                match outcome {
                    ExecutionOutcome::Success(example) => {
                        counters.rows_succeeded += 1;
                        if (emitted.len() as u64) < quota {
                            emitted.push(example.clone());
                        } else {
                            discarded += 1;
                        }
                    }
                    ExecutionOutcome::NullSample => counters.rows_null += 1,
                    ExecutionOutcome::Malformed { reason, raw } => {
                        counters.rows_malformed += 1;
                        tracing::debug!(dataset = %dataset_ref, reason, raw, "malformed row");
                    }
                }
            }
            if !verdict.passed {
                counters.excluded = true;
                counters.exclusion_reason = Some(format!(
                    "probe failure rate {:.2} exceeded threshold {:.2}",
                    verdict.failure_rate, self.config.failure_rate_threshold
                ));
            }
        }
        if discarded > 0 {
            tracing::info!(dataset = %dataset_ref, discarded, "quota met; discarding surplus successes");
        }

        let produced = emitted.len() as u64;
        self.append_data(&emitted)?;
        self.state.emitted += produced;
        self.state.report.totals.examples_emitted = self.state.emitted;
        self.state.report.recompute_totals();

        let status = if !verdict.passed {
            AttemptStatus::ExcludedFailureRate
        } else if self.state.emitted >= self.config.target_example_count {
            AttemptStatus::Accepted
        } else {
            AttemptStatus::Exhausted
        };
        self.state.attempts.push(DatasetAttempt {
            dataset,
            probe_attempted: verdict.attempted,
            probe_succeeded: verdict.succeeded,
            status,
            produced,
        });
        self.write_checkpoint()?;
        self.write_report()?;
        Ok(())
    }

    fn append_data(&self, examples: &[TransformedExample]) -> Result<(), PipelineError> {
        if examples.is_empty() {
            return Ok(());
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.data_path())?;
        let mut buffer = String::new();
        for example in examples {
            buffer.push_str(&serde_json::to_string(example)?);
            buffer.push('\n');
        }
        file.write_all(buffer.as_bytes())?;
        file.flush()?;
        Ok(())
    }

    fn write_attempt_artifacts(
        &self,
        dataset: &DatasetRef,
        selection: &ColumnSelection,
        plan: &TransformPlan,
    ) -> Result<(), PipelineError> {
        let dir = self.attempts_dir(dataset);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("plan.txt"), format!("{}\n", plan.render_steps()))?;
        std::fs::write(dir.join("selection.json"), serde_json::to_string_pretty(selection)?)?;
        Ok(())
    }

    /// Checkpoint-carried usage plus this process's gateway traffic.
    fn current_usage(&self) -> BTreeMap<String, crate::report::StageUsage> {
        merge_usage(&self.base_usage, self.context.gateway.usage_snapshot())
    }

    fn write_checkpoint(&self) -> Result<(), PipelineError> {
        let mut state = self.state.clone();
        state.report.llm_usage = self.current_usage();
        let tmp = self.checkpoint_path().with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string(&state)?)?;
        std::fs::rename(tmp, self.checkpoint_path())?;
        Ok(())
    }

    fn write_report(&self) -> Result<(), PipelineError> {
        let mut report = self.state.report.clone();
        report.llm_usage = self.current_usage();
        std::fs::write(self.report_path(), serde_json::to_string_pretty(&report)?)?;
        Ok(())
    }

    /// Validate accounting, write the final report, and hand back every
    /// emitted example (reloaded from disk so resumed runs return the
    /// full set).
    pub fn finalize(&mut self) -> Result<(Vec<TransformedExample>, RunReport), PipelineError> {
        if self.state.emitted == 0 {
            return Err(PipelineError::NoSuitableDataset);
        }
        if self.state.emitted < self.config.target_example_count {
            let warning = format!(
                "produced {} of {} requested examples; candidates exhausted",
                self.state.emitted, self.config.target_example_count
            );
            tracing::warn!("{warning}");
            if !self.state.report.warnings.contains(&warning) {
                self.state.report.warnings.push(warning);
            }
        }
        self.state.report.duration_ms += self.started.elapsed().as_millis() as u64;
        self.started = Instant::now();
        self.state.report.recompute_totals();
        self.state.report.check_identities()?;
        self.write_checkpoint()?;
        self.write_report()?;

        let examples = read_jsonl(&self.data_path())?;
        let mut report = self.state.report.clone();
        report.llm_usage = self.current_usage();
        Ok((examples, report))
    }
}

fn count_successes(outcomes: &[ExecutionOutcome]) -> u64 {
    outcomes
        .iter()
        .filter(|o| matches!(o, ExecutionOutcome::Success(_)))
        .count() as u64
}

fn merge_usage(
    saved: &BTreeMap<String, crate::report::StageUsage>,
    current: BTreeMap<String, crate::report::StageUsage>,
) -> BTreeMap<String, crate::report::StageUsage> {
    let mut merged = saved.clone();
    for (stage, usage) in current {
        merged.entry(stage).or_default().add(&usage);
    }
    merged
}

/// Read back an emitted JSONL file.
pub fn read_jsonl(path: &Path) -> Result<Vec<TransformedExample>, PipelineError> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut examples = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(serde_json::from_str(&line)?);
    }
    Ok(examples)
}

fn load_or_init_state(
    out_dir: &Path,
    task: &TaskSpec,
    config: &PipelineConfig,
) -> Result<Checkpoint, PipelineError> {
    let checkpoint_path = out_dir.join("checkpoint.json");
    let data_path = out_dir.join("data.jsonl");
    if !checkpoint_path.is_file() {
        // A fresh run must not silently append to stale output.
        if data_path.is_file() {
            std::fs::remove_file(&data_path)?;
        }
        return Ok(Checkpoint::fresh(task, config));
    }
    let text = std::fs::read_to_string(&checkpoint_path)?;
    let state: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| PipelineError::CheckpointMismatch(format!("unreadable checkpoint: {e}")))?;
    if state.version != CHECKPOINT_VERSION {
        return Err(PipelineError::CheckpointMismatch(format!(
            "checkpoint version {} != {CHECKPOINT_VERSION}",
            state.version
        )));
    }
    if state.task_id != task.task_id {
        return Err(PipelineError::CheckpointMismatch(format!(
            "checkpoint belongs to task {}, not {}",
            state.task_id, task.task_id
        )));
    }
    if state.config_digest != config.digest() {
        return Err(PipelineError::CheckpointMismatch(
            "config changed since the checkpoint was written".to_string(),
        ));
    }
    // A crash can leave rows written after the last checkpoint; trim them.
    let lines = count_lines(&data_path)?;
    if lines < state.emitted {
        return Err(PipelineError::CheckpointMismatch(format!(
            "data.jsonl has {lines} rows but checkpoint expects {}",
            state.emitted
        )));
    }
    if lines > state.emitted {
        tracing::warn!(
            extra = lines - state.emitted,
            "trimming rows written after the last checkpoint"
        );
        truncate_jsonl(&data_path, state.emitted)?;
    }
    tracing::info!(
        emitted = state.emitted,
        attempts = state.attempts.len(),
        "resuming from checkpoint"
    );
    Ok(state)
}

fn count_lines(path: &Path) -> Result<u64, PipelineError> {
    if !path.is_file() {
        return Ok(0);
    }
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(reader.lines().map_while(Result::ok).filter(|l| !l.trim().is_empty()).count() as u64)
}

fn truncate_jsonl(path: &Path, keep: u64) -> Result<(), PipelineError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let kept: Vec<String> = reader
        .lines()
        .map_while(Result::ok)
        .filter(|l| !l.trim().is_empty())
        .take(keep as usize)
        .collect();
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}
