//! Pipeline configuration and validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A config field failed validation. The message names the field.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// Knobs for a pipeline run. Defaults match the reference setup: a target
/// of 3000 examples, 25 retrieval candidates, and up to 4 datasets per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// How many transformed examples to aim for.
    pub target_example_count: u64,
    /// Stage-1 candidate count handed to the reranker.
    pub retrieval_k: u32,
    /// Upper bound on datasets transformed per task.
    pub max_datasets: u32,
    /// Reranker votes per self-consistency round.
    pub self_consistency_votes: u32,
    /// A probe fails when (null + malformed) / attempted exceeds this.
    pub failure_rate_threshold: f64,
    /// Rows executed per probe, and the row chunk size thereafter.
    pub probe_batch_size: u32,
    /// ROUGE-L similarity at or above which two examples are near-duplicates.
    pub rouge_threshold: f64,
    /// In-flight LLM call bound shared by all stages.
    pub max_concurrent_llm_calls: u32,
    /// Model for reranking, schema selection, planning and task expansion.
    pub planner_model: String,
    /// Model for per-row plan execution.
    pub executor_model: String,
    /// Model for difficulty judging.
    pub judge_model: String,
    /// Sampling temperature for rerank votes; the other stages run at 0.
    pub rerank_temperature: f64,
    /// Shuffle candidate order per rerank vote instead of rank order.
    pub shuffle_rerank_candidates: bool,
    /// Sample rows shown to the schema selector.
    pub schema_sample_rows: u32,
    /// Sample rows shown to the planner.
    pub plan_sample_rows: u32,
    /// When the reranker settles on no dataset, fall back to stage-1 rank
    /// order instead of failing the run.
    pub fallback_on_none: bool,
    /// Dataset split to draw rows from.
    pub split: String,
    /// Transport retries per LLM call.
    pub max_retries: u32,
    /// First retry delay; doubles per attempt.
    pub initial_backoff_ms: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_example_count: 3000,
            retrieval_k: 25,
            max_datasets: 4,
            self_consistency_votes: 5,
            failure_rate_threshold: 0.5,
            probe_batch_size: 50,
            rouge_threshold: 0.7,
            max_concurrent_llm_calls: 8,
            planner_model: "gpt-4-turbo".to_string(),
            executor_model: "gpt-3.5-turbo".to_string(),
            judge_model: "gpt-3.5-turbo".to_string(),
            rerank_temperature: 0.7,
            shuffle_rerank_candidates: false,
            schema_sample_rows: 1,
            plan_sample_rows: 3,
            fallback_on_none: true,
            split: "train".to_string(),
            max_retries: 3,
            initial_backoff_ms: 200,
        }
    }
}

/// Check every config invariant, returning the config unchanged when all
/// hold. The error names the first violated field.
pub fn validate_config(config: PipelineConfig) -> Result<PipelineConfig, ConfigError> {
    fn at_least_one(name: &str, value: u64) -> Result<(), ConfigError> {
        if value == 0 {
            return Err(ConfigError(format!("{name} must be >= 1")));
        }
        Ok(())
    }
    fn fraction(name: &str, value: f64) -> Result<(), ConfigError> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(ConfigError(format!("{name} must be in (0, 1]")));
        }
        Ok(())
    }

    at_least_one("target_example_count", config.target_example_count)?;
    at_least_one("retrieval_k", config.retrieval_k as u64)?;
    at_least_one("max_datasets", config.max_datasets as u64)?;
    at_least_one("self_consistency_votes", config.self_consistency_votes as u64)?;
    fraction("failure_rate_threshold", config.failure_rate_threshold)?;
    at_least_one("probe_batch_size", config.probe_batch_size as u64)?;
    fraction("rouge_threshold", config.rouge_threshold)?;
    at_least_one("max_concurrent_llm_calls", config.max_concurrent_llm_calls as u64)?;
    for (name, value) in [
        ("planner_model", &config.planner_model),
        ("executor_model", &config.executor_model),
        ("judge_model", &config.judge_model),
    ] {
        if value.trim().is_empty() {
            return Err(ConfigError(format!("{name} must be non-empty")));
        }
    }
    if config.rerank_temperature < 0.0 {
        return Err(ConfigError("rerank_temperature must be >= 0".to_string()));
    }
    at_least_one("schema_sample_rows", config.schema_sample_rows as u64)?;
    at_least_one("plan_sample_rows", config.plan_sample_rows as u64)?;
    if config.split.trim().is_empty() {
        return Err(ConfigError("split must be non-empty".to_string()));
    }
    Ok(config)
}

impl PipelineConfig {
    /// Digest over the serialized config; checkpoints refuse to resume
    /// under a different configuration.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}
