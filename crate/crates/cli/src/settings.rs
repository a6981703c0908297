//! Config resolution: defaults < config file < environment < flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use retask_core::{validate_config, PipelineConfig};

use crate::PipelineFlags;

/// (environment variable, config field, parser) for every overridable knob.
const ENV_KEYS: &[(&str, &str, EnvKind)] = &[
    ("RETASK_TARGET_COUNT", "target_example_count", EnvKind::Unsigned),
    ("RETASK_RETRIEVAL_K", "retrieval_k", EnvKind::Unsigned),
    ("RETASK_MAX_DATASETS", "max_datasets", EnvKind::Unsigned),
    ("RETASK_VOTES", "self_consistency_votes", EnvKind::Unsigned),
    ("RETASK_FAILURE_THRESHOLD", "failure_rate_threshold", EnvKind::Float),
    ("RETASK_PROBE_BATCH", "probe_batch_size", EnvKind::Unsigned),
    ("RETASK_ROUGE_THRESHOLD", "rouge_threshold", EnvKind::Float),
    ("RETASK_CONCURRENCY", "max_concurrent_llm_calls", EnvKind::Unsigned),
    ("RETASK_PLANNER_MODEL", "planner_model", EnvKind::Text),
    ("RETASK_EXECUTOR_MODEL", "executor_model", EnvKind::Text),
    ("RETASK_JUDGE_MODEL", "judge_model", EnvKind::Text),
    ("RETASK_SPLIT", "split", EnvKind::Text),
    ("RETASK_RERANK_TEMPERATURE", "rerank_temperature", EnvKind::Float),
];

#[derive(Clone, Copy)]
enum EnvKind {
    Unsigned,
    Float,
    Text,
}

/// Resolve the effective pipeline config from all four layers and
/// validate it.
pub fn resolve_config(
    config_file: Option<&Path>,
    flags: Option<&PipelineFlags>,
) -> Result<PipelineConfig> {
    let mut layered = serde_json::to_value(PipelineConfig::default())?;
    let object = layered.as_object_mut().expect("config serializes to an object");

    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let file_value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        let Some(file_object) = file_value.as_object() else {
            bail!("config file {} is not a JSON object", path.display());
        };
        for (key, value) in file_object {
            if !object.contains_key(key) {
                bail!("config file {}: unknown field {key}", path.display());
            }
            object.insert(key.clone(), value.clone());
        }
    }

    for (var, key, kind) in ENV_KEYS {
        let Ok(raw) = std::env::var(var) else { continue };
        let value = match kind {
            EnvKind::Unsigned => serde_json::Value::from(
                raw.parse::<u64>().with_context(|| format!("{var} must be an integer"))?,
            ),
            EnvKind::Float => serde_json::Value::from(
                raw.parse::<f64>().with_context(|| format!("{var} must be a number"))?,
            ),
            EnvKind::Text => serde_json::Value::from(raw),
        };
        object.insert(key.to_string(), value);
    }

    let mut config: PipelineConfig = serde_json::from_value(layered)?;
    if let Some(flags) = flags {
        apply_flags(&mut config, flags);
    }
    Ok(validate_config(config)?)
}

fn apply_flags(config: &mut PipelineConfig, flags: &PipelineFlags) {
    if let Some(v) = flags.target_count {
        config.target_example_count = v;
    }
    if let Some(v) = flags.retrieval_k {
        config.retrieval_k = v;
    }
    if let Some(v) = flags.max_datasets {
        config.max_datasets = v;
    }
    if let Some(v) = flags.votes {
        config.self_consistency_votes = v;
    }
    if let Some(v) = flags.failure_threshold {
        config.failure_rate_threshold = v;
    }
    if let Some(v) = flags.probe_batch {
        config.probe_batch_size = v;
    }
    if let Some(v) = flags.rouge_threshold {
        config.rouge_threshold = v;
    }
    if let Some(v) = flags.concurrency {
        config.max_concurrent_llm_calls = v;
    }
    if let Some(v) = &flags.planner_model {
        config.planner_model = v.clone();
    }
    if let Some(v) = &flags.executor_model {
        config.executor_model = v.clone();
    }
    if let Some(v) = &flags.judge_model {
        config.judge_model = v.clone();
    }
    if let Some(v) = &flags.split {
        config.split = v.clone();
    }
    if let Some(v) = flags.rerank_temperature {
        config.rerank_temperature = v;
    }
    if flags.shuffle_candidates {
        config.shuffle_rerank_candidates = true;
    }
    if flags.no_fallback {
        config.fallback_on_none = false;
    }
    if let Some(v) = flags.schema_sample_rows {
        config.schema_sample_rows = v;
    }
    if let Some(v) = flags.plan_sample_rows {
        config.plan_sample_rows = v;
    }
    if let Some(v) = flags.max_retries {
        config.max_retries = v;
    }
    if let Some(v) = flags.backoff_ms {
        config.initial_backoff_ms = v;
    }
}
