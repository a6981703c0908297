//! The four-stage transformation: task expansion, schema selection,
//! once-per-dataset plan generation, and per-row plan execution.
//!
//! Ambiguous columns stay visible to the planner and executor (they may
//! carry signal); irrelevant columns are dropped from every downstream
//! prompt.

pub mod fixtures;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::llm::template::{bindings, PromptTemplate, TemplateName};
use crate::llm::{Gateway, GatewayError, JsonExtract, LlmRequest};
use crate::types::{
    format_demo_examples, DataRow, DatasetRef, SelectedDataset, TaskSpec, TransformPlan,
    TransformedExample,
};
pub use fixtures::InContextFixtures;

/// Demonstration examples inserted into prompts, matching the two-shot
/// evaluation regime.
const DEMO_LIMIT: usize = 2;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] crate::llm::TemplateError),
    #[error("empty expansion")]
    EmptyExpansion,
    #[error("expansion identical to instruction")]
    ExpansionEchoesInstruction,
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("dataset has no usable columns for this task")]
    UnusableDataset,
    #[error("empty plan")]
    EmptyPlan,
}

/// A task plus its LLM-expanded description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedTask {
    pub original: TaskSpec,
    pub expanded_text: String,
}

/// Column classification for one (task, dataset) pair. The four groups are
/// disjoint and every named column exists in the dataset schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSelection {
    pub input_cols: Vec<String>,
    pub output_col: Option<String>,
    pub irrelevant: Vec<String>,
    pub ambiguous: Vec<String>,
}

impl ColumnSelection {
    /// Columns allowed into planner and executor prompts: selected plus
    /// ambiguous, never irrelevant.
    pub fn prompt_columns(&self) -> Vec<String> {
        let mut columns = self.input_cols.clone();
        columns.extend(self.output_col.clone());
        columns.extend(self.ambiguous.clone());
        columns
    }
}

/// What one row produced: a transformed example, the plan's null signal,
/// or a malformed response with its reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionOutcome {
    Success(TransformedExample),
    NullSample,
    Malformed { reason: String, raw: String },
}

/// Expand the task description with one planner-model call. The expansion
/// must be non-empty and distinct from the bare instruction.
pub fn expand_task(
    gateway: &Gateway,
    config: &PipelineConfig,
    task: &TaskSpec,
) -> Result<ExpandedTask, TransformError> {
    let template = PromptTemplate::builtin(TemplateName::TaskExpand);
    let prompt = template.render(&bindings(&[
        ("task_description", &task.instruction),
        ("examples", &format_demo_examples(&task.examples, DEMO_LIMIT)),
    ]))?;
    let request = LlmRequest::new(&config.planner_model, prompt, 0.0);
    let response = gateway.complete("task_expand", &request)?;
    let expanded_text = response.text.trim().to_string();
    if expanded_text.is_empty() {
        return Err(TransformError::EmptyExpansion);
    }
    if expanded_text == task.instruction.trim() {
        return Err(TransformError::ExpansionEchoesInstruction);
    }
    Ok(ExpandedTask { original: task.clone(), expanded_text })
}

fn string_list(value: &serde_json::Value, key: &str) -> Result<Vec<String>, TransformError> {
    match value {
        serde_json::Value::Array(items) => items
            .iter()
            .map(|item| match item {
                serde_json::Value::String(s) => Ok(s.clone()),
                other => Err(TransformError::SchemaViolation(format!(
                    "{key} contains a non-string entry: {other}"
                ))),
            })
            .collect(),
        serde_json::Value::String(s) if s.is_empty() => Ok(vec![]),
        serde_json::Value::String(s) => Ok(vec![s.clone()]),
        serde_json::Value::Null => Ok(vec![]),
        other => Err(TransformError::SchemaViolation(format!(
            "{key} is not a list: {other}"
        ))),
    }
}

/// Validate a raw selection response against the dataset schema.
pub fn validate_selection(
    raw: &serde_json::Map<String, serde_json::Value>,
    dataset: &SelectedDataset,
) -> Result<ColumnSelection, TransformError> {
    let input_cols = string_list(&raw["input"], "input")?;
    let output_cols = string_list(&raw["output"], "output")?;
    let irrelevant = string_list(&raw["irrelevant"], "irrelevant")?;
    let ambiguous = string_list(&raw["ambiguous"], "ambiguous")?;

    if output_cols.len() > 1 {
        return Err(TransformError::SchemaViolation(format!(
            "more than one output column: {}",
            output_cols.join(", ")
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (group, columns) in [
        ("input", &input_cols),
        ("output", &output_cols),
        ("irrelevant", &irrelevant),
        ("ambiguous", &ambiguous),
    ] {
        for column in columns {
            if !dataset.schema.has_column(column) {
                return Err(TransformError::SchemaViolation(format!(
                    "unknown column in {group}: {column}"
                )));
            }
            if !seen.insert(column.clone()) {
                return Err(TransformError::SchemaViolation(format!(
                    "column {column} appears in more than one group"
                )));
            }
        }
    }
    if input_cols.is_empty() && output_cols.is_empty() {
        return Err(TransformError::UnusableDataset);
    }
    Ok(ColumnSelection {
        input_cols,
        output_col: output_cols.into_iter().next(),
        irrelevant,
        ambiguous,
    })
}

/// Classify the dataset's columns for the task. Returns `UnusableDataset`
/// when the model reports no relevant input or output columns.
pub fn select_schema(
    gateway: &Gateway,
    config: &PipelineConfig,
    fixtures: &InContextFixtures,
    task: &ExpandedTask,
    dataset: &SelectedDataset,
) -> Result<ColumnSelection, TransformError> {
    let sample_rows: Vec<String> = dataset
        .sample_rows
        .iter()
        .take(config.schema_sample_rows as usize)
        .map(DataRow::render_full)
        .collect();
    let template = PromptTemplate::builtin(TemplateName::SchemaSelect);
    let prompt = template.render(&bindings(&[
        ("incontext_examples", &fixtures.schema_select),
        ("instruction", &task.expanded_text),
        ("dataset_name", &dataset.card.name),
        ("dataset_description", &dataset.card.description),
        ("sample_row", &sample_rows.join("\n")),
        ("dataset_columns", &dataset.schema.column_names().join(", ")),
    ]))?;
    let request = LlmRequest::new(&config.planner_model, prompt, 0.0);
    match gateway.complete_json(
        "schema_select",
        &request,
        &["input", "output", "irrelevant", "ambiguous"],
    )? {
        JsonExtract::Object(map) => validate_selection(&map, dataset),
        JsonExtract::Null => Err(TransformError::UnusableDataset),
    }
}

/// Split a plan response into ordered steps. Accepts `1.`, `1)` and `-`
/// prefixes; continuation lines attach to the current step. Responses with
/// no recognizable steps fall back to a single-step plan and are flagged.
pub fn parse_plan_steps(text: &str) -> Vec<String> {
    fn step_start(line: &str) -> Option<&str> {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("- ") {
            return Some(rest.trim_start());
        }
        let digits: String = trimmed.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() || digits.len() > 3 {
            return None;
        }
        let after = &trimmed[digits.len()..];
        after
            .strip_prefix('.')
            .or_else(|| after.strip_prefix(')'))
            .map(str::trim_start)
    }

    let mut steps: Vec<String> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = step_start(line) {
            steps.push(rest.trim_end().to_string());
        } else if let Some(current) = steps.last_mut() {
            let continuation = line.trim();
            if !continuation.is_empty() {
                current.push(' ');
                current.push_str(continuation);
            }
        }
    }
    steps.retain(|s| !s.trim().is_empty());
    if steps.is_empty() && !text.trim().is_empty() {
        tracing::warn!("plan response had no parseable steps; using it whole");
        steps.push(text.trim().to_string());
    }
    steps
}

/// Generate the once-per-(task, dataset) transformation plan. Sample rows
/// in the prompt are restricted to selected and ambiguous columns.
pub fn generate_plan(
    gateway: &Gateway,
    config: &PipelineConfig,
    fixtures: &InContextFixtures,
    task: &ExpandedTask,
    dataset: &SelectedDataset,
    selection: &ColumnSelection,
) -> Result<TransformPlan, TransformError> {
    let columns = selection.prompt_columns();
    let sample_rows: Vec<String> = dataset
        .sample_rows
        .iter()
        .take(config.plan_sample_rows as usize)
        .map(|row| row.render_restricted(&columns))
        .collect();
    let template = PromptTemplate::builtin(TemplateName::Plan);
    let prompt = template.render(&bindings(&[
        ("in_context_examples", &fixtures.plan),
        ("task_description", &task.expanded_text),
        ("examples", &format_demo_examples(&task.original.examples, DEMO_LIMIT)),
        ("dataset_row", &sample_rows.join("\n")),
    ]))?;
    let request = LlmRequest::new(&config.planner_model, prompt, 0.0);
    let response = gateway.complete("plan", &request)?;
    let steps = parse_plan_steps(&response.text);
    if steps.is_empty() {
        return Err(TransformError::EmptyPlan);
    }
    Ok(TransformPlan {
        steps,
        raw_response: response.text,
        source_dataset: DatasetRef::new(dataset.card.name.clone(), dataset.config.clone()),
    })
}

fn text_field(
    map: &serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<String, String> {
    match &map[key] {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        serde_json::Value::Null => Err(format!("null {key}")),
        other => Ok(other.to_string()),
    }
}

/// Execute the plan on one row. The response must end in a JSON object
/// with `input` and `output`; a bare `null` marks the row irrelevant, and
/// everything else (including transport failure) is malformed.
#[allow(clippy::too_many_arguments)]
pub fn execute_row(
    gateway: &Gateway,
    config: &PipelineConfig,
    fixtures: &InContextFixtures,
    task: &ExpandedTask,
    plan: &TransformPlan,
    selection: &ColumnSelection,
    dataset: &DatasetRef,
    row: &DataRow,
) -> Result<ExecutionOutcome, TransformError> {
    let columns = selection.prompt_columns();
    let template = PromptTemplate::builtin(TemplateName::Execute);
    let prompt = template.render(&bindings(&[
        ("incontext_examples", &fixtures.execute),
        ("task_description", &task.expanded_text),
        ("sample", &format_demo_examples(&task.original.examples, DEMO_LIMIT)),
        ("plan", &format!("Transformation Plan:\n{}", plan.render_steps())),
        ("dataset_row", &row.render_restricted(&columns)),
    ]))?;
    let request = LlmRequest::new(&config.executor_model, prompt, 0.0);
    let extracted = match gateway.complete_json("execute", &request, &["input", "output"]) {
        Ok(extract) => extract,
        Err(GatewayError::MalformedJson { raw }) => {
            return Ok(ExecutionOutcome::Malformed { reason: "no JSON object".to_string(), raw })
        }
        Err(GatewayError::MissingKeys { missing, raw }) => {
            return Ok(ExecutionOutcome::Malformed {
                reason: format!("missing keys: {}", missing.join(", ")),
                raw,
            })
        }
        Err(GatewayError::Exhausted { attempts, last }) => {
            return Ok(ExecutionOutcome::Malformed {
                reason: format!("transport after {attempts} attempts"),
                raw: last,
            })
        }
        Err(other) => return Err(other.into()),
    };
    let map = match extracted {
        JsonExtract::Null => return Ok(ExecutionOutcome::NullSample),
        JsonExtract::Object(map) => map,
    };
    let raw = serde_json::Value::Object(map.clone()).to_string();
    let input = match text_field(&map, "input") {
        Ok(v) => v,
        Err(reason) => return Ok(ExecutionOutcome::Malformed { reason, raw }),
    };
    let output = match text_field(&map, "output") {
        Ok(v) => v,
        Err(reason) => return Ok(ExecutionOutcome::Malformed { reason, raw }),
    };
    if input.trim().is_empty() {
        return Ok(ExecutionOutcome::Malformed { reason: "empty input".to_string(), raw });
    }
    if output.trim().is_empty() {
        return Ok(ExecutionOutcome::Malformed { reason: "empty output".to_string(), raw });
    }
    Ok(ExecutionOutcome::Success(TransformedExample {
        input,
        output,
        provenance: crate::types::Provenance {
            dataset: dataset.name.clone(),
            config: dataset.config.clone(),
            source_index: row.source_index,
        },
    }))
}
