//! Domain types shared across the pipeline.
//!
//! All row values are normalized to text at ingestion: strings pass through,
//! numbers and booleans become their canonical decimal / `true` / `false`
//! forms, lists and nested objects become compact JSON text, and JSON `null`
//! becomes the empty string. Prompts only ever see text.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failure for a domain-type invariant.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct InvariantError(pub String);

fn invariant(msg: impl Into<String>) -> InvariantError {
    InvariantError(msg.into())
}

/// One demonstration example inside a task specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoExample {
    pub input: String,
    pub output: String,
}

impl DemoExample {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.input.trim().is_empty() {
            return Err(invariant("demo example input must be non-empty"));
        }
        if self.output.trim().is_empty() {
            return Err(invariant("demo example output must be non-empty"));
        }
        Ok(())
    }
}

/// The user's task: an instruction plus optional few-shot demonstrations.
///
/// `task_id` namespaces caches, checkpoints and reports for the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    #[serde(default)]
    pub examples: Vec<DemoExample>,
    pub task_id: String,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.instruction.trim().is_empty() {
            return Err(invariant("task instruction must be non-empty"));
        }
        if self.task_id.trim().is_empty() {
            return Err(invariant("task_id must be non-empty"));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            ex.validate()
                .map_err(|e| invariant(format!("example {i}: {e}")))?;
        }
        Ok(())
    }
}

/// A candidate dataset's card: hub identifier, configs, description, tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCard {
    pub name: String,
    #[serde(default)]
    pub configs: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl DatasetCard {
    /// Empty descriptions are tolerated but worth surfacing to the operator.
    pub fn has_description(&self) -> bool {
        !self.description.trim().is_empty()
    }
}

/// Broad classification of a column's value shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Text,
    Number,
    Boolean,
    List,
    Nested,
    Other,
}

/// One named column of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub value_kind: ValueKind,
}

/// Column metadata for one dataset config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<Column>,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.columns.is_empty() {
            return Err(invariant("schema must have at least one column"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(invariant(format!("duplicate column name: {}", col.name)));
            }
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }
}

/// One record of a dataset, with every value already normalized to text.
///
/// `source_index` is the row's position in the canonical split order and is
/// what provenance points back to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRow {
    pub values: BTreeMap<String, String>,
    pub source_index: u64,
}

impl DataRow {
    /// Keys must be a subset of the owning schema's columns.
    pub fn validate_against(&self, schema: &DatasetSchema) -> Result<(), InvariantError> {
        for key in self.values.keys() {
            if !schema.has_column(key) {
                return Err(invariant(format!(
                    "row {} has unknown column: {key}",
                    self.source_index
                )));
            }
        }
        Ok(())
    }

    /// Compact JSON rendering of the row restricted to `columns`, in the
    /// order given. Used when embedding rows into prompts.
    pub fn render_restricted(&self, columns: &[String]) -> String {
        let mut map = serde_json::Map::new();
        for col in columns {
            if let Some(v) = self.values.get(col) {
                map.insert(col.clone(), serde_json::Value::String(v.clone()));
            }
        }
        serde_json::Value::Object(map).to_string()
    }

    /// Compact JSON rendering of the full row.
    pub fn render_full(&self) -> String {
        let cols: Vec<String> = self.values.keys().cloned().collect();
        self.render_restricted(&cols)
    }
}

/// Normalize one raw JSON value to its canonical text form.
pub fn normalize_value(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Bool(b) => b.to_string(),
        serde_json::Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

/// Identifier of a dataset plus the config chosen within it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub config: String,
}

impl DatasetRef {
    pub fn new(name: impl Into<String>, config: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            config: config.into(),
        }
    }
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.config)
    }
}

/// A dataset chosen for transformation, with everything the reranker and
/// planner need: card, schema, sample rows and its stage-1 rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedDataset {
    pub card: DatasetCard,
    pub config: String,
    pub schema: DatasetSchema,
    pub sample_rows: Vec<DataRow>,
    /// 1-based position in the stage-1 retrieval ranking.
    pub retrieval_rank: u32,
}

impl SelectedDataset {
    pub fn dataset_ref(&self) -> DatasetRef {
        DatasetRef::new(self.card.name.clone(), self.config.clone())
    }
}

/// The once-per-task ordered list of transformation steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformPlan {
    pub steps: Vec<String>,
    pub raw_response: String,
    pub source_dataset: DatasetRef,
}

impl TransformPlan {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.steps.is_empty() {
            return Err(invariant("plan must have at least one step"));
        }
        if self.steps.iter().any(|s| s.trim().is_empty()) {
            return Err(invariant("plan steps must be non-empty"));
        }
        Ok(())
    }

    /// Numbered rendering used inside execution prompts and `plan.txt`.
    pub fn render_steps(&self) -> String {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Where a transformed example came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub config: String,
    pub source_index: u64,
}

/// One output record: exactly `input` and `output` text plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformedExample {
    pub input: String,
    pub output: String,
    pub provenance: Provenance,
}

impl TransformedExample {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.input.trim().is_empty() {
            return Err(invariant("transformed example input must be non-empty"));
        }
        if self.output.trim().is_empty() {
            return Err(invariant("transformed example output must be non-empty"));
        }
        Ok(())
    }
}

/// Render up to `limit` demonstration examples as a prompt block.
pub fn format_demo_examples(examples: &[DemoExample], limit: usize) -> String {
    if examples.is_empty() {
        return "(no examples provided)".to_string();
    }
    examples
        .iter()
        .take(limit)
        .enumerate()
        .map(|(i, ex)| format!("Example {}:\ninput: {}\noutput: {}", i + 1, ex.input, ex.output))
        .collect::<Vec<_>>()
        .join("\n\n")
}
