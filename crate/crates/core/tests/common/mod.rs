//! Shared helpers for integration tests: the bundled fixture paths, and a
//! scenario builder that fabricates corpora plus matching transcripts with
//! controlled per-row outcomes.
//
// Each test target compiles this module separately and uses a subset.
#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use retask_core::llm::{Transcript, TranscriptEntry};
use retask_core::transform::InContextFixtures;
use retask_core::{
    CorpusSource, Gateway, GatewayOptions, HashEmbedder, MockProvider, Pipeline, PipelineConfig,
    RunContext, TaskSpec,
};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn toy_corpus() -> CorpusSource {
    CorpusSource::local(fixtures_dir().join("toy_corpus").to_str().unwrap())
}

pub fn toy_task() -> TaskSpec {
    let text = std::fs::read_to_string(fixtures_dir().join("tasks/code_description.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn toy_mock() -> Arc<MockProvider> {
    Arc::new(
        MockProvider::from_file(&fixtures_dir().join("transcripts/code_description.json")).unwrap(),
    )
}

pub fn toy_config(target: u64) -> PipelineConfig {
    PipelineConfig { target_example_count: target, ..Default::default() }
}

pub fn make_pipeline(
    task: TaskSpec,
    config: PipelineConfig,
    corpus: &CorpusSource,
    out_dir: &Path,
    mock: Arc<MockProvider>,
) -> (Pipeline, Arc<Gateway>) {
    let gateway = Arc::new(Gateway::new(mock, GatewayOptions::from_config(&config)));
    let context = RunContext {
        gateway: gateway.clone(),
        embedder: Arc::new(HashEmbedder::default()),
        fixtures: InContextFixtures::default(),
        index_path: None,
    };
    let pipeline = Pipeline::new(task, config, corpus, out_dir, context).unwrap();
    (pipeline, gateway)
}

/// Per-row outcome a scenario dataset should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Ok,
    Null,
    Malformed,
}

/// One fabricated dataset: a name plus the outcome of each row in order.
#[derive(Debug, Clone)]
pub struct ScenarioDataset {
    pub name: String,
    pub rows: Vec<RowKind>,
}

impl ScenarioDataset {
    pub fn new(name: &str, rows: Vec<RowKind>) -> Self {
        Self { name: name.to_string(), rows }
    }

    pub fn successes(&self) -> u64 {
        self.rows.iter().filter(|r| matches!(r, RowKind::Ok)).count() as u64
    }
}

/// Fabricated corpus + transcript. All cards share one description so
/// stage-1 ranking degenerates to name order, which keeps candidate order
/// predictable for oracles.
pub struct Scenario {
    pub datasets: Vec<ScenarioDataset>,
    pub winner: String,
    pub corpus_dir: tempfile::TempDir,
}

impl Scenario {
    pub fn build(datasets: Vec<ScenarioDataset>, winner: &str) -> Self {
        let corpus_dir = tempfile::tempdir().unwrap();
        for dataset in &datasets {
            let ddir = corpus_dir.path().join(&dataset.name);
            std::fs::create_dir_all(ddir.join("default")).unwrap();
            let card = serde_json::json!({
                "name": dataset.name,
                "configs": ["default"],
                "description": "Rows of generic content to transform.",
                "tags": ["scenario"],
            });
            std::fs::write(ddir.join("card.json"), card.to_string()).unwrap();
            let schema = serde_json::json!({
                "columns": [
                    {"name": "content", "value_kind": "text"},
                    {"name": "marker", "value_kind": "text"},
                ],
            });
            std::fs::write(ddir.join("default/schema.json"), schema.to_string()).unwrap();
            let mut file =
                std::fs::File::create(ddir.join("default/rows.jsonl")).unwrap();
            for (i, kind) in dataset.rows.iter().enumerate() {
                let marker = match kind {
                    RowKind::Ok => "ok",
                    RowKind::Null => "skip-null",
                    RowKind::Malformed => "skip-malformed",
                };
                let row = serde_json::json!({
                    "content": format!("{} item {i}", dataset.name),
                    "marker": marker,
                });
                writeln!(file, "{row}").unwrap();
            }
        }
        Self { datasets, winner: winner.to_string(), corpus_dir }
    }

    pub fn corpus(&self) -> CorpusSource {
        CorpusSource::local(self.corpus_dir.path().to_str().unwrap())
    }

    /// Transcript answering every stage; rerank votes are configurable.
    pub fn transcript(&self, rerank_votes: Vec<String>) -> Transcript {
        let entries = vec![
            TranscriptEntry {
                label: Some("execute_null".into()),
                digest: None,
                pattern: Some(
                    r#"(?s)You are a Data Transforming Agent.*"marker":"skip-null""#.into(),
                ),
                contains: None,
                response: Some("This sample is irrelevant, returning null".into()),
                responses: None,
                response_template: None,
            },
            TranscriptEntry {
                label: Some("execute_malformed".into()),
                digest: None,
                pattern: Some(
                    r#"(?s)You are a Data Transforming Agent.*"marker":"skip-malformed""#.into(),
                ),
                contains: None,
                response: Some("I cannot structure this row at all".into()),
                responses: None,
                response_template: None,
            },
            TranscriptEntry {
                label: Some("execute_ok".into()),
                digest: None,
                pattern: Some(
                    r#"(?s)You are a Data Transforming Agent.*"content":"([^"]*)""#.into(),
                ),
                contains: None,
                response: None,
                responses: None,
                response_template: Some(
                    r#"{"input": "$1", "output": "transformed $1"}"#.into(),
                ),
            },
            TranscriptEntry {
                label: Some("plan".into()),
                digest: None,
                pattern: None,
                contains: Some("You are a Planning Agent".into()),
                response: Some(
                    "1. Use the \"content\" field as the \"input\".\n2. Generate the \"output\" from it.\n3. If the marker says to skip, return null for that entry.".into(),
                ),
                responses: None,
                response_template: None,
            },
            TranscriptEntry {
                label: Some("schema".into()),
                digest: None,
                pattern: None,
                contains: Some("Required Columns".into()),
                response: Some(
                    r#"{"input": ["content"], "output": [], "irrelevant": [], "ambiguous": ["marker"]}"#.into(),
                ),
                responses: None,
                response_template: None,
            },
            TranscriptEntry {
                label: Some("rerank".into()),
                digest: None,
                pattern: None,
                contains: Some("The name of the most relevant dataset for this task is:".into()),
                response: None,
                responses: Some(rerank_votes),
                response_template: None,
            },
            TranscriptEntry {
                label: Some("task_expand".into()),
                digest: None,
                pattern: None,
                contains: Some("Carefully analyse the task description".into()),
                response: Some(
                    "Each input is a content string; the output restates it after transformation.".into(),
                ),
                responses: None,
                response_template: None,
            },
        ];
        Transcript { entries }
    }

    pub fn task(&self) -> TaskSpec {
        TaskSpec {
            instruction: "Transform generic content rows into training pairs.".into(),
            examples: vec![],
            task_id: "scenario".into(),
        }
    }

    /// Candidate order the pipeline will use: winner first, then the rest
    /// alphabetically (equal embeddings tie-break by name).
    pub fn candidate_order(&self) -> Vec<&ScenarioDataset> {
        let mut order: Vec<&ScenarioDataset> = Vec::new();
        if let Some(winner) = self.datasets.iter().find(|d| d.name == self.winner) {
            order.push(winner);
        }
        let mut rest: Vec<&ScenarioDataset> =
            self.datasets.iter().filter(|d| d.name != self.winner).collect();
        rest.sort_by(|a, b| a.name.cmp(&b.name));
        order.extend(rest);
        order
    }

    /// Independent prediction of how many examples a run should emit.
    pub fn expected_emitted(&self, config: &PipelineConfig) -> u64 {
        let mut emitted = 0u64;
        let attempt_cap = config.max_datasets as usize;
        for dataset in self.candidate_order().into_iter().take(attempt_cap) {
            if emitted >= config.target_example_count {
                break;
            }
            let remaining = config.target_example_count - emitted;
            let probe_len = (config.probe_batch_size as usize).min(dataset.rows.len());
            let probe_fails = dataset.rows[..probe_len]
                .iter()
                .filter(|r| !matches!(r, RowKind::Ok))
                .count() as u64;
            let probe_successes = probe_len as u64 - probe_fails;
            let rate = if probe_len == 0 { 0.0 } else { probe_fails as f64 / probe_len as f64 };
            if rate > config.failure_rate_threshold {
                emitted += probe_successes.min(remaining);
            } else {
                emitted += dataset.successes().min(remaining);
            }
        }
        emitted
    }
}
