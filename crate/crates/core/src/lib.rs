//! Turn existing public datasets into task-aligned training data.
//!
//! Given a task description with a few demonstration examples, the
//! pipeline retrieves candidate datasets from a hub by embedding
//! similarity, reranks them with an LLM using self-consistency voting,
//! plans a once-per-dataset transformation, executes the plan on every
//! row, and keeps going across datasets until the requested number of
//! `input`/`output` training examples exists. A quality module measures
//! the result: ROUGE-L uniqueness, lexical diversity and LLM-judged
//! difficulty.
//!
//! Modules map to pipeline stages: [`hub`] supplies datasets, [`retrieval`]
//! finds and reranks candidates, [`transform`] runs the four LLM stages,
//! [`orchestrator`] drives the whole run, and [`quality`] analyzes output
//! datasets. [`llm`] is the shared gateway. Everything serializes as JSON;
//! example datasets are JSON Lines with `input`, `output` and `provenance`
//! keys per line.

pub mod config;
pub mod hub;
pub mod llm;
pub mod orchestrator;
pub mod quality;
pub mod report;
pub mod retrieval;
pub mod transform;
pub mod types;

pub use config::{validate_config, ConfigError, PipelineConfig};
pub use hub::{CorpusKind, CorpusSource, HubClient, HubError, RowPage};
pub use llm::{Gateway, GatewayError, GatewayOptions, LlmRequest, LlmResponse, MockProvider};
pub use orchestrator::{
    next_candidate, probe_verdict, read_jsonl, AttemptStatus, DatasetAttempt, Pipeline,
    PipelineError, ProbeVerdict, RunContext,
};
pub use quality::{
    dedup_filter, default_rouge_threshold, diversity_report, estimate_difficulty, rouge_l,
    uniqueness_report, DifficultyReport, DiversityReport, TaskKind, UniquenessReport,
};
pub use report::{merge_report, DatasetCounters, ReportError, RunReport, StageUsage};
pub use retrieval::{
    build_index, rerank_once, rerank_with_self_consistency, retrieve_top_k, EmbeddingIndex,
    HashEmbedder, RerankResult, RerankVote, RetrievalError,
};
pub use transform::{
    execute_row, expand_task, generate_plan, select_schema, ColumnSelection, ExecutionOutcome,
    ExpandedTask, InContextFixtures, TransformError,
};
pub use types::{
    DataRow, DatasetCard, DatasetRef, DatasetSchema, DemoExample, Provenance, SelectedDataset,
    TaskSpec, TransformPlan, TransformedExample,
};
