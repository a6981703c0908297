//! Run accounting: per-dataset counters, totals and LLM usage by stage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::DatasetRef;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("dataset {0}: counter identity violated (attempted {1} != succeeded {2} + null {3} + malformed {4})")]
    CounterIdentity(String, u64, u64, u64, u64),
    #[error("dataset {0}: conflicting exclusion flags")]
    ConflictingExclusion(String),
}

/// Row outcome counters for one dataset attempt.
///
/// Invariant: `rows_attempted = rows_succeeded + rows_null + rows_malformed`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounters {
    pub rows_attempted: u64,
    pub rows_succeeded: u64,
    pub rows_null: u64,
    pub rows_malformed: u64,
    pub excluded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<String>,
}

impl DatasetCounters {
    pub fn check_identity(&self, dataset: &str) -> Result<(), ReportError> {
        let sum = self.rows_succeeded + self.rows_null + self.rows_malformed;
        if self.rows_attempted != sum {
            return Err(ReportError::CounterIdentity(
                dataset.to_string(),
                self.rows_attempted,
                self.rows_succeeded,
                self.rows_null,
                self.rows_malformed,
            ));
        }
        Ok(())
    }
}

/// LLM traffic for one pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cache_hits: u64,
}

impl StageUsage {
    pub fn add(&mut self, other: &StageUsage) {
        self.calls += other.calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.cache_hits += other.cache_hits;
    }
}

/// Aggregate totals over every dataset in a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub rows_attempted: u64,
    pub rows_succeeded: u64,
    pub rows_null: u64,
    pub rows_malformed: u64,
    pub examples_emitted: u64,
}

/// Full accounting record for a run. Datasets are keyed by `name/config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub datasets: BTreeMap<String, DatasetCounters>,
    pub totals: RunTotals,
    pub duration_ms: u64,
    /// LLM usage keyed by stage name (task_expand, rerank, schema_select,
    /// plan, execute, difficulty).
    pub llm_usage: BTreeMap<String, StageUsage>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn dataset_mut(&mut self, dataset: &DatasetRef) -> &mut DatasetCounters {
        self.datasets.entry(dataset.to_string()).or_default()
    }

    /// Recompute row totals from the per-dataset counters. Leaves
    /// `examples_emitted` untouched; the orchestrator owns that figure.
    pub fn recompute_totals(&mut self) {
        let mut totals = RunTotals {
            examples_emitted: self.totals.examples_emitted,
            ..Default::default()
        };
        for counters in self.datasets.values() {
            totals.rows_attempted += counters.rows_attempted;
            totals.rows_succeeded += counters.rows_succeeded;
            totals.rows_null += counters.rows_null;
            totals.rows_malformed += counters.rows_malformed;
        }
        self.totals = totals;
    }

    /// Verify the counter identity for every dataset.
    pub fn check_identities(&self) -> Result<(), ReportError> {
        for (name, counters) in &self.datasets {
            counters.check_identity(name)?;
        }
        Ok(())
    }
}

/// Merge two reports with disjoint or identical dataset keys: counters are
/// summed and the identity re-checked per dataset.
pub fn merge_report(a: &RunReport, b: &RunReport) -> Result<RunReport, ReportError> {
    let mut merged = a.clone();
    for (key, counters) in &b.datasets {
        counters.check_identity(key)?;
        match merged.datasets.get_mut(key) {
            Some(existing) => {
                existing.check_identity(key)?;
                if existing.excluded != counters.excluded {
                    return Err(ReportError::ConflictingExclusion(key.clone()));
                }
                existing.rows_attempted += counters.rows_attempted;
                existing.rows_succeeded += counters.rows_succeeded;
                existing.rows_null += counters.rows_null;
                existing.rows_malformed += counters.rows_malformed;
                if existing.exclusion_reason.is_none() {
                    existing.exclusion_reason = counters.exclusion_reason.clone();
                }
            }
            None => {
                merged.datasets.insert(key.clone(), counters.clone());
            }
        }
    }
    for (key, counters) in &merged.datasets {
        counters.check_identity(key)?;
    }
    for (stage, usage) in &b.llm_usage {
        merged.llm_usage.entry(stage.clone()).or_default().add(usage);
    }
    merged.duration_ms = a.duration_ms + b.duration_ms;
    merged.warnings.extend(b.warnings.iter().cloned());
    merged.totals.examples_emitted = a.totals.examples_emitted + b.totals.examples_emitted;
    merged.recompute_totals();
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counters(attempted: u64, succeeded: u64, null: u64, malformed: u64) -> DatasetCounters {
        DatasetCounters {
            rows_attempted: attempted,
            rows_succeeded: succeeded,
            rows_null: null,
            rows_malformed: malformed,
            ..Default::default()
        }
    }

    fn report_with(entries: &[(&str, DatasetCounters)]) -> RunReport {
        let mut report = RunReport::default();
        for (key, c) in entries {
            report.datasets.insert(key.to_string(), c.clone());
        }
        report.recompute_totals();
        report
    }

    #[test]
    fn merging_empties_gives_empty() {
        let merged = merge_report(&RunReport::default(), &RunReport::default()).unwrap();
        assert!(merged.datasets.is_empty());
        assert_eq!(merged.totals, RunTotals::default());
    }

    #[test]
    fn disjoint_keys_are_both_present_with_summed_totals() {
        let a = report_with(&[("d1/c", counters(10, 8, 1, 1))]);
        let b = report_with(&[("d2/c", counters(5, 5, 0, 0))]);
        let merged = merge_report(&a, &b).unwrap();
        assert_eq!(merged.datasets.len(), 2);
        assert_eq!(merged.totals.rows_attempted, 15);
        assert_eq!(merged.totals.rows_succeeded, 13);
        assert_eq!(merged.totals.rows_null, 1);
        assert_eq!(merged.totals.rows_malformed, 1);
    }

    #[test]
    fn broken_identity_is_rejected() {
        let bad = report_with(&[("d1/c", counters(3, 1, 1, 0))]);
        let err = merge_report(&bad, &RunReport::default()).unwrap_err();
        assert!(matches!(err, ReportError::CounterIdentity(..)));
    }

    #[test]
    fn identical_keys_sum_counters() {
        let a = report_with(&[("d1/c", counters(4, 3, 1, 0))]);
        let b = report_with(&[("d1/c", counters(6, 4, 0, 2))]);
        let merged = merge_report(&a, &b).unwrap();
        let c = &merged.datasets["d1/c"];
        assert_eq!(c.rows_attempted, 10);
        assert_eq!(c.rows_succeeded, 7);
        assert_eq!(c.rows_null, 1);
        assert_eq!(c.rows_malformed, 2);
    }

    #[test]
    fn conflicting_exclusion_flags_error() {
        let a = report_with(&[(
            "d1/c",
            DatasetCounters { excluded: true, ..counters(2, 2, 0, 0) },
        )]);
        let b = report_with(&[("d1/c", counters(2, 2, 0, 0))]);
        let err = merge_report(&a, &b).unwrap_err();
        assert!(matches!(err, ReportError::ConflictingExclusion(_)));
    }

    #[test]
    fn merge_is_commutative_on_disjoint_keys() {
        let a = report_with(&[("d1/c", counters(10, 8, 1, 1))]);
        let b = report_with(&[("d2/c", counters(5, 5, 0, 0))]);
        let ab = merge_report(&a, &b).unwrap();
        let ba = merge_report(&b, &a).unwrap();
        assert_eq!(ab.datasets, ba.datasets);
        assert_eq!(ab.totals, ba.totals);
    }
}
