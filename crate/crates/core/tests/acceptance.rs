//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Everything runs offline against the bundled toy corpus, fabricated
//! scenario corpora and transcript-driven mock providers.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::*;
use retask_core::llm::{Transcript, TranscriptEntry};
use retask_core::retrieval::{rerank_with_self_consistency, tally_votes, RerankOptions};
use retask_core::transform::{select_schema, ExpandedTask, InContextFixtures, TransformError};
use retask_core::types::{Column, DataRow, DatasetCard, DatasetRef, DatasetSchema, ValueKind};
use retask_core::{
    dedup_filter, default_rouge_threshold, diversity_report, rouge_l, uniqueness_report,
    DiversityReport, Gateway, GatewayOptions, MockProvider, PipelineConfig, PipelineError,
    SelectedDataset, TaskKind, TaskSpec,
};

// ---------------------------------------------------------------------------
// 1. End-to-end determinism on the bundled toy corpus
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_end_to_end_determinism() {
    let started = Instant::now();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let (mut pipeline, _) =
            make_pipeline(toy_task(), toy_config(100), &toy_corpus(), out.path(), toy_mock());
        let (examples, report) = pipeline.run().unwrap();
        assert_eq!(examples.len(), 100);
        let datasets: std::collections::BTreeSet<&str> =
            examples.iter().map(|e| e.provenance.dataset.as_str()).collect();
        assert!(datasets.len() >= 2, "run must draw from >= 2 datasets");
        report.check_identities().unwrap();
        outputs.push(std::fs::read(out.path().join("data.jsonl")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "data.jsonl must be byte-identical across runs");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30, "two runs took {elapsed:?}, budget is 30 s each");
    println!(
        "PASS criterion 1: byte-identical 100-example multi-dataset runs in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 2. Quota and accounting over randomized scenarios
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_quota_and_accounting() {
    let mut rng = StdRng::seed_from_u64(42);
    for case in 0..50 {
        let dataset_count = rng.gen_range(1..=4);
        let names = ["dsa", "dsb", "dsc", "dsd"];
        let datasets: Vec<ScenarioDataset> = (0..dataset_count)
            .map(|d| {
                let size = rng.gen_range(1..=160);
                let fail_rate: f64 = rng.gen_range(0.0..0.9);
                let rows = (0..size)
                    .map(|_| {
                        if rng.gen_bool(fail_rate) {
                            if rng.gen_bool(0.5) {
                                RowKind::Null
                            } else {
                                RowKind::Malformed
                            }
                        } else {
                            RowKind::Ok
                        }
                    })
                    .collect();
                ScenarioDataset::new(names[d], rows)
            })
            .collect();
        let winner = names[rng.gen_range(0..dataset_count)].to_string();
        let scenario = Scenario::build(datasets, &winner);
        let config = PipelineConfig {
            target_example_count: rng.gen_range(1..=300),
            max_datasets: rng.gen_range(1..=4),
            ..Default::default()
        };
        let expected = scenario.expected_emitted(&config);
        let mock =
            Arc::new(MockProvider::new(scenario.transcript(vec![winner.clone(); 5])).unwrap());
        let out = tempfile::tempdir().unwrap();
        let (mut pipeline, _) =
            make_pipeline(scenario.task(), config.clone(), &scenario.corpus(), out.path(), mock);
        match pipeline.run() {
            Ok((examples, report)) => {
                assert_eq!(
                    examples.len() as u64,
                    expected,
                    "case {case}: emitted != min(target, achievable)"
                );
                report.check_identities().unwrap();
                assert_eq!(report.totals.examples_emitted, expected);
                assert_eq!(
                    report.totals.rows_attempted,
                    report.totals.rows_succeeded
                        + report.totals.rows_null
                        + report.totals.rows_malformed
                );
            }
            Err(PipelineError::NoSuitableDataset) => {
                assert_eq!(expected, 0, "case {case}: pipeline gave up but oracle expected output");
            }
            Err(other) => panic!("case {case}: unexpected error {other}"),
        }
    }
    println!("PASS criterion 2: quota arithmetic and counter identity over 50 random scenarios");
}

// ---------------------------------------------------------------------------
// 3. Self-consistency voting semantics
// ---------------------------------------------------------------------------

fn vote_candidate(name: &str, rank: u32) -> SelectedDataset {
    let mut values = BTreeMap::new();
    values.insert("text".to_string(), format!("sample {name}"));
    SelectedDataset {
        card: DatasetCard {
            name: name.to_string(),
            configs: vec!["default".to_string()],
            description: format!("candidate {name}"),
            tags: vec![],
        },
        config: "default".to_string(),
        schema: DatasetSchema {
            columns: vec![Column { name: "text".into(), value_kind: ValueKind::Text }],
        },
        sample_rows: vec![DataRow { values, source_index: 0 }],
        retrieval_rank: rank,
    }
}

fn voting_gateway(votes: Vec<&str>) -> (Gateway, Arc<MockProvider>) {
    let mock = Arc::new(
        MockProvider::new(Transcript {
            entries: vec![TranscriptEntry {
                label: Some("rerank".into()),
                digest: None,
                pattern: None,
                contains: Some("most relevant dataset for this task is:".into()),
                response: None,
                responses: Some(votes.iter().map(|v| v.to_string()).collect()),
                response_template: None,
            }],
        })
        .unwrap(),
    );
    (Gateway::new(mock.clone(), GatewayOptions::default()), mock)
}

#[test]
fn criterion_03_self_consistency() {
    let task = TaskSpec { instruction: "pick".into(), examples: vec![], task_id: "t".into() };
    let candidates = vec![vote_candidate("squad", 1), vote_candidate("gsm8k", 2)];

    // Modal winner, exact call count.
    let (gateway, mock) = voting_gateway(vec!["gsm8k", "squad", "gsm8k"]);
    let options = RerankOptions {
        votes: 3,
        model: "m".into(),
        temperature: 0.7,
        shuffle_candidates: false,
        seed_name: "t".into(),
    };
    let result = rerank_with_self_consistency(&gateway, &task, &candidates, &options).unwrap();
    assert_eq!(result.winner, Some(DatasetRef::new("gsm8k", "default")));
    assert_eq!(result.vote_counts["gsm8k/default"], 2);
    assert_eq!(result.vote_counts["squad/default"], 1);
    assert_eq!(mock.call_count(), 3, "exactly votes_n gateway calls");

    // Count tie resolves toward the better stage-1 rank.
    let (gateway, _) = voting_gateway(vec!["gsm8k", "squad"]);
    let options = RerankOptions { votes: 2, ..options };
    let result = rerank_with_self_consistency(&gateway, &task, &candidates, &options).unwrap();
    assert_eq!(result.winner, Some(DatasetRef::new("squad", "default")));

    // NONE must be strictly modal to win.
    let votes = vec![
        retask_core::RerankVote { chosen: None, raw_response: "no".into(), vote_index: 0 },
        retask_core::RerankVote {
            chosen: Some(DatasetRef::new("squad", "default")),
            raw_response: "squad".into(),
            vote_index: 1,
        },
    ];
    assert_eq!(
        tally_votes(votes, &candidates).winner,
        Some(DatasetRef::new("squad", "default"))
    );

    // NONE-modal with fallbacks disabled fails the run.
    let scenario = Scenario::build(
        vec![ScenarioDataset::new("alpha", vec![RowKind::Ok; 5])],
        "alpha",
    );
    let none_votes = vec!["nothing fits".to_string(); 5];
    let mock = Arc::new(MockProvider::new(scenario.transcript(none_votes)).unwrap());
    let out = tempfile::tempdir().unwrap();
    let config = PipelineConfig {
        target_example_count: 5,
        fallback_on_none: false,
        ..Default::default()
    };
    let (mut pipeline, gateway) =
        make_pipeline(scenario.task(), config, &scenario.corpus(), out.path(), mock);
    assert!(matches!(pipeline.run(), Err(PipelineError::NoSuitableDataset)));
    assert_eq!(gateway.usage_snapshot()["rerank"].calls, 5);

    println!("PASS criterion 3: modal winner, rank tie-break, strict NONE, exact call counts");
}

// ---------------------------------------------------------------------------
// 4. Plan generated once per dataset over a 500-row run
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_plan_once() {
    let scenario = Scenario::build(
        vec![ScenarioDataset::new("bulk", vec![RowKind::Ok; 500])],
        "bulk",
    );
    let mock = Arc::new(MockProvider::new(scenario.transcript(vec!["bulk".into(); 5])).unwrap());
    let out = tempfile::tempdir().unwrap();
    let config = PipelineConfig { target_example_count: 500, ..Default::default() };
    let (mut pipeline, gateway) =
        make_pipeline(scenario.task(), config, &scenario.corpus(), out.path(), mock);
    let (examples, _) = pipeline.run().unwrap();
    assert_eq!(examples.len(), 500);
    let usage = gateway.usage_snapshot();
    assert_eq!(usage["plan"].calls, 1, "plan template must be called once");
    assert_eq!(usage["execute"].calls, 500, "execute template once per row");
    println!("PASS criterion 4: 1 plan call and 500 execute calls over a 500-row dataset");
}

// ---------------------------------------------------------------------------
// 5. Fuzzed schema-selection responses never breach invariants
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_schema_invariants_fuzzed() {
    let mut rng = StdRng::seed_from_u64(7);
    let dataset = vote_candidate("fuzzed", 1);
    let dataset = SelectedDataset {
        schema: DatasetSchema {
            columns: ["alpha", "beta", "gamma", "delta"]
                .iter()
                .map(|n| Column { name: n.to_string(), value_kind: ValueKind::Text })
                .collect(),
        },
        ..dataset
    };
    let expanded = ExpandedTask {
        original: TaskSpec { instruction: "fuzz".into(), examples: vec![], task_id: "f".into() },
        expanded_text: "fuzzed task".into(),
    };
    let known = ["alpha", "beta", "gamma", "delta"];
    let unknown = ["omega", "sigma"];
    let mut ok_count = 0usize;
    let mut err_count = 0usize;

    for case in 0..1000 {
        let response = if rng.gen_bool(0.1) {
            // Not JSON at all.
            "no object here".to_string()
        } else {
            let mut object = serde_json::Map::new();
            for key in ["input", "output", "irrelevant", "ambiguous"] {
                if rng.gen_bool(0.9) {
                    let len = rng.gen_range(0..4);
                    let columns: Vec<serde_json::Value> = (0..len)
                        .map(|_| {
                            let pool = if rng.gen_bool(0.8) { &known[..] } else { &unknown[..] };
                            serde_json::Value::String(
                                pool[rng.gen_range(0..pool.len())].to_string(),
                            )
                        })
                        .collect();
                    object.insert(key.to_string(), serde_json::Value::Array(columns));
                }
            }
            serde_json::Value::Object(object).to_string()
        };

        let mock = Arc::new(
            MockProvider::new(Transcript {
                entries: vec![TranscriptEntry {
                    label: None,
                    digest: None,
                    pattern: None,
                    contains: Some("Required Columns".into()),
                    response: Some(response),
                    responses: None,
                    response_template: None,
                }],
            })
            .unwrap(),
        );
        let gateway = Gateway::new(mock, GatewayOptions::default());
        match select_schema(
            &gateway,
            &PipelineConfig::default(),
            &InContextFixtures::default(),
            &expanded,
            &dataset,
        ) {
            Ok(selection) => {
                ok_count += 1;
                let mut all = selection.input_cols.clone();
                all.extend(selection.output_col.clone());
                all.extend(selection.irrelevant.clone());
                all.extend(selection.ambiguous.clone());
                for column in &all {
                    assert!(
                        known.contains(&column.as_str()),
                        "case {case}: unknown column {column} leaked through"
                    );
                }
                let unique: std::collections::BTreeSet<&String> = all.iter().collect();
                assert_eq!(unique.len(), all.len(), "case {case}: groups overlap");
            }
            Err(
                TransformError::SchemaViolation(_)
                | TransformError::UnusableDataset
                | TransformError::Gateway(_),
            ) => err_count += 1,
            Err(other) => panic!("case {case}: untyped failure {other}"),
        }
    }
    assert!(ok_count > 0 && err_count > 0, "fuzz should exercise both paths");
    println!(
        "PASS criterion 5: 1000 fuzzed selections, {ok_count} valid / {err_count} typed errors, zero invariant breaches"
    );
}

// ---------------------------------------------------------------------------
// 6. ROUGE-L exactness against an independent oracle
// ---------------------------------------------------------------------------

/// Naive reference ROUGE-L, written independently of the library path:
/// string tokens, full DP table, no interning, no pruning.
fn naive_rouge(a: &str, b: &str) -> f64 {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let mut table = vec![vec![0u32; tb.len() + 1]; ta.len() + 1];
    for i in 1..=ta.len() {
        for j in 1..=tb.len() {
            table[i][j] = if ta[i - 1] == tb[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    2.0 * table[ta.len()][tb.len()] as f64 / (ta.len() + tb.len()) as f64
}

fn random_token_string(rng: &mut StdRng, max_len: usize) -> String {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| format!("tok{}", rng.gen_range(0..30)))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn criterion_06_rouge_exactness() {
    let fixture = rouge_l("the cat sat", "the cat ran");
    assert!((fixture - 2.0 / 3.0).abs() < 1e-12);

    let mut rng = StdRng::seed_from_u64(1234);
    let examples: Vec<String> = (0..200).map(|_| random_token_string(&mut rng, 25)).collect();
    let report = uniqueness_report(&examples, 0.7);
    for (i, entry) in report.per_example.iter().enumerate() {
        let oracle_max = examples
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, other)| naive_rouge(&examples[i], other))
            .fold(0.0f64, f64::max);
        assert_eq!(
            entry.max_similarity, oracle_max,
            "example {i}: optimized path diverged from brute force"
        );
        assert_eq!(entry.is_unique, oracle_max < 0.7);
    }
    let oracle_unique = report.per_example.iter().filter(|e| e.is_unique).count();
    assert_eq!(report.unique_count, oracle_unique);

    for case in 0..10_000 {
        let a = random_token_string(&mut rng, 12);
        let b = random_token_string(&mut rng, 12);
        let ab = rouge_l(&a, &b);
        let ba = rouge_l(&b, &a);
        assert_eq!(ab, ba, "case {case}: symmetry violated");
        assert!((0.0..=1.0).contains(&ab), "case {case}: out of bounds");
        if !a.trim().is_empty() {
            assert_eq!(rouge_l(&a, &a), 1.0, "case {case}: self-similarity");
        }
    }
    println!("PASS criterion 6: oracle equality on 200 strings, 10k symmetry/self-sim cases");
}

// ---------------------------------------------------------------------------
// 7. Duplicate detection and threshold lookup
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_duplicate_detection() {
    let copies: Vec<String> = vec!["def add(a, b): return a + b".to_string(); 12];
    for threshold in [0.3, 0.7, 1.0] {
        let report = uniqueness_report(&copies, threshold);
        assert_eq!(report.unique_fraction, 0.0, "threshold {threshold}");
        assert_eq!(report.unique_count, 0);
    }

    let examples: Vec<retask_core::TransformedExample> = copies
        .iter()
        .enumerate()
        .map(|(i, text)| retask_core::TransformedExample {
            input: text.clone(),
            output: "adds".into(),
            provenance: retask_core::Provenance {
                dataset: "d".into(),
                config: "c".into(),
                source_index: i as u64,
            },
        })
        .collect();
    let deduped = dedup_filter(&examples, 0.7);
    assert_eq!(deduped.len(), 1);
    let inputs: Vec<String> = deduped.iter().map(|e| e.input.clone()).collect();
    let after = uniqueness_report(&inputs, 0.7);
    assert_eq!(after.unique_fraction, 1.0);

    assert_eq!(default_rouge_threshold(TaskKind::Code), 0.8);
    assert_eq!(default_rouge_threshold(TaskKind::LongText), 0.9);
    assert_eq!(default_rouge_threshold(TaskKind::General), 0.7);
    println!("PASS criterion 7: k-copy fraction 0, post-dedup fraction 1, threshold lookup 0.8/0.9/0.7");
}

// ---------------------------------------------------------------------------
// 8. Diversity metrics against hand-computed means
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_diversity_hand_fixture() {
    // Tokens:  4 + 4 + 2 + 1 + 5 + 4 + 3 + 1 + 5 + 5 = 34
    // Bigrams: 3 + 1 + 1 + 0 + 4 + 2 + 2 + 0 + 2 + 3 = 18
    let fixture = [
        "a b c d",
        "a a a a",
        "x y",
        "hello",
        "p q r s t",
        "m n m n",
        "one two three",
        "z",
        "k l k l k",
        "u v w u v",
    ];
    let examples: Vec<String> = fixture.iter().map(|s| s.to_string()).collect();
    let report = diversity_report(&examples);
    assert_eq!(
        report,
        DiversityReport {
            unique_bigrams_per_example: 18.0 / 10.0,
            tokens_per_example: 34.0 / 10.0,
        }
    );
    println!("PASS criterion 8: hand-computed bigram mean 1.8 and token mean 3.4 match exactly");
}

// ---------------------------------------------------------------------------
// 9. Probe exclusion at the failure-rate boundary
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_probe_exclusion() {
    for (fails_in_probe, should_exclude) in [(0u32, false), (49, false), (51, true), (100, true)] {
        let mut rows = Vec::new();
        for i in 0..150u32 {
            if i < 100 && i < fails_in_probe {
                rows.push(RowKind::Null);
            } else {
                rows.push(RowKind::Ok);
            }
        }
        let scenario = Scenario::build(
            vec![
                ScenarioDataset::new("aprobe", rows),
                ScenarioDataset::new("zfiller", vec![RowKind::Ok; 200]),
            ],
            "aprobe",
        );
        let mock =
            Arc::new(MockProvider::new(scenario.transcript(vec!["aprobe".into(); 5])).unwrap());
        let out = tempfile::tempdir().unwrap();
        let config = PipelineConfig {
            target_example_count: 120,
            probe_batch_size: 100,
            failure_rate_threshold: 0.5,
            ..Default::default()
        };
        let (mut pipeline, _) =
            make_pipeline(scenario.task(), config, &scenario.corpus(), out.path(), mock);
        let (examples, report) = pipeline.run().unwrap();
        assert_eq!(examples.len(), 120);

        let rate = fails_in_probe as f64 / 100.0;
        let counters = &report.datasets["aprobe/default"];
        assert_eq!(
            counters.excluded, should_exclude,
            "rate {rate} exclusion flag wrong"
        );
        let from_probe_dataset =
            examples.iter().filter(|e| e.provenance.dataset == "aprobe").count() as u64;
        if should_exclude {
            // Probe successes are retained even when the dataset is dropped.
            assert_eq!(from_probe_dataset, 100 - fails_in_probe as u64);
        } else {
            assert!(from_probe_dataset > 0, "passing dataset's probe output must be kept");
            assert_eq!(from_probe_dataset, (150 - fails_in_probe as u64).min(120));
        }
        report.check_identities().unwrap();
    }
    println!("PASS criterion 9: rates 0.0/0.49 kept, 0.51/1.0 excluded at threshold 0.5");
}

// ---------------------------------------------------------------------------
// 10. Resume from checkpoint is byte-identical
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_resume_byte_identical() {
    let uninterrupted = tempfile::tempdir().unwrap();
    let (mut full_run, _) = make_pipeline(
        toy_task(),
        toy_config(100),
        &toy_corpus(),
        uninterrupted.path(),
        toy_mock(),
    );
    full_run.run().unwrap();
    let expected = std::fs::read(uninterrupted.path().join("data.jsonl")).unwrap();

    let interrupted = tempfile::tempdir().unwrap();
    {
        let (mut first_phase, _) = make_pipeline(
            toy_task(),
            toy_config(100),
            &toy_corpus(),
            interrupted.path(),
            toy_mock(),
        );
        // Simulate a kill after the first dataset attempt.
        first_phase.run_steps(1).unwrap();
    }
    let partial = std::fs::read(interrupted.path().join("data.jsonl")).unwrap();
    assert!(partial.len() < expected.len(), "first phase must stop early");

    let (mut resumed, _) = make_pipeline(
        toy_task(),
        toy_config(100),
        &toy_corpus(),
        interrupted.path(),
        toy_mock(),
    );
    let (examples, report) = resumed.run().unwrap();
    assert_eq!(examples.len(), 100);
    report.check_identities().unwrap();
    let resumed_bytes = std::fs::read(interrupted.path().join("data.jsonl")).unwrap();
    assert_eq!(resumed_bytes, expected, "resumed output must equal uninterrupted output");
    println!("PASS criterion 10: checkpoint resume reproduces the uninterrupted run byte-for-byte");
}

// ---------------------------------------------------------------------------
// 11. Pairwise uniqueness performance at target scale
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_pairwise_performance() {
    let mut rng = StdRng::seed_from_u64(99);
    let examples: Vec<String> = (0..3000)
        .map(|_| {
            (0..40)
                .map(|_| format!("w{}", rng.gen_range(0..500)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let started = Instant::now();
    let report = uniqueness_report(&examples, 0.7);
    let elapsed = started.elapsed();
    assert_eq!(report.total, 3000);
    assert!(report.per_example.iter().all(|e| e.max_similarity > 0.0));
    assert!(
        elapsed.as_secs() < 60,
        "3000x40-token uniqueness took {elapsed:?}, budget 60 s"
    );
    println!("PASS criterion 11: 3000-example pairwise uniqueness in {elapsed:?}");
}
