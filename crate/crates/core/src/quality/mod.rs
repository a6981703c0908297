//! Dataset quality analysis: ROUGE-L uniqueness, lexical diversity,
//! LLM-judged difficulty, and a greedy near-duplicate filter.
//!
//! ROUGE-L here is the token-level F-measure over the longest common
//! subsequence: with `L = LCS(a, b)`, recall `L/|a|`, precision `L/|b|`,
//! the F-measure reduces to `2L / (|a| + |b|)`. Tokens are
//! unicode-whitespace splits with no lowercasing or stemming, so
//! case-sensitive material like code compares faithfully. Similarity is
//! measured over the `input` field of examples.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::llm::template::{bindings, PromptTemplate};
use crate::llm::{Gateway, GatewayError, LlmRequest};
use crate::types::TransformedExample;

/// Coarse task flavor used to look up the default uniqueness threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Examples are code snippets.
    Code,
    /// Examples are long prose passages.
    LongText,
    General,
}

/// Default near-duplicate thresholds per task flavor: 0.8 for code, 0.9
/// for long text, 0.7 otherwise.
pub fn default_rouge_threshold(kind: TaskKind) -> f64 {
    match kind {
        TaskKind::Code => 0.8,
        TaskKind::LongText => 0.9,
        TaskKind::General => 0.7,
    }
}

fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn lcs_len(a: &[u32], b: &[u32], row: &mut Vec<u32>) -> u64 {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    row.clear();
    row.resize(b.len() + 1, 0);
    for &x in a {
        let mut prev = 0u32;
        for (j, &y) in b.iter().enumerate() {
            let cur = row[j + 1];
            row[j + 1] = if x == y { prev + 1 } else { cur.max(row[j]) };
            prev = cur;
        }
    }
    row[b.len()] as u64
}

fn f_measure(lcs: u64, len_a: usize, len_b: usize) -> f64 {
    if len_a == 0 || len_b == 0 {
        return 0.0;
    }
    2.0 * lcs as f64 / (len_a + len_b) as f64
}

/// ROUGE-L similarity of two texts in [0, 1]. Symmetric; 0 when either
/// text has no tokens.
pub fn rouge_l(a: &str, b: &str) -> f64 {
    let tokens_a = tokenize(a);
    let tokens_b = tokenize(b);
    let mut interner: HashMap<&str, u32> = HashMap::new();
    let mut ids_a = Vec::with_capacity(tokens_a.len());
    for token in &tokens_a {
        let next = interner.len() as u32;
        ids_a.push(*interner.entry(token).or_insert(next));
    }
    let mut ids_b = Vec::with_capacity(tokens_b.len());
    for token in &tokens_b {
        let next = interner.len() as u32;
        ids_b.push(*interner.entry(token).or_insert(next));
    }
    let mut row = Vec::new();
    f_measure(lcs_len(&ids_a, &ids_b, &mut row), ids_a.len(), ids_b.len())
}

/// Per-example uniqueness against the rest of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleUniqueness {
    pub index: usize,
    pub max_similarity: f64,
    pub is_unique: bool,
}

/// Uniqueness analysis of a dataset at a threshold: an example is unique
/// iff its maximum similarity to every other example is strictly below
/// the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub threshold: f64,
    pub total: usize,
    pub unique_count: usize,
    pub unique_fraction: f64,
    pub per_example: Vec<ExampleUniqueness>,
}

struct InternedCorpus {
    ids: Vec<Vec<u32>>,
    hashes: Vec<u64>,
}

fn intern_corpus(examples: &[String]) -> InternedCorpus {
    let mut interner: HashMap<&str, u32> = HashMap::new();
    let mut ids = Vec::with_capacity(examples.len());
    for text in examples {
        let tokens: Vec<u32> = text
            .split_whitespace()
            .map(|t| {
                let next = interner.len() as u32;
                *interner.entry(t).or_insert(next)
            })
            .collect();
        ids.push(tokens);
    }
    let hashes = ids
        .iter()
        .map(|tokens| {
            use std::hash::{Hash, Hasher};
            let mut hasher = std::collections::hash_map::DefaultHasher::new();
            tokens.hash(&mut hasher);
            hasher.finish()
        })
        .collect();
    InternedCorpus { ids, hashes }
}

/// Exact pairwise similarity of one pair, sharing the interned corpus.
/// Identical token sequences short-circuit to 1.0, which equals what the
/// DP would compute.
fn pair_similarity(corpus: &InternedCorpus, i: usize, j: usize, row: &mut Vec<u32>) -> f64 {
    let a = &corpus.ids[i];
    let b = &corpus.ids[j];
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    if corpus.hashes[i] == corpus.hashes[j] && a == b {
        return 1.0;
    }
    f_measure(lcs_len(a, b, row), a.len(), b.len())
}

/// Upper bound on the similarity of two examples from their token lengths
/// alone: `F <= 2*min / (min + max)`.
fn length_bound(len_a: usize, len_b: usize) -> f64 {
    if len_a == 0 || len_b == 0 {
        return 0.0;
    }
    2.0 * len_a.min(len_b) as f64 / (len_a + len_b) as f64
}

/// Exact maximum pairwise similarity for every example.
///
/// The pair loop walks candidates in descending order of the length bound
/// (a two-pointer sweep over a length-sorted permutation) and stops as
/// soon as the bound cannot exceed the running maximum. Skips can never
/// change the result, so this equals the brute-force double loop exactly
/// while avoiding most LCS work on length-skewed or duplicate-heavy data.
fn max_similarities(corpus: &InternedCorpus) -> Vec<f64> {
    let n = corpus.ids.len();
    let lengths: Vec<usize> = corpus.ids.iter().map(Vec::len).collect();
    let mut by_length: Vec<usize> = (0..n).collect();
    by_length.sort_by_key(|&i| (lengths[i], i));
    let mut position = vec![0usize; n];
    for (pos, &i) in by_length.iter().enumerate() {
        position[i] = pos;
    }

    (0..n)
        .into_par_iter()
        .map_init(Vec::new, |row, i| {
            let len_i = lengths[i];
            let mut max_sim = 0.0f64;
            let mut left = position[i].wrapping_sub(1);
            let mut right = position[i] + 1;
            loop {
                let left_bound = if left != usize::MAX {
                    length_bound(len_i, lengths[by_length[left]])
                } else {
                    -1.0
                };
                let right_bound = if right < n {
                    length_bound(len_i, lengths[by_length[right]])
                } else {
                    -1.0
                };
                let (bound, j) = if left_bound >= right_bound {
                    (left_bound, left)
                } else {
                    (right_bound, right)
                };
                if bound <= max_sim || bound < 0.0 {
                    break;
                }
                let other = by_length[j];
                let sim = pair_similarity(corpus, i, other, row);
                if sim > max_sim {
                    max_sim = sim;
                }
                if j == left {
                    left = left.wrapping_sub(1);
                } else {
                    right += 1;
                }
            }
            max_sim
        })
        .collect()
}

/// Analyze uniqueness of `examples` at `threshold`. A single example is
/// unique by convention (its max over an empty set is 0).
pub fn uniqueness_report(examples: &[String], threshold: f64) -> UniquenessReport {
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold must be in (0, 1]");
    let corpus = intern_corpus(examples);
    let maxes = max_similarities(&corpus);
    let per_example: Vec<ExampleUniqueness> = maxes
        .iter()
        .enumerate()
        .map(|(index, &max_similarity)| ExampleUniqueness {
            index,
            max_similarity,
            is_unique: max_similarity < threshold,
        })
        .collect();
    let unique_count = per_example.iter().filter(|e| e.is_unique).count();
    let total = examples.len();
    UniquenessReport {
        threshold,
        total,
        unique_count,
        unique_fraction: if total == 0 { 1.0 } else { unique_count as f64 / total as f64 },
        per_example,
    }
}

/// Lexical diversity: mean distinct-bigram count per example and mean
/// token count per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub unique_bigrams_per_example: f64,
    pub tokens_per_example: f64,
}

pub fn diversity_report(examples: &[String]) -> DiversityReport {
    if examples.is_empty() {
        return DiversityReport { unique_bigrams_per_example: 0.0, tokens_per_example: 0.0 };
    }
    let mut bigram_total = 0u64;
    let mut token_total = 0u64;
    for text in examples {
        let tokens = tokenize(text);
        token_total += tokens.len() as u64;
        let distinct: std::collections::HashSet<(&str, &str)> =
            tokens.windows(2).map(|w| (w[0], w[1])).collect();
        bigram_total += distinct.len() as u64;
    }
    let n = examples.len() as f64;
    DiversityReport {
        unique_bigrams_per_example: bigram_total as f64 / n,
        tokens_per_example: token_total as f64 / n,
    }
}

/// Histogram of 1-5 difficulty scores plus the count of unparseable
/// judgments. `histogram total + unparsed = examples judged`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyReport {
    pub scores: std::collections::BTreeMap<u8, u64>,
    pub unparsed: u64,
    pub mean: f64,
}

/// First integer token of the response, accepted when it lands in 1..=5.
pub fn parse_difficulty_score(text: &str) -> Option<u8> {
    for token in text.split_whitespace() {
        let stripped = token.trim_matches(|c: char| !c.is_ascii_digit());
        if stripped.is_empty() || stripped.len() > 3 {
            continue;
        }
        if let Ok(value) = stripped.parse::<u16>() {
            return (1..=5).contains(&value).then_some(value as u8);
        }
    }
    None
}

/// Judge each example with one gateway call and collect the score
/// distribution. Transport failures count as unparsed.
pub fn estimate_difficulty(
    gateway: &Gateway,
    examples: &[String],
    judge_prompt: &PromptTemplate,
    in_context: &str,
    model: &str,
) -> Result<DifficultyReport, GatewayError> {
    let mut scores = std::collections::BTreeMap::new();
    let mut unparsed = 0u64;
    let mut sum = 0u64;
    let mut parsed = 0u64;
    for example in examples {
        let prompt = judge_prompt.render(&bindings(&[
            ("incontext_examples", in_context),
            ("example", example),
        ]))?;
        let request = LlmRequest::new(model, prompt, 0.0).with_max_tokens(16);
        match gateway.complete("difficulty", &request) {
            Ok(response) => match parse_difficulty_score(&response.text) {
                Some(score) => {
                    *scores.entry(score).or_insert(0) += 1;
                    sum += score as u64;
                    parsed += 1;
                }
                None => {
                    tracing::warn!(response = %response.text, "unparseable difficulty judgment");
                    unparsed += 1;
                }
            },
            Err(GatewayError::Exhausted { attempts, last }) => {
                tracing::warn!(attempts, error = %last, "difficulty call failed; counting unparsed");
                unparsed += 1;
            }
            Err(other) => return Err(other),
        }
    }
    Ok(DifficultyReport {
        scores,
        unparsed,
        mean: if parsed == 0 { 0.0 } else { sum as f64 / parsed as f64 },
    })
}

/// Greedy order-preserving near-duplicate filter over example inputs:
/// keep an example iff its max similarity to already-kept inputs is
/// strictly below the threshold.
pub fn dedup_filter(
    examples: &[TransformedExample],
    threshold: f64,
) -> Vec<TransformedExample> {
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold must be in (0, 1]");
    let inputs: Vec<String> = examples.iter().map(|e| e.input.clone()).collect();
    let corpus = intern_corpus(&inputs);
    let mut kept_indices: Vec<usize> = Vec::new();
    let mut row = Vec::new();
    for i in 0..examples.len() {
        let len_i = corpus.ids[i].len();
        let duplicate = kept_indices.iter().any(|&k| {
            // Pairs whose length bound is already below threshold cannot
            // be duplicates; skipping them never changes the decision.
            length_bound(len_i, corpus.ids[k].len()) >= threshold
                && pair_similarity(&corpus, i, k, &mut row) >= threshold
        });
        if !duplicate {
            kept_indices.push(i);
        }
    }
    kept_indices.into_iter().map(|i| examples[i].clone()).collect()
}
