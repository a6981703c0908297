//! LLM reranking of retrieved candidates with self-consistency voting.
//!
//! Each vote renders the rerank prompt over the candidate set, asks the
//! gateway, and canonicalizes the free-text answer back to a candidate.
//! The winner is the modal choice across votes; ties go to the candidate
//! with the better stage-1 rank, and "no dataset" wins only when strictly
//! modal.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::template::{bindings, PromptTemplate, TemplateName};
use crate::llm::{Gateway, GatewayError, LlmRequest};
use crate::types::{format_demo_examples, DatasetRef, SelectedDataset, TaskSpec};

/// One reranker vote. `chosen` is `None` when the model declined to pick
/// a dataset or its answer could not be canonicalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankVote {
    pub chosen: Option<DatasetRef>,
    pub raw_response: String,
    pub vote_index: u32,
}

/// Aggregated outcome of a self-consistency round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankResult {
    pub winner: Option<DatasetRef>,
    /// Votes per candidate (plus a "NONE" entry); sums to `votes.len()`.
    pub vote_counts: BTreeMap<String, usize>,
    pub votes: Vec<RerankVote>,
}

/// Tuning for one self-consistency round.
#[derive(Debug, Clone)]
pub struct RerankOptions {
    pub votes: u32,
    pub model: String,
    pub temperature: f64,
    /// Shuffle candidate presentation order per vote instead of always
    /// showing stage-1 rank order.
    pub shuffle_candidates: bool,
    /// Seed namespace for the per-vote shuffles (the task id).
    pub seed_name: String,
}

fn candidate_block(counter: usize, dataset: &SelectedDataset) -> String {
    let sample = dataset
        .sample_rows
        .first()
        .map(|row| row.render_full())
        .unwrap_or_default();
    format!(
        "{counter}. {}:Description-{}.\nThis dataset has the following tags:\n{}\nSchema columns: {}\nSample row: {sample}",
        dataset.card.name,
        dataset.card.description,
        dataset.card.tags.join(", "),
        dataset.schema.column_names().join(", "),
    )
}

/// Render the full rerank prompt over candidates in the given order.
pub fn render_rerank_prompt(
    task: &TaskSpec,
    candidates: &[&SelectedDataset],
) -> Result<String, GatewayError> {
    let blocks: Vec<String> = candidates
        .iter()
        .enumerate()
        .map(|(i, d)| candidate_block(i + 1, d))
        .collect();
    let template = PromptTemplate::builtin(TemplateName::Rerank);
    let prompt = template.render(&bindings(&[
        ("instruction", &task.instruction),
        ("examples", &format_demo_examples(&task.examples, 2)),
        ("num", &candidates.len().to_string()),
        ("datasets", &blocks.join("\n")),
    ]))?;
    Ok(prompt)
}

/// True when `needle` occurs in `haystack` delimited by non-alphanumeric
/// characters (or the string edges), case-insensitively.
fn contains_word(haystack: &str, needle: &str) -> bool {
    let haystack = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = start == 0
            || !haystack[..start]
                .chars()
                .next_back()
                .map(|c| c.is_alphanumeric())
                .unwrap_or(false);
        let right_ok = end == haystack.len()
            || !haystack[end..]
                .chars()
                .next()
                .map(|c| c.is_alphanumeric())
                .unwrap_or(false);
        if left_ok && right_ok {
            return true;
        }
        from = end;
    }
    false
}

/// Map a reranker answer back to a candidate: exact name match first, then
/// case-insensitive, then unique delimited-substring match. Anything
/// ambiguous or out-of-list becomes `None`.
pub fn canonicalize_answer<'a>(
    response: &str,
    candidates: &'a [SelectedDataset],
) -> Option<&'a SelectedDataset> {
    let trimmed = response.trim().trim_matches(|c: char| "`'\".".contains(c));
    for candidate in candidates {
        if trimmed == candidate.card.name
            || trimmed == candidate.dataset_ref().to_string()
        {
            return Some(candidate);
        }
    }
    for candidate in candidates {
        if trimmed.eq_ignore_ascii_case(&candidate.card.name) {
            return Some(candidate);
        }
    }
    let mut matches: Vec<&SelectedDataset> = candidates
        .iter()
        .filter(|c| contains_word(response, &c.card.name))
        .collect();
    // Prefer maximal names: "squad_v2" beats its substring "squad".
    matches = matches
        .iter()
        .filter(|c| {
            !matches.iter().any(|other| {
                other.card.name.len() > c.card.name.len()
                    && other
                        .card
                        .name
                        .to_lowercase()
                        .contains(&c.card.name.to_lowercase())
            })
        })
        .copied()
        .collect();
    match matches.len() {
        1 => Some(matches[0]),
        _ => None,
    }
}

/// One reranker call over candidates in the given presentation order.
pub fn rerank_once(
    gateway: &Gateway,
    task: &TaskSpec,
    ordered: &[&SelectedDataset],
    model: &str,
    temperature: f64,
    vote_index: u32,
) -> Result<RerankVote, GatewayError> {
    let prompt = render_rerank_prompt(task, ordered)?;
    let request = LlmRequest::new(model, prompt, temperature);
    let response = gateway.complete("rerank", &request)?;
    let owned: Vec<SelectedDataset> = ordered.iter().map(|d| (*d).clone()).collect();
    let chosen = canonicalize_answer(&response.text, &owned).map(|d| d.dataset_ref());
    if chosen.is_none() {
        tracing::debug!(vote = vote_index, response = %response.text, "vote resolved to NONE");
    }
    Ok(RerankVote { chosen, raw_response: response.text, vote_index })
}

/// Pure vote aggregation. The modal candidate wins; count ties resolve
/// toward the better (lower) stage-1 retrieval rank; `None` beats named
/// candidates only when strictly modal.
pub fn tally_votes(votes: Vec<RerankVote>, candidates: &[SelectedDataset]) -> RerankResult {
    let mut vote_counts: BTreeMap<String, usize> = BTreeMap::new();
    for vote in &votes {
        let key = vote
            .chosen
            .as_ref()
            .map(|d| d.to_string())
            .unwrap_or_else(|| "NONE".to_string());
        *vote_counts.entry(key).or_insert(0) += 1;
    }
    let none_count = vote_counts.get("NONE").copied().unwrap_or(0);
    let rank_of = |dataset: &DatasetRef| -> u32 {
        candidates
            .iter()
            .find(|c| c.dataset_ref() == *dataset)
            .map(|c| c.retrieval_rank)
            .unwrap_or(u32::MAX)
    };
    let mut best: Option<(DatasetRef, usize)> = None;
    for vote in &votes {
        let Some(dataset) = &vote.chosen else { continue };
        let count = vote_counts[&dataset.to_string()];
        best = match best {
            None => Some((dataset.clone(), count)),
            Some((current, current_count)) => {
                if count > current_count
                    || (count == current_count && rank_of(dataset) < rank_of(&current))
                {
                    Some((dataset.clone(), count))
                } else {
                    Some((current, current_count))
                }
            }
        };
    }
    let winner = match best {
        Some((dataset, count)) if none_count <= count => Some(dataset),
        _ => None,
    };
    RerankResult { winner, vote_counts, votes }
}

/// Run `options.votes` independent reranker calls and aggregate. Votes run
/// sequentially so transcript-driven runs are reproducible. Transport
/// failures count as `None` votes unless every vote fails.
pub fn rerank_with_self_consistency(
    gateway: &Gateway,
    task: &TaskSpec,
    candidates: &[SelectedDataset],
    options: &RerankOptions,
) -> Result<RerankResult, GatewayError> {
    assert!(options.votes >= 1, "self-consistency needs at least one vote");
    let mut votes = Vec::with_capacity(options.votes as usize);
    let mut last_error = None;
    for vote_index in 0..options.votes {
        let mut order: Vec<&SelectedDataset> = candidates.iter().collect();
        if options.shuffle_candidates {
            let mut hasher = Sha256::new();
            hasher.update(options.seed_name.as_bytes());
            hasher.update(vote_index.to_le_bytes());
            let seed: [u8; 32] = hasher.finalize().into();
            order.shuffle(&mut ChaCha8Rng::from_seed(seed));
        }
        match rerank_once(gateway, task, &order, &options.model, options.temperature, vote_index) {
            Ok(vote) => votes.push(vote),
            Err(err) => {
                tracing::warn!(vote = vote_index, error = %err, "vote failed; counting as NONE");
                last_error = Some(err);
                votes.push(RerankVote {
                    chosen: None,
                    raw_response: String::new(),
                    vote_index,
                });
            }
        }
    }
    if votes.iter().all(|v| v.raw_response.is_empty() && v.chosen.is_none()) {
        if let Some(err) = last_error {
            return Err(err);
        }
    }
    Ok(tally_votes(votes, candidates))
}
