//! Shared generators for the benchmark suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic corpus of `n` examples, each `tokens` words drawn from a
/// `vocab`-sized vocabulary.
pub fn synthetic_examples(n: usize, tokens: usize, vocab: u32, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..tokens)
                .map(|_| format!("w{}", rng.gen_range(0..vocab)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Same corpus with a fraction of exact duplicates mixed in.
pub fn with_duplicates(mut examples: Vec<String>, every: usize) -> Vec<String> {
    for i in (every..examples.len()).step_by(every) {
        examples[i] = examples[i - every].clone();
    }
    examples
}
