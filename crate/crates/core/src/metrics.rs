//! ROUGE-1 recall and BLEU with brevity penalty.
//!
//! Both scores work over any token type, so the same code scores toy-model
//! token ids and whitespace-split text.

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
}

/// Lowercase, then split on whitespace. Punctuation stays attached to its word.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// A scored generated/reference pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair<T> {
    pub generated: Vec<T>,
    pub reference: Vec<T>,
    pub score: f64,
}

fn counts<T: Eq + Hash>(tokens: &[T]) -> HashMap<&T, usize> {
    let mut map = HashMap::new();
    for t in tokens {
        *map.entry(t).or_insert(0) += 1;
    }
    map
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut map = HashMap::new();
    if n == 0 || tokens.len() < n {
        return map;
    }
    for w in tokens.windows(n) {
        *map.entry(w).or_insert(0) += 1;
    }
    map
}

/// Unigram matches clipped at the reference counts.
pub fn clipped_unigram_matches<T: Eq + Hash>(generated: &[T], reference: &[T]) -> usize {
    let gen = counts(generated);
    counts(reference)
        .iter()
        .map(|(tok, &r)| r.min(gen.get(tok).copied().unwrap_or(0)))
        .sum()
}

/// Clipped unigram matches over the reference length.
pub fn rouge1<T: Eq + Hash>(generated: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(clipped_unigram_matches(generated, reference) as f64 / reference.len() as f64)
}

/// ROUGE-1 pooled over a collection of pairs: total clipped matches over total
/// reference unigrams. Pairs with empty references contribute nothing; the
/// pool as a whole must contain at least one reference token.
pub fn rouge1_corpus<'a, T, I>(pairs: I) -> Result<f64, MetricError>
where
    T: Eq + Hash + 'a,
    I: IntoIterator<Item = (&'a [T], &'a [T])>,
{
    let (mut matched, mut total) = (0usize, 0usize);
    for (gen, reference) in pairs {
        matched += clipped_unigram_matches(gen, reference);
        total += reference.len();
    }
    if total == 0 {
        return Err(MetricError::EmptyReference);
    }
    Ok(matched as f64 / total as f64)
}

/// Sentence BLEU with uniform weights over n = 1..=min(max_n, |generated|).
///
/// No smoothing: a zero precision at any used order gives 0, as does an empty
/// candidate. Brevity penalty is 1 when the candidate is strictly longer than
/// the reference and `exp(1 - r/c)` otherwise.
pub fn bleu<T: Eq + Hash>(
    generated: &[T],
    reference: &[T],
    max_n: usize,
) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let c = generated.len();
    let r = reference.len();
    let orders = max_n.min(c);
    if orders == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let gen = ngram_counts(generated, n);
        let refc = ngram_counts(reference, n);
        let matched: usize = gen
            .iter()
            .map(|(g, &cnt)| cnt.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return Ok(0.0);
        }
        let total = c - n + 1;
        log_sum += (matched as f64 / total as f64).ln();
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / orders as f64).exp())
}

/// BLEU with the conventional maximum order of 4.
pub fn bleu4<T: Eq + Hash>(generated: &[T], reference: &[T]) -> Result<f64, MetricError> {
    bleu(generated, reference, 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    /// Multiset intersection by repeated removal.
    fn brute_rouge1(gen: &[u8], reference: &[u8]) -> f64 {
        let mut pool = gen.to_vec();
        let mut hits = 0;
        for r in reference {
            if let Some(i) = pool.iter().position(|g| g == r) {
                pool.swap_remove(i);
                hits += 1;
            }
        }
        hits as f64 / reference.len() as f64
    }

    #[test]
    fn rouge1_worked_example() {
        let r = rouge1(&toks("the cat lay on a mat"), &toks("the cat sat on the mat")).unwrap();
        assert!((r - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_short_candidate_example() {
        let b = bleu4(&toks("the cat"), &toks("the cat sat")).unwrap();
        assert!((b - (-0.5f64).exp()).abs() < 1e-12);
        assert!((b - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn identical_sequences_score_one() {
        let x = toks("a quick brown fox jumps");
        assert_eq!(rouge1(&x, &x).unwrap(), 1.0);
        assert_eq!(bleu4(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn empty_cases() {
        let x = toks("a b");
        let empty: Vec<String> = vec![];
        assert_eq!(rouge1(&x, &empty), Err(MetricError::EmptyReference));
        assert_eq!(bleu4(&x, &empty), Err(MetricError::EmptyReference));
        assert_eq!(bleu4(&empty, &x), Ok(0.0));
        assert_eq!(rouge1(&empty, &x), Ok(0.0));
    }

    #[test]
    fn bleu_zero_precision_is_zero() {
        // bigram precision is zero
        assert_eq!(bleu4(&toks("b a"), &toks("a b")).unwrap(), 0.0);
    }

    #[test]
    fn tokenize_lowercases_and_keeps_punctuation() {
        assert_eq!(tokenize("The  Cat, sat."), vec!["the", "cat,", "sat."]);
    }

    #[test]
    fn corpus_rouge_pools_counts() {
        let a = (vec![1u8, 2], vec![1u8, 2, 3, 4]);
        let b = (vec![5u8], vec![5u8, 6]);
        let r = rouge1_corpus([(&a.0[..], &a.1[..]), (&b.0[..], &b.1[..])]).unwrap();
        assert!((r - 3.0 / 6.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rouge_matches_multiset_oracle(
            gen in proptest::collection::vec(0u8..6, 0..12),
            reference in proptest::collection::vec(0u8..6, 1..12),
        ) {
            prop_assert_eq!(rouge1(&gen, &reference).unwrap(), brute_rouge1(&gen, &reference));
        }

        #[test]
        fn scores_bounded(
            gen in proptest::collection::vec(0u8..5, 0..10),
            reference in proptest::collection::vec(0u8..5, 1..10),
        ) {
            let r = rouge1(&gen, &reference).unwrap();
            let b = bleu4(&gen, &reference).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn bleu_invariant_under_relabeling(
            gen in proptest::collection::vec(0u8..5, 0..10),
            reference in proptest::collection::vec(0u8..5, 1..10),
            shift in 1u8..5,
        ) {
            let relabel = |v: &[u8]| v.iter().map(|t| (t + shift) % 5).collect::<Vec<_>>();
            prop_assert_eq!(
                bleu4(&gen, &reference).unwrap(),
                bleu4(&relabel(&gen), &relabel(&reference)).unwrap()
            );
        }
    }
}
