//! Synthetic character-level typos for robustness evaluation.
//!
//! Each word is independently perturbed with the configured probability; a
//! perturbed word receives exactly one edit (drop, replace, or insert, drawn
//! uniformly from the enabled set) at a uniformly chosen position, so the
//! edit distance to the original word is exactly 1. Dropping from a
//! one-character word falls back to replacement. Whitespace structure is
//! never touched.

use rand::Rng;
use thiserror::Error;

use crate::rng::stream_rng;

const NOISE_STREAM: u64 = 0x6e6f_6973;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseOp {
    Drop,
    Replace,
    Insert,
}

impl NoiseOp {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drop" => Some(Self::Drop),
            "replace" => Some(Self::Replace),
            "insert" => Some(Self::Insert),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Drop => "drop",
            Self::Replace => "replace",
            Self::Insert => "insert",
        }
    }
}

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise op set is empty")]
    EmptyOps,
    #[error("noise fraction {0} is outside [0, 1]")]
    BadFraction(f64),
    #[error("empty alphabet with replace/insert enabled")]
    EmptyAlphabet,
}

/// Per-word typo model.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    /// Per-word perturbation probability.
    pub fraction: f64,
    pub ops: Vec<NoiseOp>,
    /// Characters eligible for replacement and insertion.
    pub alphabet: Vec<char>,
    pub seed: u64,
}

impl NoiseSpec {
    fn validate(&self) -> Result<(), NoiseError> {
        if self.ops.is_empty() {
            return Err(NoiseError::EmptyOps);
        }
        if !(0.0..=1.0).contains(&self.fraction) || !self.fraction.is_finite() {
            return Err(NoiseError::BadFraction(self.fraction));
        }
        let needs_alphabet = self
            .ops
            .iter()
            .any(|op| matches!(op, NoiseOp::Replace | NoiseOp::Insert));
        if needs_alphabet && self.alphabet.is_empty() {
            return Err(NoiseError::EmptyAlphabet);
        }
        Ok(())
    }
}

/// Applies the typo model to every sentence. Deterministic per
/// `(sentences, spec.seed)`; each sentence gets an independent RNG stream.
pub fn noisify_corpus(sentences: &[String], spec: &NoiseSpec) -> Result<Vec<String>, NoiseError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(sentences.len());
    for (i, sentence) in sentences.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, NOISE_STREAM, i as u64);
        let words: Vec<String> = sentence
            .split_whitespace()
            .map(|w| {
                if rng.random::<f64>() < spec.fraction {
                    perturb_word(w, spec, &mut rng)
                } else {
                    w.to_string()
                }
            })
            .collect();
        out.push(words.join(" "));
    }
    Ok(out)
}

fn perturb_word<R: Rng + ?Sized>(word: &str, spec: &NoiseSpec, rng: &mut R) -> String {
    let chars: Vec<char> = word.chars().collect();
    let mut op = spec.ops[rng.random_range(0..spec.ops.len())];
    if op == NoiseOp::Drop && chars.len() == 1 {
        op = NoiseOp::Replace;
    }
    match op {
        NoiseOp::Drop => {
            let pos = rng.random_range(0..chars.len());
            chars
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != pos)
                .map(|(_, c)| c)
                .collect()
        }
        NoiseOp::Replace => {
            let pos = rng.random_range(0..chars.len());
            let pool: Vec<char> = spec
                .alphabet
                .iter()
                .copied()
                .filter(|&c| c != chars[pos])
                .collect();
            if pool.is_empty() {
                // no visible replacement possible; leave the word alone
                return word.to_string();
            }
            let mut chars = chars;
            chars[pos] = pool[rng.random_range(0..pool.len())];
            chars.into_iter().collect()
        }
        NoiseOp::Insert => {
            let pos = rng.random_range(0..=chars.len());
            let ch = spec.alphabet[rng.random_range(0..spec.alphabet.len())];
            let mut chars = chars;
            chars.insert(pos, ch);
            chars.into_iter().collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn spec(fraction: f64, ops: Vec<NoiseOp>, seed: u64) -> NoiseSpec {
        NoiseSpec {
            fraction,
            ops,
            alphabet: ('a'..='j').collect(),
            seed,
        }
    }

    fn edit_distance(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut dp: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut prev = dp[0];
            dp[0] = i;
            for j in 1..=b.len() {
                let cur = dp[j];
                dp[j] = if a[i - 1] == b[j - 1] {
                    prev
                } else {
                    1 + prev.min(dp[j]).min(dp[j - 1])
                };
                prev = cur;
            }
        }
        dp[b.len()]
    }

    #[test]
    fn zero_fraction_is_identity() {
        let corpus = vec!["abc def".to_string(), "ghi".to_string()];
        let out = noisify_corpus(&corpus, &spec(0.0, vec![NoiseOp::Drop], 1)).unwrap();
        assert_eq!(out, corpus);
    }

    #[test]
    fn drop_positions_are_uniform() {
        let corpus: Vec<String> = (0..30_000).map(|_| "abc".to_string()).collect();
        let out = noisify_corpus(&corpus, &spec(1.0, vec![NoiseOp::Drop], 2)).unwrap();
        let mut hist: HashMap<String, usize> = HashMap::new();
        for w in &out {
            *hist.entry(w.clone()).or_insert(0) += 1;
        }
        for variant in ["bc", "ac", "ab"] {
            let p = hist.get(variant).copied().unwrap_or(0) as f64 / corpus.len() as f64;
            assert!((p - 1.0 / 3.0).abs() < 0.02, "{variant}: {p}");
        }
    }

    #[test]
    fn perturbation_rate_matches_fraction() {
        let words_per_line = 20;
        let lines = 2_000; // 40k words
        let corpus: Vec<String> = (0..lines)
            .map(|_| vec!["abcd"; words_per_line].join(" "))
            .collect();
        let out = noisify_corpus(&corpus, &spec(0.3, vec![NoiseOp::Drop, NoiseOp::Replace, NoiseOp::Insert], 3)).unwrap();
        let mut changed = 0usize;
        let mut total = 0usize;
        for (orig, noisy) in corpus.iter().zip(&out) {
            for (a, b) in orig.split_whitespace().zip(noisy.split_whitespace()) {
                total += 1;
                if a != b {
                    changed += 1;
                    assert_eq!(edit_distance(a, b), 1, "{a} vs {b}");
                }
            }
        }
        let rate = changed as f64 / total as f64;
        assert!((rate - 0.3).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn word_count_is_preserved_and_edits_are_single() {
        let corpus = vec!["a bb ccc dddd eeeee".to_string(); 200];
        let all_ops = vec![NoiseOp::Drop, NoiseOp::Replace, NoiseOp::Insert];
        let out = noisify_corpus(&corpus, &spec(1.0, all_ops, 4)).unwrap();
        for (orig, noisy) in corpus.iter().zip(&out) {
            let o: Vec<&str> = orig.split_whitespace().collect();
            let n: Vec<&str> = noisy.split_whitespace().collect();
            assert_eq!(o.len(), n.len());
            for (a, b) in o.iter().zip(&n) {
                assert!(edit_distance(a, b) <= 1);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let corpus = vec!["the quick brown fox".to_string(); 50];
        let s = spec(0.5, vec![NoiseOp::Drop, NoiseOp::Insert], 7);
        assert_eq!(
            noisify_corpus(&corpus, &s).unwrap(),
            noisify_corpus(&corpus, &s).unwrap()
        );
        let other = spec(0.5, vec![NoiseOp::Drop, NoiseOp::Insert], 8);
        assert_ne!(
            noisify_corpus(&corpus, &s).unwrap(),
            noisify_corpus(&corpus, &other).unwrap()
        );
    }

    #[test]
    fn validation_errors() {
        let corpus = vec!["ab".to_string()];
        let empty_ops = NoiseSpec {
            fraction: 0.5,
            ops: vec![],
            alphabet: vec!['a'],
            seed: 0,
        };
        assert!(matches!(
            noisify_corpus(&corpus, &empty_ops),
            Err(NoiseError::EmptyOps)
        ));
        let no_alphabet = NoiseSpec {
            fraction: 0.5,
            ops: vec![NoiseOp::Replace],
            alphabet: vec![],
            seed: 0,
        };
        assert!(matches!(
            noisify_corpus(&corpus, &no_alphabet),
            Err(NoiseError::EmptyAlphabet)
        ));
        let bad_fraction = NoiseSpec {
            fraction: 1.5,
            ops: vec![NoiseOp::Drop],
            alphabet: vec![],
            seed: 0,
        };
        assert!(matches!(
            noisify_corpus(&corpus, &bad_fraction),
            Err(NoiseError::BadFraction(_))
        ));
    }

    #[test]
    fn one_char_word_drop_falls_back_to_replace() {
        let corpus = vec!["a".to_string(); 500];
        let out = noisify_corpus(&corpus, &spec(1.0, vec![NoiseOp::Drop], 9)).unwrap();
        for w in &out {
            assert_eq!(w.chars().count(), 1);
            assert_ne!(w, "a");
        }
    }
}
