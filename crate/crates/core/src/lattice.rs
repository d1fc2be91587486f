//! Segmentation lattices over the unigram vocabulary: Viterbi decoding,
//! exact n-best enumeration, and smoothed sampling.
//!
//! All operations work word-locally: a sentence is split on whitespace, each
//! word is segmented over its own lattice, and the per-word piece sequences
//! are concatenated. Tie-breaking is deterministic everywhere: candidates
//! with equal log-probability are ordered by fewer pieces, then by
//! lexicographically smallest piece-id sequence.

use std::cmp::Ordering;

use rand::Rng;

use crate::vocab::{word_units, SubwordVocab, BOUNDARY_MARKER, UNK_ID};

/// A segmentation of a whole sentence.
///
/// `word_spans` partitions `piece_ids` contiguously into words; the first
/// piece of each span begins with the boundary marker (or is the unknown
/// piece when the word-initial character had no match).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub piece_ids: Vec<u32>,
    pub word_spans: Vec<(usize, usize)>,
}

impl Segmentation {
    pub fn word_count(&self) -> usize {
        self.word_spans.len()
    }

    /// Piece ids of word `j`.
    pub fn word_pieces(&self, j: usize) -> &[u32] {
        let (s, e) = self.word_spans[j];
        &self.piece_ids[s..e]
    }

    /// Builds a sentence segmentation from per-word piece sequences.
    pub fn from_words(words: Vec<Vec<u32>>) -> Self {
        let mut piece_ids = Vec::new();
        let mut word_spans = Vec::with_capacity(words.len());
        for w in words {
            let start = piece_ids.len();
            piece_ids.extend(w);
            word_spans.push((start, piece_ids.len()));
        }
        Self {
            piece_ids,
            word_spans,
        }
    }
}

/// Ranked segmentation candidates of a single word.
#[derive(Debug, Clone, PartialEq)]
pub struct WordLattice {
    pub word: String,
    /// Piece-id sequences, best first.
    pub candidates: Vec<Vec<u32>>,
    /// Summed piece log-probabilities, non-increasing.
    pub log_probs: Vec<f64>,
}

/// Candidate order: higher log-probability first, then fewer pieces, then
/// lexicographically smaller piece ids.
pub(crate) fn cmp_candidates(a: &(f64, Vec<u32>), b: &(f64, Vec<u32>)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap()
        .then(a.1.len().cmp(&b.1.len()))
        .then_with(|| a.1.cmp(&b.1))
}

/// Exact top-n segmentations of one word: per-node candidate lists merged in
/// lattice order, each list bounded at n, which is exact because every prefix
/// of a global top-n path must rank in the top n at its end node.
fn word_nbest(vocab: &SubwordVocab, word: &str, n: usize) -> Vec<(f64, Vec<u32>)> {
    let n = n.max(1);
    let units = word_units(word);
    let len = units.len();
    if len == 0 {
        return vec![(0.0, Vec::new())];
    }
    // paths[pos]: best candidates covering units [0, pos)
    let mut paths: Vec<Vec<(f64, Vec<u32>)>> = vec![Vec::new(); len + 1];
    paths[0].push((0.0, Vec::new()));
    for start in 0..len {
        if paths[start].is_empty() {
            continue;
        }
        let mut piece = String::new();
        let mut single_matched = false;
        let mut spans: Vec<(usize, u32, f64)> = Vec::new();
        for end in start..len {
            piece.push_str(&units[end]);
            if let Some(id) = vocab.id(&piece) {
                spans.push((end + 1, id, vocab.log_prob(id)));
                if end == start {
                    single_matched = true;
                }
            }
        }
        if !single_matched {
            spans.push((start + 1, UNK_ID, vocab.log_prob(UNK_ID)));
        }
        for (end, id, lp) in spans {
            let extended: Vec<(f64, Vec<u32>)> = paths[start]
                .iter()
                .map(|(score, ids)| {
                    let mut ids = ids.clone();
                    ids.push(id);
                    (score + lp, ids)
                })
                .collect();
            let dst = &mut paths[end];
            dst.extend(extended);
            dst.sort_by(cmp_candidates);
            dst.truncate(n);
        }
    }
    std::mem::take(&mut paths[len])
}

/// Highest-probability segmentation of a sentence under the vocabulary.
///
/// Ties break toward fewer pieces, then the lexicographically smallest
/// piece-id sequence. Unknown characters fall back to the reserved unknown
/// piece, so every sentence is segmentable.
pub fn viterbi_segment(vocab: &SubwordVocab, sentence: &str) -> Segmentation {
    let words: Vec<Vec<u32>> = sentence
        .split_whitespace()
        .map(|w| word_nbest(vocab, w, 1).swap_remove(0).1)
        .collect();
    Segmentation::from_words(words)
}

/// The `min(n, total)` best segmentations of one word, best first;
/// `candidates[0]` equals the Viterbi segmentation.
pub fn nbest_candidates(vocab: &SubwordVocab, word: &str, n: usize) -> WordLattice {
    let ranked = word_nbest(vocab, word, n);
    let (log_probs, candidates) = ranked.into_iter().unzip();
    WordLattice {
        word: word.to_string(),
        candidates,
        log_probs,
    }
}

/// Samples a segmentation: per word, one of its `l`-best candidates drawn
/// with probability proportional to `P(candidate)^alpha`.
pub fn sample_segmentation<R: Rng + ?Sized>(
    vocab: &SubwordVocab,
    sentence: &str,
    alpha: f64,
    l: usize,
    rng: &mut R,
) -> Segmentation {
    let words: Vec<Vec<u32>> = sentence
        .split_whitespace()
        .map(|w| {
            let ranked = word_nbest(vocab, w, l);
            let idx = sample_index(ranked.iter().map(|(s, _)| alpha * s), rng);
            ranked[idx].1.clone()
        })
        .collect();
    Segmentation::from_words(words)
}

/// Draws an index with probability proportional to `exp(weight)`.
fn sample_index<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let w: Vec<f64> = weights.collect();
    debug_assert!(!w.is_empty());
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = w.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, e) in exp.iter().enumerate() {
        u -= e;
        if u <= 0.0 {
            return i;
        }
    }
    exp.len() - 1
}

/// Reconstructs sentence text from a segmentation: pieces of each word are
/// concatenated, one leading boundary marker is stripped, and words are
/// joined with single spaces. Unknown pieces surface as their literal text,
/// so the round trip is exact except for characters that were replaced by
/// the unknown piece.
pub fn detokenize(vocab: &SubwordVocab, seg: &Segmentation) -> String {
    let mut words = Vec::with_capacity(seg.word_count());
    for j in 0..seg.word_count() {
        let mut text = String::new();
        for &id in seg.word_pieces(j) {
            text.push_str(vocab.piece(id));
        }
        let stripped = text
            .strip_prefix(BOUNDARY_MARKER)
            .map(str::to_string)
            .unwrap_or(text);
        words.push(stripped);
    }
    words.join(" ")
}

/// Detokenizes a bare piece-id sequence (e.g. decoder output) by starting a
/// new word at every marker-initial piece. Pad/begin/end ids are skipped;
/// unknown pieces keep their literal text.
pub fn detokenize_pieces(vocab: &SubwordVocab, ids: &[u32]) -> String {
    use crate::vocab::{BOS_ID, EOS_ID, PAD_ID};
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        if id == PAD_ID || id == BOS_ID || id == EOS_ID {
            continue;
        }
        let piece = vocab.piece(id);
        match piece.strip_prefix(BOUNDARY_MARKER) {
            Some(rest) => words.push(rest.to_string()),
            None => match words.last_mut() {
                Some(w) => w.push_str(piece),
                None => words.push(piece.to_string()),
            },
        }
    }
    words.join(" ")
}
