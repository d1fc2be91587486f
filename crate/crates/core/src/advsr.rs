//! Gradient-guided adversarial segmentation sampling.
//!
//! Given a sentence pair, the sampler segments both sides deterministically,
//! runs one forward/backward pass to obtain per-position embedding
//! gradients, and then independently re-segments each word with probability
//! `R`: among the word's n-best lattice candidates it picks the one whose
//! aggregated embedding moves furthest along the aggregated gradient
//! direction, i.e. the first-order approximation of the loss increase.
//! Words are aggregated by element-wise mean, and the gradient and both
//! embeddings are L2-normalized individually before the dot product.
//! Gradients are computed exactly once per sentence pair; replacements do
//! not trigger re-evaluation.

use ndarray::{Array1, ArrayView1, Array2};
use rand::Rng;
use thiserror::Error;

use crate::lattice::{nbest_candidates, viterbi_segment, Segmentation};
use crate::model::{GradientSource, ModelError, Side};
use crate::vocab::{SubwordVocab, BOUNDARY_MARKER, UNK_ID};

#[derive(Debug, Error)]
pub enum AdvsrError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("segmentation structure error: {0}")]
    Structure(String),
    #[error("cannot aggregate zero vectors")]
    EmptyAggregate,
}

/// One whitespace word of a segmentation: its index, the span of piece
/// positions it occupies, and its surface text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordGroup {
    pub word_index: usize,
    pub span: (usize, usize),
    pub word_text: String,
}

/// Adversarial sampling configuration.
#[derive(Debug, Clone)]
pub struct AdvConfig {
    /// Per-word replacement probability.
    pub r: f64,
    /// Lattice width searched per word.
    pub n_candidates: usize,
    pub perturb_source: bool,
    pub perturb_target: bool,
    /// Base seed used by drivers to derive per-sentence RNG streams.
    pub seed: u64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            r: 0.25,
            n_candidates: 9,
            perturb_source: true,
            perturb_target: true,
            seed: 0,
        }
    }
}

/// Groups a segmentation's pieces into words, one group per
/// boundary-marker-initiated span.
///
/// Validates the structural invariants: spans tile the piece sequence, each
/// span starts with a marker-initial piece (or the unknown piece, which may
/// stand in for a word-initial unit), and markers never occur span-interior.
pub fn group_words(
    vocab: &SubwordVocab,
    seg: &Segmentation,
) -> Result<Vec<WordGroup>, AdvsrError> {
    let mut expected_start = 0;
    let mut groups = Vec::with_capacity(seg.word_count());
    for (j, &(start, end)) in seg.word_spans.iter().enumerate() {
        if start != expected_start || start >= end || end > seg.piece_ids.len() {
            return Err(AdvsrError::Structure(format!(
                "span {j} ({start}, {end}) does not tile the piece sequence"
            )));
        }
        expected_start = end;
        let mut text = String::new();
        for (k, &id) in seg.piece_ids[start..end].iter().enumerate() {
            let piece = vocab.piece(id);
            let marker_initial = piece.starts_with(BOUNDARY_MARKER);
            if k == 0 && !marker_initial && id != UNK_ID {
                return Err(AdvsrError::Structure(format!(
                    "word {j} starts with piece {piece:?} lacking the boundary marker"
                )));
            }
            if k > 0 && marker_initial {
                return Err(AdvsrError::Structure(format!(
                    "word {j} contains interior marker piece {piece:?}"
                )));
            }
            text.push_str(piece);
        }
        let text = text
            .strip_prefix(BOUNDARY_MARKER)
            .map(str::to_string)
            .unwrap_or(text);
        groups.push(WordGroup {
            word_index: j,
            span: (start, end),
            word_text: text,
        });
    }
    if expected_start != seg.piece_ids.len() {
        return Err(AdvsrError::Structure(
            "spans do not cover all pieces".into(),
        ));
    }
    Ok(groups)
}

/// Element-wise mean of `K >= 1` equal-length vectors.
pub fn aggregate(vectors: &[ArrayView1<'_, f64>]) -> Result<Array1<f64>, AdvsrError> {
    let Some(first) = vectors.first() else {
        return Err(AdvsrError::EmptyAggregate);
    };
    let mut sum = first.to_owned();
    for v in &vectors[1..] {
        sum += v;
    }
    Ok(sum / vectors.len() as f64)
}

fn normalized(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        v.to_owned()
    } else {
        v.to_owned() / norm
    }
}

/// First-order loss-increase score of a candidate: the dot product of the
/// unit-normalized word gradient with the difference of the unit-normalized
/// candidate and original embeddings. Zero vectors stay zero, so an
/// unchanged candidate scores exactly 0.
pub fn score_candidate(
    word_grad: ArrayView1<'_, f64>,
    cand_emb: ArrayView1<'_, f64>,
    orig_emb: ArrayView1<'_, f64>,
) -> f64 {
    let g = normalized(word_grad);
    let diff = normalized(cand_emb) - normalized(orig_emb);
    g.dot(&diff)
}

/// Outcome of one adversarial sampling call, with per-word scores of the
/// chosen candidates (0 for words left on their deterministic segmentation).
#[derive(Debug, Clone)]
pub struct AdvOutcome {
    pub src: Segmentation,
    pub tgt: Segmentation,
    pub src_word_scores: Vec<f64>,
    pub tgt_word_scores: Vec<f64>,
    /// Per word: whether the replacement branch ran (probability draw below
    /// `r` on a word with at least two candidates).
    pub src_perturbed: Vec<bool>,
    pub tgt_perturbed: Vec<bool>,
    pub loss: f64,
}

/// Adversarially re-segments a sentence pair.
///
/// Both sides start from their deterministic segmentations; a single
/// forward/backward pass provides the gradients used for every word on both
/// sides. Per enabled side and word, with probability `cfg.r` the word's
/// segmentation is replaced by the arg-max-scoring candidate from its
/// `n_candidates`-best lattice (the deterministic segmentation itself is
/// candidate 0 with score 0, and ties resolve to the lowest-ranked
/// candidate). Surface text is never changed.
pub fn advsr_sample<G: GradientSource, R: Rng + ?Sized>(
    model: &G,
    vocab: &SubwordVocab,
    src_text: &str,
    tgt_text: &str,
    cfg: &AdvConfig,
    rng: &mut R,
) -> Result<(Segmentation, Segmentation), AdvsrError> {
    advsr_sample_traced(model, vocab, src_text, tgt_text, cfg, rng)
        .map(|out| (out.src, out.tgt))
}

/// [`advsr_sample`] with per-word score diagnostics.
pub fn advsr_sample_traced<G: GradientSource, R: Rng + ?Sized>(
    model: &G,
    vocab: &SubwordVocab,
    src_text: &str,
    tgt_text: &str,
    cfg: &AdvConfig,
    rng: &mut R,
) -> Result<AdvOutcome, AdvsrError> {
    let src_det = viterbi_segment(vocab, src_text);
    let tgt_det = viterbi_segment(vocab, tgt_text);
    let bundle = model.loss_and_embedding_grads(&src_det.piece_ids, &tgt_det.piece_ids)?;

    let (src, src_word_scores, src_perturbed) = perturb_side(
        model,
        vocab,
        &src_det,
        &bundle.src_grads,
        Side::Source,
        cfg.perturb_source,
        cfg,
        rng,
    )?;
    let (tgt, tgt_word_scores, tgt_perturbed) = perturb_side(
        model,
        vocab,
        &tgt_det,
        &bundle.tgt_grads,
        Side::Target,
        cfg.perturb_target,
        cfg,
        rng,
    )?;
    Ok(AdvOutcome {
        src,
        tgt,
        src_word_scores,
        tgt_word_scores,
        src_perturbed,
        tgt_perturbed,
        loss: bundle.loss,
    })
}

#[allow(clippy::too_many_arguments)]
fn perturb_side<G: GradientSource, R: Rng + ?Sized>(
    model: &G,
    vocab: &SubwordVocab,
    det: &Segmentation,
    grads: &Array2<f64>,
    side: Side,
    enabled: bool,
    cfg: &AdvConfig,
    rng: &mut R,
) -> Result<(Segmentation, Vec<f64>, Vec<bool>), AdvsrError> {
    let groups = group_words(vocab, det)?;
    let mut scores = vec![0.0; groups.len()];
    let mut flags = vec![false; groups.len()];
    if !enabled {
        return Ok((det.clone(), scores, flags));
    }
    let embed = |id: u32| match side {
        Side::Source => model.src_embedding(id),
        Side::Target => model.tgt_embedding(id),
    };
    let mut words: Vec<Vec<u32>> = Vec::with_capacity(groups.len());
    for group in &groups {
        let original = det.word_pieces(group.word_index).to_vec();
        let draw = rng.random::<f64>();
        if draw >= cfg.r {
            words.push(original);
            continue;
        }
        let lat = nbest_candidates(vocab, &group.word_text, cfg.n_candidates);
        // replacement must preserve surface text exactly, so candidates that
        // resort to unknown pieces anywhere the original did not are out
        let orig_text: String = original.iter().map(|&id| vocab.piece(id)).collect();
        let candidates: Vec<&Vec<u32>> = lat
            .candidates
            .iter()
            .filter(|cand| {
                let text: String = cand.iter().map(|&id| vocab.piece(id)).collect();
                text == orig_text
            })
            .collect();
        if candidates.len() < 2 {
            words.push(original);
            continue;
        }
        let (start, end) = group.span;
        let grad_rows: Vec<ArrayView1<f64>> = (start..end).map(|k| grads.row(k)).collect();
        let word_grad = aggregate(&grad_rows)?;
        let orig_rows: Vec<ArrayView1<f64>> = original.iter().map(|&id| embed(id)).collect();
        let orig_emb = aggregate(&orig_rows)?;
        let mut best_rank = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (rank, cand) in candidates.iter().enumerate() {
            let cand_rows: Vec<ArrayView1<f64>> = cand.iter().map(|&id| embed(id)).collect();
            let cand_emb = aggregate(&cand_rows)?;
            let score = score_candidate(word_grad.view(), cand_emb.view(), orig_emb.view());
            if score > best_score {
                best_score = score;
                best_rank = rank;
            }
        }
        scores[group.word_index] = best_score;
        flags[group.word_index] = true;
        words.push(candidates[best_rank].clone());
    }
    Ok((Segmentation::from_words(words), scores, flags))
}
