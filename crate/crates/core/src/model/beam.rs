//! Beam-search decoding with length-normalized scoring.

use ndarray::Array2;

use super::tape::Tape;
use super::{ModelError, ModelParams};
use crate::vocab::{BOS_ID, EOS_ID};

#[derive(Clone)]
struct Hyp {
    ids: Vec<u32>,
    sum: f64,
}

/// Log-probabilities of the next target token given the source and the
/// tokens emitted so far. Forward-only; shared by the beam search and by
/// decoding oracles.
pub fn next_token_log_probs(
    params: &ModelParams,
    src_ids: &[u32],
    emitted: &[u32],
) -> Result<Vec<f64>, ModelError> {
    params.check_ids("source", src_ids, params.cfg.src_vocab)?;
    let enc_val = encode(params, src_ids);
    Ok(step(params, &enc_val, emitted))
}

fn encode(params: &ModelParams, src_ids: &[u32]) -> Array2<f64> {
    let mut tape = Tape::new(&params.values);
    let leaf = tape.leaf(params.embed("src_embed", src_ids));
    let x = params.with_positions(&mut tape, leaf, src_ids.len());
    let enc = params.encoder(&mut tape, x);
    tape.value(enc).to_owned()
}

fn step(params: &ModelParams, enc_val: &Array2<f64>, emitted: &[u32]) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(emitted.len() + 1);
    prefix.push(BOS_ID);
    prefix.extend_from_slice(emitted);
    let mut tape = Tape::new(&params.values);
    let enc = tape.leaf(enc_val.clone());
    let leaf = tape.leaf(params.embed("tgt_embed", &prefix));
    let y = params.with_positions(&mut tape, leaf, prefix.len());
    let logits = params.decoder_logits(&mut tape, y, enc);
    let row = tape.value(logits);
    let row = row.row(prefix.len() - 1);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Decodes `src_ids` with beam search, returning the completed hypothesis
/// with the highest length-normalized log-probability (sum of token
/// log-probabilities divided by emitted length, end token included).
///
/// Ties break toward the lexicographically smaller id sequence, and
/// hypotheses that reach `max_len` without the end token compete as
/// truncated completions. `beam = 1` is exactly greedy decoding.
pub fn beam_decode(
    params: &ModelParams,
    src_ids: &[u32],
    beam: usize,
    max_len: usize,
) -> Result<Vec<u32>, ModelError> {
    beam_decode_scored(params, src_ids, beam, max_len).map(|(ids, _)| ids)
}

/// [`beam_decode`] plus the normalized score of the returned hypothesis.
pub fn beam_decode_scored(
    params: &ModelParams,
    src_ids: &[u32],
    beam: usize,
    max_len: usize,
) -> Result<(Vec<u32>, f64), ModelError> {
    if beam == 0 {
        return Err(ModelError::BadConfig("beam must be >= 1".into()));
    }
    params.check_ids("source", src_ids, params.cfg.src_vocab)?;
    let budget = max_len.min(params.cfg.max_len - 1);
    if budget == 0 {
        return Ok((Vec::new(), f64::NEG_INFINITY));
    }

    let enc_val = encode(params, src_ids);
    let next_log_probs = |emitted: &[u32]| -> Vec<f64> { step(params, &enc_val, emitted) };

    let mut live = vec![Hyp {
        ids: Vec::new(),
        sum: 0.0,
    }];
    // (normalized score, emitted ids incl. any trailing end token)
    let mut completed: Vec<(f64, Vec<u32>)> = Vec::new();
    for _ in 0..budget {
        if live.is_empty() {
            break;
        }
        let mut expansions: Vec<Hyp> = Vec::new();
        for hyp in &live {
            let lp = next_log_probs(&hyp.ids);
            for (tok, l) in lp.iter().enumerate() {
                let mut ids = hyp.ids.clone();
                ids.push(tok as u32);
                expansions.push(Hyp {
                    ids,
                    sum: hyp.sum + l,
                });
            }
        }
        expansions.sort_by(|a, b| {
            b.sum
                .partial_cmp(&a.sum)
                .unwrap()
                .then_with(|| a.ids.cmp(&b.ids))
        });
        expansions.truncate(beam);
        live = Vec::new();
        for h in expansions {
            let len = h.ids.len();
            if h.ids.last() == Some(&EOS_ID) || len == budget {
                completed.push((h.sum / len as f64, h.ids));
            } else {
                live.push(h);
            }
        }
    }
    completed.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| a.1.cmp(&b.1))
    });
    let (score, mut ids) = completed.swap_remove(0);
    if ids.last() == Some(&EOS_ID) {
        ids.pop();
    }
    Ok((ids, score))
}
