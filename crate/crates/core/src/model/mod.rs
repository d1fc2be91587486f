//! A small differentiable encoder-decoder translation model.
//!
//! The architecture is a pre-norm attention encoder-decoder over `f64`
//! matrices: token embeddings plus sinusoidal positions, per-head scaled
//! dot-product attention, tanh feed-forward blocks, and a linear output
//! projection trained with token-mean cross entropy. Everything downstream
//! depends only on the [`GradientBundle`] contract: a scalar loss plus the
//! exact gradient of that loss with respect to every looked-up input
//! embedding (per position, not per table row).

mod beam;
mod checkpoint;
mod tape;

pub use beam::{beam_decode, beam_decode_scored, next_token_log_probs};

use ndarray::{s, Array2};
use rand::Rng;
use thiserror::Error;

use crate::rng::rng_from_seed;
use crate::vocab::{BOS_ID, EOS_ID};
use tape::{NodeId, Tape};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("{side} id {id} out of range for vocab of size {vocab}")]
    IdOutOfRange {
        side: &'static str,
        id: u32,
        vocab: usize,
    },
    #[error("{side} sequence is empty")]
    EmptyInput { side: &'static str },
    #[error("{side} sequence length {len} exceeds max_len {max}")]
    TooLong {
        side: &'static str,
        len: usize,
        max: usize,
    },
    #[error("non-finite loss ({loss}) on pair (src_len={src_len}, tgt_len={tgt_len})")]
    NonFiniteLoss {
        loss: f64,
        src_len: usize,
        tgt_len: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("checkpoint dimension mismatch: {field} is {found}, expected {expected}")]
    DimensionMismatch {
        field: &'static str,
        found: u64,
        expected: u64,
    },
}

/// Architecture and training-behavior knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    /// Embedding width.
    pub dim: usize,
    pub heads: usize,
    /// Encoder and decoder block count.
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    /// Sinusoidal position encodings; disabling them makes the encoder
    /// permutation-equivariant, which the gradient tests exploit.
    pub use_positions: bool,
    /// Global gradient-norm clip applied by [`train_step`].
    pub grad_clip: f64,
}

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            dim: 64,
            heads: 2,
            layers: 1,
            ff_dim: 128,
            max_len: 256,
            use_positions: true,
            grad_clip: 1.0,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.dim < 2 {
            return Err(ModelError::BadConfig(format!("dim {} < 2", self.dim)));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(ModelError::BadConfig(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 || self.ff_dim == 0 || self.max_len < 2 {
            return Err(ModelError::BadConfig("layers/ff_dim/max_len too small".into()));
        }
        if self.src_vocab <= EOS_ID as usize || self.tgt_vocab <= EOS_ID as usize {
            return Err(ModelError::BadConfig(
                "vocab sizes must cover the reserved ids".into(),
            ));
        }
        Ok(())
    }
}

/// Scalar loss plus per-position input-embedding gradients from one
/// forward/backward pass.
///
/// Row `k` of `src_grads` (`tgt_grads`) is the gradient of the loss with
/// respect to the embedding vector looked up for source (target) position
/// `k`; repeated tokens get separate rows.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub loss: f64,
    pub src_grads: Array2<f64>,
    pub tgt_grads: Array2<f64>,
}

/// Abstracts the model behind what adversarial sampling needs: one loss and
/// embedding-gradient evaluation per sentence pair, plus read access to the
/// embedding tables.
pub trait GradientSource {
    fn loss_and_embedding_grads(
        &self,
        src_ids: &[u32],
        tgt_ids: &[u32],
    ) -> Result<GradientBundle, ModelError>;
    fn src_embedding(&self, id: u32) -> ndarray::ArrayView1<'_, f64>;
    fn tgt_embedding(&self, id: u32) -> ndarray::ArrayView1<'_, f64>;
}

/// Which side of a sentence pair an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// All trainable state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    cfg: ModelConfig,
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    positions: Array2<f64>,
}

/// Deterministic parameter layout: names and shapes derived from the config.
fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = cfg.dim;
    let dh = d / cfg.heads;
    let mut out: Vec<(String, (usize, usize))> = vec![
        ("src_embed".into(), (cfg.src_vocab, d)),
        ("tgt_embed".into(), (cfg.tgt_vocab, d)),
    ];
    let _ = dh;
    // query/key/value projections are stored fused (one matrix per
    // attention block) and sliced per head inside the graph
    let self_attn = |out: &mut Vec<(String, (usize, usize))>, prefix: &str| {
        out.push((format!("{prefix}.qkv"), (d, 3 * d)));
        out.push((format!("{prefix}.out"), (d, d)));
    };
    let cross_attn = |out: &mut Vec<(String, (usize, usize))>, prefix: &str| {
        out.push((format!("{prefix}.q"), (d, d)));
        out.push((format!("{prefix}.kv"), (d, 2 * d)));
        out.push((format!("{prefix}.out"), (d, d)));
    };
    let ln = |out: &mut Vec<(String, (usize, usize))>, prefix: &str| {
        out.push((format!("{prefix}.g"), (1, d)));
        out.push((format!("{prefix}.b"), (1, d)));
    };
    let ffn = |out: &mut Vec<(String, (usize, usize))>, prefix: &str| {
        out.push((format!("{prefix}.w1"), (d, cfg.ff_dim)));
        out.push((format!("{prefix}.b1"), (1, cfg.ff_dim)));
        out.push((format!("{prefix}.w2"), (cfg.ff_dim, d)));
        out.push((format!("{prefix}.b2"), (1, d)));
    };
    for l in 0..cfg.layers {
        ln(&mut out, &format!("enc{l}.ln1"));
        self_attn(&mut out, &format!("enc{l}.self"));
        ln(&mut out, &format!("enc{l}.ln2"));
        ffn(&mut out, &format!("enc{l}.ff"));
    }
    ln(&mut out, "enc.ln");
    for l in 0..cfg.layers {
        ln(&mut out, &format!("dec{l}.ln1"));
        self_attn(&mut out, &format!("dec{l}.self"));
        ln(&mut out, &format!("dec{l}.ln2"));
        cross_attn(&mut out, &format!("dec{l}.cross"));
        ln(&mut out, &format!("dec{l}.ln3"));
        ffn(&mut out, &format!("dec{l}.ff"));
    }
    ln(&mut out, "dec.ln");
    out.push(("out.w".into(), (d, cfg.tgt_vocab)));
    out.push(("out.b".into(), (1, cfg.tgt_vocab)));
    out
}

/// Position encodings are scaled below unit amplitude to keep them
/// comparable with the embedding initialization.
const POSITION_SCALE: f64 = 0.5;

fn sinusoidal_positions(max_len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, dim), |(p, i)| {
        let exponent = (2 * (i / 2)) as f64 / dim as f64;
        let angle = p as f64 / 10000f64.powf(exponent);
        POSITION_SCALE
            * if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
    })
}

impl ModelParams {
    /// Seeded initialization: Xavier-uniform weights, zero biases, unit
    /// layer-norm gains. Deterministic per (config, seed).
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed ^ 0x6d6f_64656c);
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, (rows, cols)) in layout(&cfg) {
            let value = if name.ends_with(".g") {
                Array2::ones((rows, cols))
            } else if name.ends_with(".b")
                || name.ends_with(".b1")
                || name.ends_with(".b2")
            {
                Array2::zeros((rows, cols))
            } else {
                // embeddings start near unit scale so the additive position
                // encodings do not drown the token identity
                let limit = if name.ends_with("_embed") {
                    0.5
                } else {
                    (6.0 / (rows + cols) as f64).sqrt()
                };
                Array2::from_shape_fn((rows, cols), |_| {
                    (rng.random::<f64>() * 2.0 - 1.0) * limit
                })
            };
            names.push(name);
            values.push(value);
        }
        let positions = sinusoidal_positions(cfg.max_len, cfg.dim);
        Ok(Self {
            cfg,
            names,
            values,
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    fn index_of(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn param(&self, name: &str) -> &Array2<f64> {
        &self.values[self.index_of(name)]
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let i = self.index_of(name);
        &mut self.values[i]
    }

    fn check_ids(&self, side: &'static str, ids: &[u32], vocab: usize) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput { side });
        }
        if ids.len() > self.cfg.max_len {
            return Err(ModelError::TooLong {
                side,
                len: ids.len(),
                max: self.cfg.max_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(ModelError::IdOutOfRange { side, id, vocab });
        }
        Ok(())
    }

    fn embed(&self, table: &str, ids: &[u32]) -> Array2<f64> {
        let t = self.param(table);
        let mut out = Array2::zeros((ids.len(), self.cfg.dim));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id as usize));
        }
        out
    }

    fn with_positions(&self, tape: &mut Tape, leaf: NodeId, len: usize) -> NodeId {
        if self.cfg.use_positions {
            let pos = self.positions.slice(s![..len, ..]).to_owned();
            tape.add_const(leaf, &pos)
        } else {
            leaf
        }
    }

    /// Shared per-head attention core: `q_all` is n x d, `k_all`/`v_all` are
    /// m x d column blocks already projected.
    fn attention_core(
        &self,
        tape: &mut Tape,
        q_all: NodeId,
        kv: NodeId,
        k_offset: usize,
        v_offset: usize,
        prefix: &str,
        causal: bool,
    ) -> NodeId {
        let d = self.cfg.dim;
        let dh = d / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let nq = tape.value(q_all).nrows();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = tape.slice_cols(q_all, h * dh, dh);
            let k = tape.slice_cols(kv, k_offset + h * dh, dh);
            let v = tape.slice_cols(kv, v_offset + h * dh, dh);
            let kt = tape.transpose(k);
            let sc = tape.matmul(q, kt);
            let mut sc = tape.scale(sc, scale);
            if causal {
                let mask = Array2::from_shape_fn((nq, nq), |(i, j)| {
                    if j > i {
                        -1e30
                    } else {
                        0.0
                    }
                });
                sc = tape.add_const(sc, &mask);
            }
            let a = tape.softmax_rows(sc);
            heads.push(tape.matmul(a, v));
        }
        let cat = tape.concat_cols(heads);
        let wo = tape.param(self.index_of(&format!("{prefix}.out")));
        tape.matmul(cat, wo)
    }

    fn self_attention(&self, tape: &mut Tape, x: NodeId, prefix: &str, causal: bool) -> NodeId {
        let d = self.cfg.dim;
        let w = tape.param(self.index_of(&format!("{prefix}.qkv")));
        let qkv = tape.matmul(x, w);
        let q_all = tape.slice_cols(qkv, 0, d);
        self.attention_core(tape, q_all, qkv, d, 2 * d, prefix, causal)
    }

    fn cross_attention(&self, tape: &mut Tape, q_in: NodeId, kv_in: NodeId, prefix: &str) -> NodeId {
        let d = self.cfg.dim;
        let wq = tape.param(self.index_of(&format!("{prefix}.q")));
        let wkv = tape.param(self.index_of(&format!("{prefix}.kv")));
        let q_all = tape.matmul(q_in, wq);
        let kv = tape.matmul(kv_in, wkv);
        self.attention_core(tape, q_all, kv, 0, d, prefix, false)
    }

    fn layer_norm(&self, tape: &mut Tape, x: NodeId, prefix: &str) -> NodeId {
        let g = tape.param(self.index_of(&format!("{prefix}.g")));
        let b = tape.param(self.index_of(&format!("{prefix}.b")));
        tape.layer_norm(x, g, b)
    }

    fn ffn(&self, tape: &mut Tape, x: NodeId, prefix: &str) -> NodeId {
        let w1 = tape.param(self.index_of(&format!("{prefix}.w1")));
        let b1 = tape.param(self.index_of(&format!("{prefix}.b1")));
        let w2 = tape.param(self.index_of(&format!("{prefix}.w2")));
        let b2 = tape.param(self.index_of(&format!("{prefix}.b2")));
        let h = tape.matmul(x, w1);
        let h = tape.add_bias(h, b1);
        let h = tape.tanh(h);
        let o = tape.matmul(h, w2);
        tape.add_bias(o, b2)
    }

    fn encoder(&self, tape: &mut Tape, mut x: NodeId) -> NodeId {
        for l in 0..self.cfg.layers {
            let n1 = self.layer_norm(tape, x, &format!("enc{l}.ln1"));
            let att = self.self_attention(tape, n1, &format!("enc{l}.self"), false);
            x = tape.add(x, att);
            let n2 = self.layer_norm(tape, x, &format!("enc{l}.ln2"));
            let ff = self.ffn(tape, n2, &format!("enc{l}.ff"));
            x = tape.add(x, ff);
        }
        self.layer_norm(tape, x, "enc.ln")
    }

    /// Decoder stack + output projection; returns the logits node.
    fn decoder_logits(&self, tape: &mut Tape, mut y: NodeId, enc_out: NodeId) -> NodeId {
        for l in 0..self.cfg.layers {
            let n1 = self.layer_norm(tape, y, &format!("dec{l}.ln1"));
            let att = self.self_attention(tape, n1, &format!("dec{l}.self"), true);
            y = tape.add(y, att);
            let n2 = self.layer_norm(tape, y, &format!("dec{l}.ln2"));
            let cross = self.cross_attention(tape, n2, enc_out, &format!("dec{l}.cross"));
            y = tape.add(y, cross);
            let n3 = self.layer_norm(tape, y, &format!("dec{l}.ln3"));
            let ff = self.ffn(tape, n3, &format!("dec{l}.ff"));
            y = tape.add(y, ff);
        }
        let y = self.layer_norm(tape, y, "dec.ln");
        let w = tape.param(self.index_of("out.w"));
        let b = tape.param(self.index_of("out.b"));
        let logits = tape.matmul(y, w);
        tape.add_bias(logits, b)
    }

    /// Builds the full teacher-forced loss graph. Returns the loss node and
    /// the two embedding leaves (decoder leaf row 0 is the begin-of-sequence
    /// token).
    fn loss_graph(
        &self,
        tape: &mut Tape,
        src_emb: Array2<f64>,
        dec_emb: Array2<f64>,
        targets: Vec<u32>,
    ) -> (NodeId, NodeId, NodeId) {
        let src_leaf = tape.leaf(src_emb);
        let src_len = tape.value(src_leaf).nrows();
        let x = self.with_positions(tape, src_leaf, src_len);
        let enc = self.encoder(tape, x);
        let dec_leaf = tape.leaf(dec_emb);
        let dec_len = tape.value(dec_leaf).nrows();
        let y = self.with_positions(tape, dec_leaf, dec_len);
        let logits = self.decoder_logits(tape, y, enc);
        let loss = tape.cross_entropy_mean(logits, targets);
        (loss, src_leaf, dec_leaf)
    }

    fn validated_pair(
        &self,
        src_ids: &[u32],
        tgt_ids: &[u32],
    ) -> Result<(Vec<u32>, Vec<u32>), ModelError> {
        self.check_ids("source", src_ids, self.cfg.src_vocab)?;
        self.check_ids("target", tgt_ids, self.cfg.tgt_vocab)?;
        let mut dec_in = Vec::with_capacity(tgt_ids.len() + 1);
        dec_in.push(BOS_ID);
        dec_in.extend_from_slice(tgt_ids);
        if dec_in.len() > self.cfg.max_len {
            return Err(ModelError::TooLong {
                side: "target",
                len: dec_in.len(),
                max: self.cfg.max_len,
            });
        }
        let mut targets = tgt_ids.to_vec();
        targets.push(EOS_ID);
        Ok((dec_in, targets))
    }

    /// One forward/backward pass; gradients for embeddings and parameters.
    fn backward_pass(&self, src_ids: &[u32], tgt_ids: &[u32]) -> Result<Pass, ModelError> {
        let (dec_in, targets) = self.validated_pair(src_ids, tgt_ids)?;
        let src_emb = self.embed("src_embed", src_ids);
        let dec_emb = self.embed("tgt_embed", &dec_in);
        let mut tape = Tape::new(&self.values);
        let (loss_node, src_leaf, dec_leaf) = self.loss_graph(&mut tape, src_emb, dec_emb, targets);
        let loss = tape.scalar(loss_node);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                loss,
                src_len: src_ids.len(),
                tgt_len: tgt_ids.len(),
            });
        }
        let mut grads = tape.backward(loss_node);
        let param_grads: Vec<Option<Array2<f64>>> = (0..self.values.len())
            .map(|i| tape.param_grad(&grads, i).cloned())
            .collect();
        let src_grad = grads[src_leaf].take().expect("source leaf gradient");
        let dec_grad = grads[dec_leaf].take().expect("decoder leaf gradient");
        Ok(Pass {
            loss,
            src_grad,
            dec_grad,
            dec_in,
            param_grads,
        })
    }

    /// Forward-only loss with caller-supplied input embeddings (decoder row 0
    /// is the begin token). The finite-difference gradient checks perturb
    /// these matrices directly.
    pub fn loss_given_embeddings(
        &self,
        src_emb: Array2<f64>,
        dec_emb: Array2<f64>,
        tgt_ids: &[u32],
    ) -> f64 {
        let mut targets = tgt_ids.to_vec();
        targets.push(EOS_ID);
        let mut tape = Tape::new(&self.values);
        let (loss, _, _) = self.loss_graph(&mut tape, src_emb, dec_emb, targets);
        tape.scalar(loss)
    }

    /// The embedding matrices the model would look up for a pair: source
    /// embeddings and decoder-input embeddings (begin token first).
    pub fn input_embeddings(
        &self,
        src_ids: &[u32],
        tgt_ids: &[u32],
    ) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
        let (dec_in, _) = self.validated_pair(src_ids, tgt_ids)?;
        Ok((self.embed("src_embed", src_ids), self.embed("tgt_embed", &dec_in)))
    }

    /// Loss and parameter gradients, named; used by the gradient tests.
    pub fn loss_and_param_grads(
        &self,
        src_ids: &[u32],
        tgt_ids: &[u32],
    ) -> Result<(f64, Vec<(String, Array2<f64>)>), ModelError> {
        let pass = self.backward_pass(src_ids, tgt_ids)?;
        let mut named = Vec::new();
        for (i, g) in pass.param_grads.iter().enumerate() {
            let mut g = match g {
                Some(g) => g.clone(),
                None => Array2::zeros(self.values[i].dim()),
            };
            // fold the per-position embedding gradients back onto table rows
            if self.names[i] == "src_embed" {
                for (r, &id) in src_ids.iter().enumerate() {
                    let mut row = g.row_mut(id as usize);
                    row += &pass.src_grad.row(r);
                }
            } else if self.names[i] == "tgt_embed" {
                for (r, &id) in pass.dec_in.iter().enumerate() {
                    let mut row = g.row_mut(id as usize);
                    row += &pass.dec_grad.row(r);
                }
            }
            named.push((self.names[i].clone(), g));
        }
        Ok((pass.loss, named))
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<(), ModelError> {
        checkpoint::save(self, path)
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<Self, ModelError> {
        checkpoint::load(path)
    }

    /// Loads a checkpoint and verifies it matches the expected architecture.
    pub fn load_checkpoint_matching(
        path: &std::path::Path,
        expected: &ModelConfig,
    ) -> Result<Self, ModelError> {
        let loaded = checkpoint::load(path)?;
        checkpoint::check_compatible(loaded.config(), expected)?;
        Ok(loaded)
    }

    fn from_parts(
        cfg: ModelConfig,
        names: Vec<String>,
        values: Vec<Array2<f64>>,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let positions = sinusoidal_positions(cfg.max_len, cfg.dim);
        Ok(Self {
            cfg,
            names,
            values,
            positions,
        })
    }
}

struct Pass {
    loss: f64,
    src_grad: Array2<f64>,
    dec_grad: Array2<f64>,
    dec_in: Vec<u32>,
    param_grads: Vec<Option<Array2<f64>>>,
}

impl GradientSource for ModelParams {
    fn loss_and_embedding_grads(
        &self,
        src_ids: &[u32],
        tgt_ids: &[u32],
    ) -> Result<GradientBundle, ModelError> {
        let pass = self.backward_pass(src_ids, tgt_ids)?;
        let tgt_grads = pass.dec_grad.slice(s![1.., ..]).to_owned();
        Ok(GradientBundle {
            loss: pass.loss,
            src_grads: pass.src_grad,
            tgt_grads,
        })
    }

    fn src_embedding(&self, id: u32) -> ndarray::ArrayView1<'_, f64> {
        self.param("src_embed").row(id as usize)
    }

    fn tgt_embedding(&self, id: u32) -> ndarray::ArrayView1<'_, f64> {
        self.param("tgt_embed").row(id as usize)
    }
}

/// Mean loss and clipped mean gradients over a batch. Backward passes are
/// independent and run in parallel; gradients reduce in batch order so the
/// result is bitwise identical to a sequential loop.
fn batch_gradients(
    params: &ModelParams,
    batch: &[(Vec<u32>, Vec<u32>)],
) -> Result<(f64, Vec<Array2<f64>>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut accum: Vec<Array2<f64>> = params.values.iter().map(|v| Array2::zeros(v.dim())).collect();
    let mut total_loss = 0.0;
    let src_idx = params.index_of("src_embed");
    let tgt_idx = params.index_of("tgt_embed");
    use rayon::prelude::*;
    let passes: Vec<Pass> = batch
        .par_iter()
        .map(|(src, tgt)| params.backward_pass(src, tgt))
        .collect::<Result<_, _>>()?;
    for ((src, _), pass) in batch.iter().zip(&passes) {
        total_loss += pass.loss;
        for (i, g) in pass.param_grads.iter().enumerate() {
            if let Some(g) = g {
                accum[i].scaled_add(scale, g);
            }
        }
        for (r, &id) in src.iter().enumerate() {
            let mut row = accum[src_idx].row_mut(id as usize);
            row.scaled_add(scale, &pass.src_grad.row(r));
        }
        for (r, &id) in pass.dec_in.iter().enumerate() {
            let mut row = accum[tgt_idx].row_mut(id as usize);
            row.scaled_add(scale, &pass.dec_grad.row(r));
        }
    }
    let norm: f64 = accum
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let clip = params.cfg.grad_clip;
    if clip > 0.0 && norm > clip {
        let factor = clip / norm;
        for g in &mut accum {
            g.mapv_inplace(|x| x * factor);
        }
    }
    Ok((total_loss * scale, accum))
}

/// One plain SGD step over a batch: gradients are averaged over pairs in
/// batch order, clipped to the configured global norm, and applied in
/// place. Returns the mean loss. Deterministic given identical inputs.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[(Vec<u32>, Vec<u32>)],
    lr: f64,
) -> Result<f64, ModelError> {
    let (loss, grads) = batch_gradients(params, batch)?;
    for (v, g) in params.values.iter_mut().zip(&grads) {
        v.scaled_add(-lr, g);
    }
    Ok(loss)
}

/// Adam optimizer state, the optional alternative to plain SGD. Updates are
/// deterministic; moment buffers follow the parameter layout.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.values.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.values.iter().map(|p| Array2::zeros(p.dim())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam step over a batch; returns the mean loss.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        batch: &[(Vec<u32>, Vec<u32>)],
        lr: f64,
    ) -> Result<f64, ModelError> {
        let (loss, grads) = batch_gradients(params, batch)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((value, grad), (m, v)) in params
            .values
            .iter_mut()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::azip!((value in value, &g in grad, m in m, v in v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *value -= lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
        Ok(loss)
    }
}
