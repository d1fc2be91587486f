//! Subword-segmentation toolkit for studying translation robustness.
//!
//! The crate bundles a unigram subword language model with lattice-based
//! segmentation (Viterbi, n-best, smoothed sampling), a small differentiable
//! encoder-decoder that exposes per-position embedding gradients, a
//! gradient-guided adversarial segmentation sampler, character-level noise
//! generation, corpus BLEU scoring, and an experiment harness that trains and
//! compares the three segmentation regimes (deterministic, sampled,
//! adversarial) on clean and noisified test sets.

pub mod advsr;
pub mod bleu;
pub mod harness;
pub mod lattice;
pub mod model;
pub mod noise;
pub mod rng;
pub mod vocab;
