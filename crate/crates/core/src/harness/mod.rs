//! End-to-end experiment driver.
//!
//! Trains one model per (mode, seed) on a parallel corpus — deterministic
//! segmentation, sampled segmentation, or adversarial segmentation — selects
//! the epoch checkpoint with the best validation BLEU, decodes the test set
//! clean and under each configured noise fraction, and writes a comparison
//! table plus all raw hypotheses. Every artifact is a pure function of the
//! configuration and seeds: RNG streams are indexed per epoch and sentence,
//! decoding parallelism preserves order, and no output contains wall-clock
//! state.

pub mod config;
pub mod toy;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use config::{ExperimentConfig, OptimizerKind, SrParams, TrainMode, OUT_ROOT_ENV};
pub use toy::{generate_toy_task, ToyCorpus, ToyTaskConfig};

use crate::advsr::{advsr_sample, AdvConfig, AdvsrError};
use crate::bleu::{corpus_bleu, BleuError};
use crate::lattice::{detokenize_pieces, sample_segmentation, viterbi_segment, Segmentation};
use crate::model::{
    beam_decode, train_step, AdamState, GradientSource, ModelConfig, ModelError, ModelParams,
};
use crate::noise::{noisify_corpus, NoiseError, NoiseSpec};
use crate::rng::stream_rng;
use crate::vocab::{train_vocab, SubwordVocab, VocabError};

const STREAM_SHUFFLE: u64 = 0x7368_7566;
const STREAM_SAMPLE: u64 = 0x7361_6d70;
/// Test-set noise is a property of the data, not of a training run, so its
/// seed is fixed and shared by every mode and seed.
const NOISE_EVAL_SEED: u64 = 0x6e65_7661;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{origin}:{line}: {message}")]
    Config {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("configured path does not exist: {path}")]
    MissingPath { path: String },
    #[error("{path}:{line}: empty sentence")]
    EmptySentenceAt { path: String, line: usize },
    #[error("parallel corpus length mismatch: {src} has {src_lines} lines, {tgt} has {tgt_lines}")]
    ParallelMismatch {
        src: String,
        src_lines: usize,
        tgt: String,
        tgt_lines: usize,
    },
    #[error("stage {stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Advsr(#[from] AdvsrError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
}

fn stage<E: std::fmt::Display>(name: &'static str) -> impl FnOnce(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage: name,
        message: e.to_string(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a one-sentence-per-line corpus, normalizing whitespace.
pub fn read_corpus(path: &Path) -> Result<Vec<String>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match crate::vocab::normalize_sentence(line) {
            Some(s) => out.push(s),
            None => {
                return Err(HarnessError::EmptySentenceAt {
                    path: path.display().to_string(),
                    line: i + 1,
                })
            }
        }
    }
    Ok(out)
}

pub fn read_parallel(src: &Path, tgt: &Path) -> Result<Vec<(String, String)>, HarnessError> {
    let s = read_corpus(src)?;
    let t = read_corpus(tgt)?;
    if s.len() != t.len() {
        return Err(HarnessError::ParallelMismatch {
            src: src.display().to_string(),
            src_lines: s.len(),
            tgt: tgt.display().to_string(),
            tgt_lines: t.len(),
        });
    }
    Ok(s.into_iter().zip(t).collect())
}

/// Produces the segmentation pair fed to one training step: deterministic
/// for `base`, unigram-sampled for `sr`, gradient-guided for `advsr`.
pub fn make_training_sample<G: GradientSource, R: Rng + ?Sized>(
    mode: TrainMode,
    vocab: &SubwordVocab,
    model: &G,
    src: &str,
    tgt: &str,
    sr: &SrParams,
    adv: &AdvConfig,
    rng: &mut R,
) -> Result<(Segmentation, Segmentation), HarnessError> {
    match mode {
        TrainMode::Base => Ok((viterbi_segment(vocab, src), viterbi_segment(vocab, tgt))),
        TrainMode::Sr => Ok((
            sample_segmentation(vocab, src, sr.alpha, sr.l, rng),
            sample_segmentation(vocab, tgt, sr.alpha, sr.l, rng),
        )),
        TrainMode::Advsr => Ok(advsr_sample(model, vocab, src, tgt, adv, rng)?),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_bleu: f64,
}

pub struct TrainedModel {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_valid_bleu: f64,
    pub log: Vec<EpochStats>,
}

fn model_config(cfg: &ExperimentConfig, vocab_len: usize) -> ModelConfig {
    let mut mc = ModelConfig::new(vocab_len, vocab_len);
    mc.dim = cfg.dim;
    mc.heads = cfg.heads;
    mc.layers = cfg.layers;
    mc.ff_dim = cfg.ff_dim;
    mc.max_len = cfg.max_len;
    mc.grad_clip = cfg.grad_clip;
    mc
}

/// Trains one model. One segmentation sample per pair per epoch; batches are
/// filled to the source-token budget after length bucketing; the returned
/// parameters are the epoch snapshot with the best validation BLEU.
pub fn train_model(
    cfg: &ExperimentConfig,
    mode: TrainMode,
    seed: u64,
    vocab: &SubwordVocab,
    train: &[(String, String)],
    valid: &[(String, String)],
) -> Result<TrainedModel, HarnessError> {
    let mut params = ModelParams::init(model_config(cfg, vocab.len()), seed)?;
    // length bucketing key: deterministic source token count
    let bucket_len: Vec<usize> = train
        .par_iter()
        .map(|(s, _)| viterbi_segment(vocab, s).piece_ids.len())
        .collect();
    let valid_limit = if cfg.validate_limit == 0 {
        valid.len()
    } else {
        cfg.validate_limit.min(valid.len())
    };
    let valid_src: Vec<String> = valid[..valid_limit].iter().map(|p| p.0.clone()).collect();
    let valid_ref: Vec<String> = valid[..valid_limit].iter().map(|p| p.1.clone()).collect();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam => Some(AdamState::new(&params)),
        OptimizerKind::Sgd => None,
    };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = stream_rng(seed, STREAM_SHUFFLE, epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        order.sort_by_key(|&i| bucket_len[i]);

        let mut batches: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let mut tokens = 0usize;
        for &i in &order {
            if !current.is_empty() && tokens + bucket_len[i] > cfg.batch_tokens {
                batches.push(std::mem::take(&mut current));
                tokens = 0;
            }
            tokens += bucket_len[i];
            current.push(i);
        }
        if !current.is_empty() {
            batches.push(current);
        }

        let mut loss_sum = 0.0;
        for batch in &batches {
            // sampling reads a parameter snapshot; indexed RNG streams keep
            // it reproducible under parallelism
            let samples: Vec<(Vec<u32>, Vec<u32>)> = batch
                .par_iter()
                .map(|&i| {
                    let (src, tgt) = &train[i];
                    let mut rng =
                        stream_rng(seed, STREAM_SAMPLE ^ (epoch as u64) << 20, i as u64);
                    make_training_sample(mode, vocab, &params, src, tgt, &cfg.sr, &cfg.adv, &mut rng)
                        .map(|(x, y)| (x.piece_ids, y.piece_ids))
                })
                .collect::<Result<_, _>>()?;
            let loss = match adam.as_mut() {
                Some(state) => state.step(&mut params, &samples, cfg.lr)?,
                None => train_step(&mut params, &samples, cfg.lr)?,
            };
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let hyps = decode_corpus(&params, vocab, &valid_src, cfg.validate_beam, cfg.decode_max_len)?;
        let valid_bleu = corpus_bleu(&hyps, &valid_ref)?.bleu;
        log.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            valid_bleu,
        });
        let improved = best
            .as_ref()
            .map(|(_, b, _)| valid_bleu > *b)
            .unwrap_or(true);
        if improved {
            best = Some((epoch + 1, valid_bleu, params.clone()));
        }
    }
    let (best_epoch, best_valid_bleu, best_params) = best.expect("at least one epoch");
    Ok(TrainedModel {
        params: best_params,
        best_epoch,
        best_valid_bleu,
        log,
    })
}

/// Viterbi-segments and decodes every sentence, in parallel, in order.
pub fn decode_corpus(
    params: &ModelParams,
    vocab: &SubwordVocab,
    sources: &[String],
    beam: usize,
    max_len: usize,
) -> Result<Vec<String>, HarnessError> {
    sources
        .par_iter()
        .map(|s| {
            let seg = viterbi_segment(vocab, s);
            let out = beam_decode(params, &seg.piece_ids, beam, max_len)?;
            Ok(detokenize_pieces(vocab, &out))
        })
        .collect()
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub mode: TrainMode,
    /// `None` for the per-mode mean over seeds.
    pub seed: Option<u64>,
    pub fraction: f64,
    pub bleu: f64,
}

pub fn results_table(rows: &[ResultRow]) -> String {
    let mut s = String::from("mode\tseed\tnoise_fraction\tbleu\n");
    for r in rows {
        let seed = r
            .seed
            .map(|x| x.to_string())
            .unwrap_or_else(|| "mean".to_string());
        s.push_str(&format!(
            "{}\t{}\t{:.2}\t{:.4}\n",
            r.mode.name(),
            seed,
            r.fraction,
            r.bleu
        ));
    }
    s
}

/// Mean test BLEU over seeds for one (mode, fraction) cell.
pub fn mean_bleu(rows: &[ResultRow], mode: TrainMode, fraction: f64) -> Option<f64> {
    rows.iter()
        .find(|r| r.mode == mode && r.seed.is_none() && (r.fraction - fraction).abs() < 1e-9)
        .map(|r| r.bleu)
}

/// Runs the full experiment and writes all artifacts under `cfg.out_dir`.
/// Returns the rows of the results table (per-seed rows plus per-mode means).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, HarnessError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| HarnessError::Io {
        path: cfg.out_dir.display().to_string(),
        source,
    })?;
    let status_path = cfg.out_dir.join("status");
    write_file(&status_path, "status=incomplete\n")?;
    write_file(&cfg.out_dir.join("config.resolved"), &cfg.resolved())?;

    let train = read_parallel(&cfg.train_src, &cfg.train_tgt).map_err(stage("load-train"))?;
    let valid = read_parallel(&cfg.valid_src, &cfg.valid_tgt).map_err(stage("load-valid"))?;
    let test = read_parallel(&cfg.test_src, &cfg.test_tgt).map_err(stage("load-test"))?;

    let vocab = match &cfg.vocab_path {
        Some(path) => SubwordVocab::load(path).map_err(stage("load-vocab"))?,
        None => {
            // joint vocabulary over both sides of the training corpus
            let mut corpus: Vec<String> = Vec::with_capacity(train.len() * 2);
            corpus.extend(train.iter().map(|p| p.0.clone()));
            corpus.extend(train.iter().map(|p| p.1.clone()));
            train_vocab(&corpus, &cfg.vocab).map_err(stage("train-vocab"))?
        }
    };
    vocab.save(&cfg.out_dir.join("joint.vocab")).map_err(stage("save-vocab"))?;

    let test_src: Vec<String> = test.iter().map(|p| p.0.clone()).collect();
    let test_ref: Vec<String> = test.iter().map(|p| p.1.clone()).collect();
    let alphabet: Vec<char> = {
        let mut chars: Vec<char> = test_src
            .iter()
            .flat_map(|s| s.chars())
            .filter(|c| !c.is_whitespace())
            .collect();
        chars.sort_unstable();
        chars.dedup();
        chars
    };
    let mut test_sets: Vec<(f64, Vec<String>)> = Vec::new();
    for &fraction in &cfg.noise_fractions {
        let src = if fraction == 0.0 {
            test_src.clone()
        } else {
            let spec = NoiseSpec {
                fraction,
                ops: cfg.noise_ops.clone(),
                alphabet: alphabet.clone(),
                seed: NOISE_EVAL_SEED ^ (fraction * 1000.0) as u64,
            };
            noisify_corpus(&test_src, &spec).map_err(stage("noisify-test"))?
        };
        test_sets.push((fraction, src));
    }

    let mut rows: Vec<ResultRow> = Vec::new();
    for &mode in &cfg.modes {
        let mut per_fraction_sums = vec![0.0f64; test_sets.len()];
        for &seed in &cfg.seeds {
            let run_dir = cfg.out_dir.join(mode.name()).join(format!("seed{seed}"));
            std::fs::create_dir_all(&run_dir).map_err(|source| HarnessError::Io {
                path: run_dir.display().to_string(),
                source,
            })?;
            let trained = train_model(cfg, mode, seed, &vocab, &train, &valid)
                .map_err(stage("train"))?;
            let mut log_text = String::new();
            for e in &trained.log {
                log_text.push_str(&format!(
                    "epoch={} train_loss={:.6} valid_bleu={:.4}\n",
                    e.epoch, e.train_loss, e.valid_bleu
                ));
            }
            log_text.push_str(&format!(
                "best_epoch={} best_valid_bleu={:.4}\n",
                trained.best_epoch, trained.best_valid_bleu
            ));
            write_file(&run_dir.join("epochs.log"), &log_text)?;
            trained
                .params
                .save_checkpoint(&run_dir.join("checkpoint.best"))
                .map_err(stage("save-checkpoint"))?;

            for ((fraction, src), sum) in test_sets.iter().zip(per_fraction_sums.iter_mut()) {
                let hyps =
                    decode_corpus(&trained.params, &vocab, src, cfg.test_beam, cfg.decode_max_len)
                        .map_err(stage("decode-test"))?;
                let name = if *fraction == 0.0 {
                    "hyp_clean.txt".to_string()
                } else {
                    format!("hyp_noise{fraction:.2}.txt")
                };
                let mut body = hyps.join("\n");
                body.push('\n');
                write_file(&run_dir.join(name), &body)?;
                let report = corpus_bleu(&hyps, &test_ref).map_err(stage("evaluate"))?;
                *sum += report.bleu;
                rows.push(ResultRow {
                    mode,
                    seed: Some(seed),
                    fraction: *fraction,
                    bleu: report.bleu,
                });
            }
        }
        for ((fraction, _), sum) in test_sets.iter().zip(&per_fraction_sums) {
            rows.push(ResultRow {
                mode,
                seed: None,
                fraction: *fraction,
                bleu: sum / cfg.seeds.len() as f64,
            });
        }
    }
    write_file(&cfg.out_dir.join("results.tsv"), &results_table(&rows))?;
    write_file(&status_path, "status=complete\n")?;
    Ok(rows)
}


#[cfg(test)]
mod bench {
    use super::*;
    use crate::vocab::VocabTrainConfig;

    /// Manual timing probe for sizing the directional experiment; run with
    /// `cargo test -p advsr-core bench_training_speed -- --ignored --nocapture`.
    #[test]
    #[ignore]
    fn bench_training_speed() {
        let toy = generate_toy_task(&ToyTaskConfig {
            train_pairs: 400,
            valid_pairs: 60,
            test_pairs: 60,
            ..Default::default()
        });
        let mut corpus: Vec<String> = toy.train.iter().map(|p| p.0.clone()).collect();
        corpus.extend(toy.train.iter().map(|p| p.1.clone()));
        let t0 = std::time::Instant::now();
        let vocab = train_vocab(
            &corpus,
            &VocabTrainConfig {
                target_size: 400,
                ..Default::default()
            },
        )
        .unwrap();
        println!("vocab: {} pieces in {:?}", vocab.len(), t0.elapsed());

        let text = minimal_config();
        let mut cfg = ExperimentConfig::parse(&text, "bench").unwrap();
        cfg.epochs = 1;
        for mode in [TrainMode::Base, TrainMode::Sr, TrainMode::Advsr] {
            let t = std::time::Instant::now();
            let trained = train_model(&cfg, mode, 1, &vocab, &toy.train, &toy.valid).unwrap();
            println!(
                "{}: 1 epoch over {} pairs in {:?} (valid_bleu {:.2})",
                mode.name(),
                toy.train.len(),
                t.elapsed(),
                trained.best_valid_bleu
            );
        }
        let params = ModelParams::init(model_config(&cfg, vocab.len()), 1).unwrap();
        let sources: Vec<String> = toy.test.iter().map(|p| p.0.clone()).collect();
        for beam in [1usize, 4] {
            let t = std::time::Instant::now();
            let _ = decode_corpus(&params, &vocab, &sources, beam, 32).unwrap();
            println!("decode beam {beam}: {} sentences in {:?}", sources.len(), t.elapsed());
        }
    }

    /// Convergence probe: small base-mode run, prints the epoch log.
    #[test]
    #[ignore]
    fn bench_convergence() {
        let toy = generate_toy_task(&ToyTaskConfig {
            train_pairs: 5000,
            valid_pairs: 500,
            test_pairs: 500,
            ..Default::default()
        });
        let mut corpus: Vec<String> = toy.train.iter().map(|p| p.0.clone()).collect();
        corpus.extend(toy.train.iter().map(|p| p.1.clone()));
        let vocab = train_vocab(
            &corpus,
            &VocabTrainConfig {
                target_size: 400,
                ..Default::default()
            },
        )
        .unwrap();
        {
            let (opt, lr, clip, batch_tokens) = (OptimizerKind::Adam, 1e-3, 0.0, 256);
            let mut cfg = ExperimentConfig::parse(&minimal_config(), "bench").unwrap();
            cfg.epochs = 15;
            cfg.optimizer = opt;
            cfg.validate_limit = 150;
            cfg.lr = lr;
            cfg.grad_clip = clip;
            cfg.batch_tokens = batch_tokens;
            let t = std::time::Instant::now();
            let trained =
                train_model(&cfg, TrainMode::Base, 1, &vocab, &toy.train, &toy.valid).unwrap();
            let last = trained.log.last().unwrap();
            println!(
                "{} lr={lr} clip={clip} bt={batch_tokens}: loss {:.3} valid_bleu {:.2} best {:.2} ({:?})",
                opt.name(), last.train_loss, last.valid_bleu, trained.best_valid_bleu, t.elapsed()
            );
        }
    }

    /// Full-scale directional pilot; prints the results table.
    #[test]
    #[ignore]
    fn bench_directional() {
        let dir = std::env::temp_dir().join("advsr_pilot");
        let toy = generate_toy_task(&ToyTaskConfig {
            stems: 40,
            suffixes: 10,
            ..Default::default()
        });
        let paths = toy.write_files(&dir.join("data")).unwrap();
        let text = format!(
            "data.train_src={}
data.train_tgt={}
data.valid_src={}
data.valid_tgt={}
             data.test_src={}
data.test_tgt={}
out.dir={}
             vocab.target_size=400
vocab.char_coverage=1.0
train.optimizer=adam
train.lr=0.001
             train.batch_tokens=64
train.epochs=15
train.seeds=1
train.validate_limit=150
             train.decode_max_len=48
model.max_len=96
             noise.fractions=0,0.3
model.grad_clip=0
",
            paths[0].display(), paths[1].display(), paths[2].display(),
            paths[3].display(), paths[4].display(), paths[5].display(),
            dir.join("out").display()
        );
        let cfg = ExperimentConfig::parse(&text, "pilot").unwrap();
        let t = std::time::Instant::now();
        let rows = run_experiment(&cfg).unwrap();
        println!("pilot done in {:?}", t.elapsed());
        println!("{}", results_table(&rows));
    }

    fn minimal_config() -> String {
        "data.train_src=x\ndata.train_tgt=x\ndata.valid_src=x\ndata.valid_tgt=x\n\
         data.test_src=x\ndata.test_tgt=x\nout.dir=/tmp/bench\n"
            .to_string()
    }
}
