//! `advsr-lab`: command-line front end for the segmentation toolkit.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use advsr_core::advsr::{advsr_sample_traced, AdvConfig};
use advsr_core::bleu::corpus_bleu;
use advsr_core::harness::{self, ExperimentConfig, TrainMode};
use advsr_core::lattice::{nbest_candidates, sample_segmentation, viterbi_segment};
use advsr_core::model::ModelParams;
use advsr_core::noise::{noisify_corpus, NoiseOp, NoiseSpec};
use advsr_core::rng::stream_rng;
use advsr_core::vocab::{train_vocab, SubwordVocab, VocabTrainConfig};

#[derive(Parser)]
#[command(
    name = "advsr-lab",
    about = "Subword segmentation lab: unigram vocabularies, lattice sampling, \
             adversarial segmentation, noise, BLEU, and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a unigram subword vocabulary from corpus files.
    TrainVocab(TrainVocabArgs),
    /// Segment stdin sentences (one per line) to stdout.
    Segment(SegmentArgs),
    /// Train translation models per the experiment config (training only).
    Train(TrainArgs),
    /// Show adversarial re-segmentations of a parallel corpus.
    Attack(AttackArgs),
    /// Inject character-level typos into stdin lines.
    Noisify(NoisifyArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Evaluate(EvaluateArgs),
    /// Run the full experiment: train all modes/seeds, decode, tabulate.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct TrainVocabArgs {
    /// Corpus files (joined if several are given).
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16000)]
    target_size: usize,
    #[arg(long, default_value_t = 4)]
    seed_multiplier: usize,
    #[arg(long, default_value_t = 4)]
    em_iterations: usize,
    #[arg(long, default_value_t = 0.2)]
    prune_fraction: f64,
    #[arg(long, default_value_t = 8)]
    max_piece_len: usize,
    #[arg(long, default_value_t = 0.9995)]
    char_coverage: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SegmentMode {
    Viterbi,
    Sample,
    Nbest,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value_t = SegmentMode::Viterbi)]
    mode: SegmentMode,
    /// Smoothing exponent for sample mode.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Lattice width for sample mode.
    #[arg(long, default_value_t = 64)]
    l: usize,
    /// Candidates per word for nbest mode (each input line is one word).
    #[arg(long, default_value_t = 9)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's mode list with a single mode.
    #[arg(long)]
    mode: Option<String>,
    /// Override the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Source text file, one sentence per line.
    #[arg(long)]
    src: PathBuf,
    /// Target text file, parallel to --src.
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    r: f64,
    #[arg(long, default_value_t = 9)]
    n_candidates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NoisifyArgs {
    #[arg(long)]
    fraction: f64,
    /// Comma-separated subset of drop,replace,insert.
    #[arg(long, default_value = "drop,replace,insert")]
    ops: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replacement/insertion characters; defaults to the characters of the
    /// input itself.
    #[arg(long)]
    alphabet: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
}

fn read_lines(path: &PathBuf) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn stdin_lines() -> Result<Vec<String>> {
    let stdin = std::io::stdin();
    let mut lines = Vec::new();
    for line in stdin.lock().lines() {
        lines.push(line.context("reading stdin")?);
    }
    Ok(lines)
}

fn pieces_text(vocab: &SubwordVocab, ids: &[u32]) -> String {
    ids.iter()
        .map(|&id| vocab.piece(id))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainVocab(args) => {
            let mut corpus = Vec::new();
            for path in &args.corpus {
                corpus.extend(read_lines(path)?);
            }
            let cfg = VocabTrainConfig {
                target_size: args.target_size,
                seed_multiplier: args.seed_multiplier,
                em_iterations: args.em_iterations,
                prune_fraction: args.prune_fraction,
                max_piece_len: args.max_piece_len,
                char_coverage: args.char_coverage,
            };
            let vocab = train_vocab(&corpus, &cfg)?;
            vocab.save(&args.out)?;
            eprintln!("wrote {} pieces to {}", vocab.len(), args.out.display());
        }
        Command::Segment(args) => {
            let vocab = SubwordVocab::load(&args.vocab)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for (i, line) in stdin_lines()?.iter().enumerate() {
                match args.mode {
                    SegmentMode::Viterbi => {
                        let seg = viterbi_segment(&vocab, line);
                        writeln!(out, "{}", pieces_text(&vocab, &seg.piece_ids))?;
                    }
                    SegmentMode::Sample => {
                        let mut rng = stream_rng(args.seed, 0x7365_676d, i as u64);
                        let seg = sample_segmentation(&vocab, line, args.alpha, args.l, &mut rng);
                        writeln!(out, "{}", pieces_text(&vocab, &seg.piece_ids))?;
                    }
                    SegmentMode::Nbest => {
                        let word = line.trim();
                        if word.is_empty() {
                            bail!("nbest mode expects one word per line");
                        }
                        let lat = nbest_candidates(&vocab, word, args.n);
                        for (cand, lp) in lat.candidates.iter().zip(&lat.log_probs) {
                            writeln!(out, "{:.6}\t{}", lp, pieces_text(&vocab, cand))?;
                        }
                    }
                }
            }
        }
        Command::Train(args) => {
            let mut cfg = ExperimentConfig::load(&args.config)?;
            if let Some(mode) = &args.mode {
                let mode = TrainMode::parse(mode)
                    .with_context(|| format!("unknown mode {mode:?}"))?;
                cfg.modes = vec![mode];
            }
            if let Some(seed) = args.seed {
                cfg.seeds = vec![seed];
            }
            // training-only run: decode nothing beyond validation
            cfg.noise_fractions = vec![];
            let rows = harness::run_experiment(&cfg)?;
            let _ = rows;
            eprintln!("training artifacts under {}", cfg.out_dir.display());
        }
        Command::Attack(args) => {
            let vocab = SubwordVocab::load(&args.vocab)?;
            let params = ModelParams::load_checkpoint(&args.checkpoint)?;
            let srcs = read_lines(&args.src)?;
            let tgts = read_lines(&args.tgt)?;
            if srcs.len() != tgts.len() {
                bail!(
                    "--src has {} lines but --tgt has {}",
                    srcs.len(),
                    tgts.len()
                );
            }
            let cfg = AdvConfig {
                r: args.r,
                n_candidates: args.n_candidates,
                seed: args.seed,
                ..Default::default()
            };
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            writeln!(
                out,
                "side\toriginal_pieces\tadversarial_pieces\tword_scores"
            )?;
            for (i, (src, tgt)) in srcs.iter().zip(&tgts).enumerate() {
                let mut rng = stream_rng(cfg.seed, 0x6174_7461, i as u64);
                let outcome = advsr_sample_traced(&params, &vocab, src, tgt, &cfg, &mut rng)?;
                for (side, det, seg, scores) in [
                    ("src", viterbi_segment(&vocab, src), &outcome.src, &outcome.src_word_scores),
                    ("tgt", viterbi_segment(&vocab, tgt), &outcome.tgt, &outcome.tgt_word_scores),
                ] {
                    let scores: Vec<String> =
                        scores.iter().map(|s| format!("{s:.4}")).collect();
                    writeln!(
                        out,
                        "{side}\t{}\t{}\t{}",
                        pieces_text(&vocab, &det.piece_ids),
                        pieces_text(&vocab, &seg.piece_ids),
                        scores.join(",")
                    )?;
                }
            }
        }
        Command::Noisify(args) => {
            let lines = stdin_lines()?;
            let ops = args
                .ops
                .split(',')
                .map(|s| NoiseOp::parse(s.trim()).with_context(|| format!("unknown op {s:?}")))
                .collect::<Result<Vec<_>>>()?;
            let alphabet: Vec<char> = match &args.alphabet {
                Some(a) => a.chars().collect(),
                None => {
                    let mut chars: Vec<char> = lines
                        .iter()
                        .flat_map(|l| l.chars())
                        .filter(|c| !c.is_whitespace())
                        .collect();
                    chars.sort_unstable();
                    chars.dedup();
                    chars
                }
            };
            let spec = NoiseSpec {
                fraction: args.fraction,
                ops,
                alphabet,
                seed: args.seed,
            };
            let noisy = noisify_corpus(&lines, &spec)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for line in noisy {
                writeln!(out, "{line}")?;
            }
        }
        Command::Evaluate(args) => {
            let hyps = read_lines(&args.hyp)?;
            let refs = read_lines(&args.reference)?;
            let report = corpus_bleu(&hyps, &refs)?;
            println!("{report}");
            print!("{}", report.key_values());
        }
        Command::Experiment(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let rows = harness::run_experiment(&cfg)?;
            print!("{}", harness::results_table(&rows));
            eprintln!("artifacts under {}", cfg.out_dir.display());
        }
    }
    Ok(())
}
