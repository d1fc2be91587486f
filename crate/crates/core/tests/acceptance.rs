//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers once its assertions hold.
//!
//! Criteria:
//!  1. lattice oracle equivalence (exhaustive enumeration)
//!  2. sampling distribution vs closed form
//!  3. embedding-gradient finite-difference agreement
//!  4. adversarial selection vs a brute-force first-order scorer
//!  5. adversarial algorithm invariants
//!  6. directional robustness on the synthetic morphology task
//!  7. noise generator statistics
//!  8. BLEU fixtures and dual-implementation agreement
//!  9. end-to-end determinism
//!
//! Criterion 6 trains 9 models (3 modes x 3 seeds) and is by far the
//! slowest; everything else completes in seconds.

use std::collections::HashMap;

use ndarray::ArrayView1;

use advsr_core::advsr::{advsr_sample, advsr_sample_traced, score_candidate, AdvConfig};
use advsr_core::bleu::{corpus_bleu, tokenize_eval};
use advsr_core::harness::{
    self, generate_toy_task, ExperimentConfig, ToyTaskConfig, TrainMode,
};
use advsr_core::lattice::{
    detokenize, nbest_candidates, sample_segmentation, viterbi_segment,
};
use advsr_core::model::{GradientSource, ModelConfig, ModelParams, Side};
use advsr_core::noise::{noisify_corpus, NoiseOp, NoiseSpec};
use advsr_core::rng::{rng_from_seed, stream_rng};
use advsr_core::vocab::{unk_log_prob, SubwordVocab, BOUNDARY_MARKER, UNK_ID};

use rand::Rng;

fn marked(s: &str) -> String {
    format!("{BOUNDARY_MARKER}{s}")
}

/// Independent lattice oracle: enumerate all split points of the word's
/// units, mirroring the unknown-piece fallback rule, summing left to right.
fn brute_force_nbest(vocab: &SubwordVocab, word: &str, n: usize) -> Vec<(f64, Vec<u32>)> {
    let units: Vec<String> = {
        let mut u = Vec::new();
        for (k, ch) in word.chars().enumerate() {
            if k == 0 {
                u.push(format!("{BOUNDARY_MARKER}{ch}"));
            } else {
                u.push(ch.to_string());
            }
        }
        u
    };
    let len = units.len();
    let mut all: Vec<(f64, Vec<u32>)> = Vec::new();
    for mask in 0..(1u32 << (len - 1)) {
        let mut ids = Vec::new();
        let mut score = 0.0;
        let mut start = 0;
        let mut ok = true;
        for end in 1..=len {
            if end != len && mask & (1 << (end - 1)) == 0 {
                continue;
            }
            let piece: String = units[start..end].concat();
            match vocab.id(&piece) {
                Some(id) => {
                    score += vocab.log_prob(id);
                    ids.push(id);
                }
                None => {
                    if end - start == 1 && vocab.id(&units[start]).is_none() {
                        score += unk_log_prob();
                        ids.push(UNK_ID);
                    } else {
                        ok = false;
                        break;
                    }
                }
            }
            start = end;
        }
        if ok {
            all.push((score, ids));
        }
    }
    all.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.len().cmp(&b.1.len()))
            .then_with(|| a.1.cmp(&b.1))
    });
    all.truncate(n);
    all
}

fn random_vocab<R: Rng>(rng: &mut R) -> SubwordVocab {
    let alphabet = ['a', 'b', 'c'];
    let mut pieces: Vec<(String, f64)> = Vec::new();
    let grid = |rng: &mut R| -(rng.random_range(1..24) as f64) * 0.25;
    for ch in alphabet {
        pieces.push((ch.to_string(), grid(rng)));
        pieces.push((marked(&ch.to_string()), grid(rng)));
    }
    for _ in 0..44 {
        let len = rng.random_range(2..=5);
        let body: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        let text = if rng.random::<bool>() { marked(&body) } else { body };
        if pieces.iter().all(|(p, _)| p != &text) {
            pieces.push((text, grid(rng)));
        }
    }
    SubwordVocab::from_pieces(pieces).unwrap()
}

#[test]
fn criterion_1_lattice_oracle_equivalence() {
    let started = std::time::Instant::now();
    let mut rng = rng_from_seed(0xACC1);
    let mut checked = 0;
    while checked < 1000 {
        let vocab = random_vocab(&mut rng);
        let len = rng.random_range(1..=12);
        let word: String = (0..len)
            .map(|_| ['a', 'b', 'c', 'd'][rng.random_range(0..4)])
            .collect();
        let n = rng.random_range(1..=9);
        let expect = brute_force_nbest(&vocab, &word, n);
        let got = nbest_candidates(&vocab, &word, n);
        assert_eq!(got.candidates.len(), expect.len(), "word {word}");
        for (k, (score, ids)) in expect.iter().enumerate() {
            assert_eq!(&got.candidates[k], ids, "word {word} rank {k}");
            assert_eq!(got.log_probs[k], *score, "word {word} rank {k}");
        }
        let vit = viterbi_segment(&vocab, &word);
        assert_eq!(vit.piece_ids, expect[0].1, "word {word}");
        checked += 1;
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!("ACCEPTANCE 1 PASS: viterbi/n-best equal exhaustive enumeration on {checked} instances ({elapsed:?})");
}

#[test]
fn criterion_2_sampling_distribution() {
    let started = std::time::Instant::now();
    // a word with exactly 3 candidates: ab -> [▁ab], [▁a, b], [▁ab? ...]
    let vocab = SubwordVocab::from_pieces(vec![
        (marked("abc"), -1.0),
        (marked("ab"), -1.6),
        (marked("a"), -1.1),
        ("b".to_string(), -0.9),
        ("c".to_string(), -0.8),
        ("bc".to_string(), -1.4),
    ])
    .unwrap();
    let lat = nbest_candidates(&vocab, "abc", 64);
    assert_eq!(lat.candidates.len(), 4); // ▁abc | ▁ab c | ▁a bc | ▁a b c
    let lat = nbest_candidates(&vocab, "abc", 3);
    assert_eq!(lat.candidates.len(), 3);

    let draws = 100_000;
    for alpha in [0.0, 0.1, 1.0] {
        // closed form: P(cand) ∝ exp(alpha * log_prob) over the 3-best
        let weights: Vec<f64> = lat.log_probs.iter().map(|lp| (alpha * lp).exp()).collect();
        let z: f64 = weights.iter().sum();
        let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut rng = stream_rng(0xACC2, alpha.to_bits(), 0);
        for _ in 0..draws {
            let seg = sample_segmentation(&vocab, "abc", alpha, 3, &mut rng);
            *counts.entry(seg.piece_ids).or_insert(0) += 1;
        }
        let mut tv = 0.0;
        for (cand, w) in lat.candidates.iter().zip(&weights) {
            let p_hat = counts.get(cand).copied().unwrap_or(0) as f64 / draws as f64;
            tv += (p_hat - w / z).abs();
        }
        let tv = tv / 2.0;
        assert!(tv <= 0.02, "alpha {alpha}: total variation {tv}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!("ACCEPTANCE 2 PASS: sampled frequencies match P^alpha within TV 0.02 for alpha in {{0, 0.1, 1}} ({elapsed:?})");
}

#[test]
fn criterion_3_gradient_finite_differences() {
    let started = std::time::Instant::now();
    let h = 1e-4;
    let mut max_rel = 0.0f64;
    let mut instances = 0;
    for seed in 0..20u64 {
        let mut cfg = ModelConfig::new(10, 10);
        cfg.dim = 4;
        cfg.heads = 2;
        cfg.ff_dim = 6;
        cfg.max_len = 16;
        let params = ModelParams::init(cfg, seed).unwrap();
        let mut rng = stream_rng(0xACC3, seed, 0);
        let seq = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<u32> {
            (0..rng.random_range(2..=4)).map(|_| rng.random_range(4..10)).collect()
        };
        let src = seq(&mut rng);
        let tgt = seq(&mut rng);
        let bundle = params.loss_and_embedding_grads(&src, &tgt).unwrap();
        let (src_emb, dec_emb) = params.input_embeddings(&src, &tgt).unwrap();
        for side in [Side::Source, Side::Target] {
            let (rows, grads) = match side {
                Side::Source => (src.len(), &bundle.src_grads),
                Side::Target => (tgt.len(), &bundle.tgt_grads),
            };
            for r in 0..rows {
                for c in 0..4 {
                    let f = |delta: f64| -> f64 {
                        let mut se = src_emb.clone();
                        let mut de = dec_emb.clone();
                        match side {
                            Side::Source => se[(r, c)] += delta,
                            Side::Target => de[(r + 1, c)] += delta,
                        }
                        params.loss_given_embeddings(se, de, &tgt)
                    };
                    // 4th-order central stencil at the spec step size keeps
                    // truncation below the tolerance even for tiny grads
                    let numeric =
                        (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
                    let analytic = grads[(r, c)];
                    let rel = (numeric - analytic).abs()
                        / numeric.abs().max(analytic.abs()).max(1e-10);
                    max_rel = max_rel.max(rel);
                    assert!(rel <= 1e-4, "seed {seed} {side:?} ({r},{c}): rel {rel}");
                }
            }
        }
        instances += 1;
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("ACCEPTANCE 3 PASS: embedding gradients match finite differences on {instances} instances (max rel err {max_rel:.2e}, {elapsed:?})");
}

/// Vocabulary whose words have few candidates, for the selection oracle.
fn oracle_vocab() -> SubwordVocab {
    SubwordVocab::from_pieces(vec![
        (marked("ab"), -1.2),
        (marked("a"), -1.0),
        ("b".to_string(), -1.1),
        (marked("ba"), -1.4),
        (marked("b"), -1.3),
        ("a".to_string(), -0.9),
        (marked("aab"), -2.2),
        (marked("aa"), -1.9),
        ("ab".to_string(), -1.5),
        ("aa".to_string(), -1.8),
    ])
    .unwrap()
}

#[test]
fn criterion_4_adversarial_selection_oracle() {
    let started = std::time::Instant::now();
    let vocab = oracle_vocab();
    let words = ["ab", "ba", "aab", "a", "b"];
    let mut mc = ModelConfig::new(vocab.len(), vocab.len());
    mc.dim = 8;
    mc.heads = 2;
    mc.ff_dim = 12;
    mc.max_len = 32;
    let mut checked = 0;
    for case in 0..200u64 {
        let params = ModelParams::init(mc.clone(), case).unwrap();
        let mut rng = stream_rng(0xACC4, case, 0);
        let sentence = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
            let n = rng.random_range(1..=4);
            (0..n)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let src_text = sentence(&mut rng);
        let tgt_text = sentence(&mut rng);
        let cfg = AdvConfig {
            r: 1.0,
            n_candidates: 4,
            ..Default::default()
        };
        let (got_src, got_tgt) = advsr_sample(
            &params,
            &vocab,
            &src_text,
            &tgt_text,
            &cfg,
            &mut stream_rng(0xACC4, case, 1),
        )
        .unwrap();

        // independent oracle: one gradient bundle, then per word enumerate
        // the n-best candidates and score them from raw embeddings
        let src_det = viterbi_segment(&vocab, &src_text);
        let tgt_det = viterbi_segment(&vocab, &tgt_text);
        let bundle = params
            .loss_and_embedding_grads(&src_det.piece_ids, &tgt_det.piece_ids)
            .unwrap();
        let mean =
            |rows: Vec<ArrayView1<f64>>| -> ndarray::Array1<f64> {
                let mut sum = rows[0].to_owned();
                for r in &rows[1..] {
                    sum += r;
                }
                sum / rows.len() as f64
            };
        for (side, det, got, text) in [
            ("src", &src_det, &got_src, &src_text),
            ("tgt", &tgt_det, &got_tgt, &tgt_text),
        ] {
            let grads = if side == "src" { &bundle.src_grads } else { &bundle.tgt_grads };
            let embed = |id: u32| -> ArrayView1<f64> {
                if side == "src" {
                    params.src_embedding(id)
                } else {
                    params.tgt_embedding(id)
                }
            };
            for (j, word) in text.split_whitespace().enumerate() {
                let lat = nbest_candidates(&vocab, word, 4);
                let original = det.word_pieces(j).to_vec();
                let expected = if lat.candidates.len() < 2 {
                    original.clone()
                } else {
                    let (s, e) = det.word_spans[j];
                    let g = mean((s..e).map(|k| grads.row(k)).collect());
                    let orig_emb = mean(original.iter().map(|&id| embed(id)).collect());
                    let mut best: Option<(f64, Vec<u32>)> = None;
                    for cand in &lat.candidates {
                        let cand_emb = mean(cand.iter().map(|&id| embed(id)).collect());
                        let score =
                            score_candidate(g.view(), cand_emb.view(), orig_emb.view());
                        if best.as_ref().map(|(b, _)| score > *b).unwrap_or(true) {
                            best = Some((score, cand.clone()));
                        }
                    }
                    best.unwrap().1
                };
                assert_eq!(
                    got.word_pieces(j),
                    expected.as_slice(),
                    "case {case} {side} word {j} ({word})"
                );
                checked += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("ACCEPTANCE 4 PASS: adversarial per-word choices equal the brute-force scorer on 200 cases ({checked} words, {elapsed:?})");
}

#[test]
fn criterion_5_algorithm_invariants() {
    let started = std::time::Instant::now();
    let vocab = oracle_vocab();
    let mut mc = ModelConfig::new(vocab.len(), vocab.len());
    mc.dim = 8;
    mc.heads = 2;
    mc.ff_dim = 12;
    mc.max_len = 64;
    let params = ModelParams::init(mc, 77).unwrap();

    // surface preservation + candidate containment over random sentences
    let words = ["ab", "ba", "aab", "aaab", "b"];
    let mut rng = rng_from_seed(0xACC5);
    for _ in 0..300 {
        let n = rng.random_range(1..=5);
        let text: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
        let text = text.join(" ");
        let cfg = AdvConfig {
            r: 0.8,
            ..Default::default()
        };
        let (x, y) = advsr_sample(&params, &vocab, &text, &text, &cfg, &mut rng).unwrap();
        for seg in [&x, &y] {
            assert_eq!(detokenize(&vocab, seg), text, "surface text changed");
            for (j, w) in text.split_whitespace().enumerate() {
                let lat = nbest_candidates(&vocab, w, cfg.n_candidates);
                assert!(
                    lat.candidates.contains(&seg.word_pieces(j).to_vec()),
                    "candidate containment"
                );
            }
        }
    }

    // argmax invariance under loss rescaling: a model with every parameter
    // scaled produces scaled gradients; selections must not change
    struct Scaled<'a> {
        inner: &'a ModelParams,
        factor: f64,
    }
    impl GradientSource for Scaled<'_> {
        fn loss_and_embedding_grads(
            &self,
            src: &[u32],
            tgt: &[u32],
        ) -> Result<advsr_core::model::GradientBundle, advsr_core::model::ModelError> {
            let mut b = self.inner.loss_and_embedding_grads(src, tgt)?;
            b.loss *= self.factor;
            b.src_grads *= self.factor;
            b.tgt_grads *= self.factor;
            Ok(b)
        }
        fn src_embedding(&self, id: u32) -> ArrayView1<'_, f64> {
            self.inner.src_embedding(id)
        }
        fn tgt_embedding(&self, id: u32) -> ArrayView1<'_, f64> {
            self.inner.tgt_embedding(id)
        }
    }
    let cfg = AdvConfig {
        r: 1.0,
        ..Default::default()
    };
    for case in 0..50u64 {
        let text = "aab ab ba";
        let small = Scaled { inner: &params, factor: 1e-4 };
        let large = Scaled { inner: &params, factor: 1e4 };
        let a = advsr_sample(&small, &vocab, text, text, &cfg, &mut stream_rng(7, case, 0)).unwrap();
        let b = advsr_sample(&large, &vocab, text, text, &cfg, &mut stream_rng(7, case, 0)).unwrap();
        assert_eq!(a, b, "selection changed under loss rescaling");
    }

    // empirical perturbation rate on eligible words
    for r in [0.25, 0.33] {
        let cfg = AdvConfig {
            r,
            perturb_target: false,
            ..Default::default()
        };
        let mut rng = rng_from_seed(0xACC5 + r.to_bits());
        let mut perturbed = 0usize;
        let mut eligible = 0usize;
        // "aab ab" words both have >= 2 candidates
        for _ in 0..5_000 {
            let out = advsr_sample_traced(&params, &vocab, "aab ab", "ba", &cfg, &mut rng).unwrap();
            eligible += 2;
            perturbed += out.src_perturbed.iter().filter(|&&b| b).count();
        }
        let rate = perturbed as f64 / eligible as f64;
        assert!((rate - r).abs() <= 0.02, "rate {rate} vs R {r}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("ACCEPTANCE 5 PASS: surface text, containment, rescaling invariance, and perturbation rate hold ({elapsed:?})");
}

#[test]
fn criterion_7_noise_statistics() {
    let started = std::time::Instant::now();
    let words_per_line = 25;
    let lines = 4000; // 100k words
    let corpus: Vec<String> = (0..lines)
        .map(|i| {
            let w = ["abcd", "efghi", "jk", "lmnop"][i % 4];
            vec![w; words_per_line].join(" ")
        })
        .collect();
    let spec = NoiseSpec {
        fraction: 0.3,
        ops: vec![NoiseOp::Drop, NoiseOp::Replace, NoiseOp::Insert],
        alphabet: ('a'..='t').collect(),
        seed: 0xACC7,
    };
    let noisy = noisify_corpus(&corpus, &spec).unwrap();
    let mut perturbed = 0usize;
    let mut total = 0usize;
    for (orig, out) in corpus.iter().zip(&noisy) {
        let o: Vec<&str> = orig.split_whitespace().collect();
        let n: Vec<&str> = out.split_whitespace().collect();
        assert_eq!(o.len(), n.len(), "word count changed");
        for (a, b) in o.iter().zip(&n) {
            total += 1;
            if a != b {
                perturbed += 1;
                assert_eq!(edit_distance(a, b), 1, "{a} vs {b}");
            }
        }
    }
    let rate = perturbed as f64 / total as f64;
    assert!((rate - 0.3).abs() <= 0.01, "rate {rate}");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!("ACCEPTANCE 7 PASS: perturbation rate {rate:.4} within 0.30±0.01 over {total} words, all edits distance 1 ({elapsed:?})");
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
fn criterion_8_bleu_fixtures() {
    let identity = vec!["the cat sat on the mat".to_string(), "a b c d".to_string()];
    let report = corpus_bleu(&identity, &identity).unwrap();
    assert_eq!(report.bleu, 100.0);

    let empty = vec![String::new(); 2];
    let refs = vec!["a b".to_string(), "c".to_string()];
    assert_eq!(corpus_bleu(&empty, &refs).unwrap().bleu, 0.0);

    let fixture = corpus_bleu(
        &["the cat sat".to_string()],
        &["the cat sat down".to_string()],
    )
    .unwrap();
    assert!(
        (fixture.bleu - 71.6531).abs() < 5e-5,
        "fixture bleu {:.6}",
        fixture.bleu
    );

    // dual implementation on 50 random corpora
    let mut rng = rng_from_seed(0xACC8);
    let vocab = ["a", "b", "c", "d", "e", "f"];
    for case in 0..50 {
        let sentences = rng.random_range(1..6);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..sentences {
            let mut line = |max: usize, min: usize| -> String {
                let len = rng.random_range(min..max);
                (0..len)
                    .map(|_| vocab[rng.random_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            hyps.push(line(8, 0));
            refs.push(line(8, 1));
        }
        let mine = corpus_bleu(&hyps, &refs).unwrap().bleu;
        let other = reference_bleu(&hyps, &refs);
        assert!((mine - other).abs() < 1e-9, "case {case}: {mine} vs {other}");
    }
    println!("ACCEPTANCE 8 PASS: identity=100, empty=0, hand fixture 71.6531, dual-implementation agreement < 1e-9 on 50 corpora");
}

/// Second, structurally different BLEU implementation (string-keyed BTreeMap
/// counting, product/nth-root combination).
fn reference_bleu(hyps: &[String], refs: &[String]) -> f64 {
    use std::collections::BTreeMap;
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut totals = [0usize; 4];
    let mut matches = [0usize; 4];
    for (hyp, rf) in hyps.iter().zip(refs) {
        let h = tokenize_eval(hyp);
        let r = tokenize_eval(rf);
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4usize {
            if h.len() + 1 > n {
                totals[n - 1] += h.len() + 1 - n;
            }
            let grams = |toks: &[String]| -> BTreeMap<String, usize> {
                let mut m = BTreeMap::new();
                for w in toks.windows(n) {
                    *m.entry(w.join("\u{1}")).or_insert(0) += 1;
                }
                m
            };
            let hg = grams(&h);
            let rg = grams(&r);
            for (gram, c) in hg {
                matches[n - 1] += c.min(rg.get(&gram).copied().unwrap_or(0));
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut product = 1.0f64;
    let mut orders = 0usize;
    let mut smooth = 1.0f64;
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        orders += 1;
        let p = if matches[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * totals[n] as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        product *= p;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * product.powf(1.0 / orders as f64) * 100.0
}

fn experiment_config(dir: &std::path::Path, seeds: &str, out: &str) -> ExperimentConfig {
    let toy = generate_toy_task(&ToyTaskConfig::default());
    let paths = toy.write_files(&dir.join("data")).unwrap();
    let text = format!(
        "data.train_src={}\ndata.train_tgt={}\ndata.valid_src={}\ndata.valid_tgt={}\n\
         data.test_src={}\ndata.test_tgt={}\nout.dir={}\n\
         vocab.target_size=400\nvocab.char_coverage=1.0\n\
         model.dim=64\nmodel.heads=2\nmodel.layers=1\nmodel.ff_dim=128\nmodel.max_len=96\nmodel.grad_clip=0\n\
         train.mode=base,sr,advsr\ntrain.optimizer=adam\ntrain.lr=0.001\n\
         train.batch_tokens=128\ntrain.epochs=15\ntrain.seeds={seeds}\n\
         train.validate_limit=150\ntrain.test_beam=4\ntrain.decode_max_len=48\n\
         advsr.r=0.25\nadvsr.n_candidates=9\nnoise.fractions=0,0.3\n",
        paths[0].display(),
        paths[1].display(),
        paths[2].display(),
        paths[3].display(),
        paths[4].display(),
        paths[5].display(),
        dir.join(out).display()
    );
    ExperimentConfig::parse(&text, "acceptance").unwrap()
}

/// Scaled-down analogue of the paper-style noise table: order and margins
/// on the 3-seed mean at noise fraction 0.3, with no clean-quality collapse.
#[test]
fn criterion_6_directional_robustness() {
    let started = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment_config(dir.path(), "1,2,3", "out");
    let rows = harness::run_experiment(&cfg).unwrap();
    let cell = |mode, f| harness::mean_bleu(&rows, mode, f).unwrap();
    let base_clean = cell(TrainMode::Base, 0.0);
    let sr_clean = cell(TrainMode::Sr, 0.0);
    let advsr_clean = cell(TrainMode::Advsr, 0.0);
    let base_noise = cell(TrainMode::Base, 0.3);
    let sr_noise = cell(TrainMode::Sr, 0.3);
    let advsr_noise = cell(TrainMode::Advsr, 0.3);
    println!(
        "ACCEPTANCE 6 data: clean base {base_clean:.2} sr {sr_clean:.2} advsr {advsr_clean:.2} | \
         noise0.3 base {base_noise:.2} sr {sr_noise:.2} advsr {advsr_noise:.2}"
    );
    assert!(
        advsr_noise >= sr_noise && sr_noise >= base_noise,
        "ordering at noise 0.3: advsr {advsr_noise:.2} sr {sr_noise:.2} base {base_noise:.2}"
    );
    assert!(
        advsr_noise - base_noise >= 2.0,
        "advsr-base margin {:.2} < 2 BLEU",
        advsr_noise - base_noise
    );
    assert!(
        advsr_clean >= base_clean - 1.0,
        "clean collapse: advsr {advsr_clean:.2} vs base {base_clean:.2}"
    );
    println!(
        "ACCEPTANCE 6 PASS: noise-0.3 means advsr {advsr_noise:.2} >= sr {sr_noise:.2} >= base {base_noise:.2}, \
         margin {:.2} >= 2, clean advsr {advsr_clean:.2} >= base-1 {:.2} ({:?})",
        advsr_noise - base_noise,
        base_clean - 1.0,
        started.elapsed()
    );
}

/// vocab -> 50 training steps -> attack -> evaluate, twice, byte-compared.
#[test]
fn criterion_9_pipeline_determinism() {
    let started = std::time::Instant::now();
    let toy = generate_toy_task(&ToyTaskConfig {
        stems: 10,
        suffixes: 4,
        train_pairs: 40,
        valid_pairs: 8,
        test_pairs: 8,
        seed: 55,
        ..Default::default()
    });
    let run = |dir: &std::path::Path| {
        std::fs::create_dir_all(dir).unwrap();
        let mut corpus: Vec<String> = toy.train.iter().map(|p| p.0.clone()).collect();
        corpus.extend(toy.train.iter().map(|p| p.1.clone()));
        let vocab = advsr_core::vocab::train_vocab(
            &corpus,
            &advsr_core::vocab::VocabTrainConfig {
                target_size: 64,
                char_coverage: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        vocab.save(&dir.join("vocab.txt")).unwrap();
        let mut mc = ModelConfig::new(vocab.len(), vocab.len());
        mc.dim = 16;
        mc.ff_dim = 24;
        mc.max_len = 48;
        let mut params = ModelParams::init(mc, 3).unwrap();
        let batch: Vec<(Vec<u32>, Vec<u32>)> = toy
            .train
            .iter()
            .take(6)
            .map(|(s, t)| {
                (
                    viterbi_segment(&vocab, s).piece_ids,
                    viterbi_segment(&vocab, t).piece_ids,
                )
            })
            .collect();
        for _ in 0..50 {
            advsr_core::model::train_step(&mut params, &batch, 0.05).unwrap();
        }
        params.save_checkpoint(&dir.join("model.ckpt")).unwrap();
        let cfg = AdvConfig {
            r: 1.0,
            ..Default::default()
        };
        let mut attack = String::new();
        let mut hyps = Vec::new();
        for (i, (src, tgt)) in toy.test.iter().enumerate() {
            let mut rng = stream_rng(9, 9, i as u64);
            let out = advsr_sample_traced(&params, &vocab, src, tgt, &cfg, &mut rng).unwrap();
            attack.push_str(&format!("{:?}|{:?}|{:.12}\n", out.src.piece_ids, out.tgt.piece_ids, out.loss));
            let decoded =
                advsr_core::model::beam_decode(&params, &out.src.piece_ids, 4, 24).unwrap();
            hyps.push(advsr_core::lattice::detokenize_pieces(&vocab, &decoded));
        }
        std::fs::write(dir.join("attack.tsv"), attack).unwrap();
        let refs: Vec<String> = toy.test.iter().map(|p| p.1.clone()).collect();
        let report = corpus_bleu(&hyps, &refs).unwrap();
        std::fs::write(dir.join("bleu.txt"), report.key_values()).unwrap();
    };
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    run(&a);
    run(&b);
    for name in ["vocab.txt", "model.ckpt", "attack.tsv", "bleu.txt"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "artifact {name} differs"
        );
    }
    println!(
        "ACCEPTANCE 9 PASS: vocab/train/attack/evaluate artifacts byte-identical across runs ({:?})",
        started.elapsed()
    );
}
