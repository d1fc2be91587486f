//! Synthetic concatenative-morphology translation task.
//!
//! Source words are stem+suffix strings over a 20-letter alphabet; targets
//! are deterministic word-by-word transductions (a stem mapping composed
//! with a suffix mapping). A fraction of the stem/suffix combinations is
//! held out of the training split, and every test sentence is forced to
//! contain at least one held-out combination, so the test set probes
//! compositional generalization to unseen words whose morphemes are known.

use std::collections::HashSet;

use rand::Rng;

use crate::rng::stream_rng;

#[derive(Debug, Clone)]
pub struct ToyTaskConfig {
    pub stems: usize,
    pub suffixes: usize,
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of stem+suffix combinations excluded from train/valid.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            stems: 60,
            suffixes: 12,
            train_pairs: 5000,
            valid_pairs: 500,
            test_pairs: 500,
            min_words: 3,
            max_words: 5,
            holdout_fraction: 0.15,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub train: Vec<(String, String)>,
    pub valid: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

const ALPHABET: [char; 20] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r',
    's', 't',
];

fn random_string<R: Rng>(rng: &mut R, min_len: usize, max_len: usize) -> String {
    let len = rng.random_range(min_len..=max_len);
    (0..len)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
        .collect()
}

fn distinct_strings<R: Rng>(rng: &mut R, count: usize, min_len: usize, max_len: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = random_string(rng, min_len, max_len);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Generates the corpus. Deterministic per config.
pub fn generate_toy_task(cfg: &ToyTaskConfig) -> ToyCorpus {
    let mut rng = stream_rng(cfg.seed, 0x746f79, 0);
    let src_stems = distinct_strings(&mut rng, cfg.stems, 3, 4);
    let tgt_stems = distinct_strings(&mut rng, cfg.stems, 3, 4);
    let src_sufs = distinct_strings(&mut rng, cfg.suffixes, 1, 2);
    let tgt_sufs = distinct_strings(&mut rng, cfg.suffixes, 1, 2);

    // combos with unique source surfaces so the word-level transduction is
    // a function
    let mut surface_seen = HashSet::new();
    let mut combos: Vec<(usize, usize)> = Vec::new();
    for si in 0..cfg.stems {
        for fi in 0..cfg.suffixes {
            let surface = format!("{}{}", src_stems[si], src_sufs[fi]);
            if surface_seen.insert(surface) {
                combos.push((si, fi));
            }
        }
    }
    // deterministic shuffle, then hold out a tail fraction
    for i in (1..combos.len()).rev() {
        let j = rng.random_range(0..=i);
        combos.swap(i, j);
    }
    let holdout_count = ((combos.len() as f64) * cfg.holdout_fraction).round() as usize;
    let holdout_count = holdout_count.clamp(1, combos.len() - 1);
    let (seen_combos, held_out) = combos.split_at(combos.len() - holdout_count);

    let word = |&(si, fi): &(usize, usize)| -> (String, String) {
        (
            format!("{}{}", src_stems[si], src_sufs[fi]),
            format!("{}{}", tgt_stems[si], tgt_sufs[fi]),
        )
    };

    let sentence = |rng: &mut rand_chacha::ChaCha8Rng,
                        pool: &[(usize, usize)],
                        force_holdout: bool|
     -> (String, String) {
        let n = rng.random_range(cfg.min_words..=cfg.max_words);
        let mut src = Vec::with_capacity(n);
        let mut tgt = Vec::with_capacity(n);
        let mut has_holdout = false;
        for _ in 0..n {
            let combo = &pool[rng.random_range(0..pool.len())];
            if held_out.contains(combo) {
                has_holdout = true;
            }
            let (s, t) = word(combo);
            src.push(s);
            tgt.push(t);
        }
        if force_holdout && !has_holdout {
            let k = rng.random_range(0..n);
            let combo = &held_out[rng.random_range(0..held_out.len())];
            let (s, t) = word(combo);
            src[k] = s;
            tgt[k] = t;
        }
        (src.join(" "), tgt.join(" "))
    };

    let train = (0..cfg.train_pairs)
        .map(|_| sentence(&mut rng, seen_combos, false))
        .collect();
    let valid = (0..cfg.valid_pairs)
        .map(|_| sentence(&mut rng, seen_combos, false))
        .collect();
    let test = (0..cfg.test_pairs)
        .map(|_| sentence(&mut rng, &combos, true))
        .collect();
    ToyCorpus { train, valid, test }
}

impl ToyCorpus {
    /// Writes the six corpus files into `dir` and returns their paths in
    /// (train, valid, test) x (src, tgt) order.
    pub fn write_files(&self, dir: &std::path::Path) -> std::io::Result<[std::path::PathBuf; 6]> {
        std::fs::create_dir_all(dir)?;
        let splits = [
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
        ];
        let mut paths = Vec::with_capacity(6);
        for (name, pairs) in splits {
            for (side, pick) in [("src", 0usize), ("tgt", 1)] {
                let path = dir.join(format!("{name}.{side}"));
                let body: String = pairs
                    .iter()
                    .map(|p| if pick == 0 { p.0.as_str() } else { p.1.as_str() })
                    .fold(String::new(), |mut acc, line| {
                        acc.push_str(line);
                        acc.push('\n');
                        acc
                    });
                std::fs::write(&path, body)?;
                paths.push(path);
            }
        }
        Ok(paths.try_into().unwrap())
    }
}
