//! Unigram subword language model: training, persistence, and queries.
//!
//! A [`SubwordVocab`] assigns a log-probability to every piece; the
//! probability of a segmentation is the product of its piece probabilities.
//! Words are split on whitespace and the first character of each word is
//! fused with a reserved boundary marker, so a word `ab` is the unit sequence
//! `["▁a", "b"]` and pieces are concatenations of consecutive units. The
//! marker therefore only ever appears as the first character of a piece, and
//! detokenization is lossless (strip one marker per word, join with spaces).
//!
//! Training follows the classic unigram LM recipe at reduced fidelity: seed
//! with frequent substrings, run forward-backward EM over each word's
//! segmentation lattice, then alternate pruning of low-count pieces with
//! further EM rounds until the vocabulary fits the target size.
//! Single-character pieces (bare characters and marker-fused word-initial
//! characters) are never pruned, which keeps every in-coverage word
//! segmentable. Characters outside the configured coverage fall back to the
//! reserved unknown piece.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Reserved word-boundary marker (fused to the first character of a word).
pub const BOUNDARY_MARKER: char = '\u{2581}';

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

/// Reserved piece texts, in id order.
pub const RESERVED_PIECES: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Fixed penalty assigned to the unknown piece.
pub fn unk_log_prob() -> f64 {
    1e-7f64.ln()
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sentence {index} is empty after whitespace normalization")]
    EmptySentence { index: usize },
    #[error("corpus token {token:?} contains the reserved boundary marker")]
    MarkerInCorpus { token: String },
    #[error("target_size {target} is smaller than alphabet ({alphabet} characters) + {reserved} reserved ids")]
    TargetSizeTooSmall {
        target: usize,
        alphabet: usize,
        reserved: usize,
    },
    #[error("piece {piece:?} violates the boundary-marker rule (marker must be the first character)")]
    MarkerInsidePiece { piece: String },
    #[error("duplicate piece {piece:?}")]
    DuplicatePiece { piece: String },
    #[error("{path}:{line}: malformed line (expected `piece<TAB>log_prob`)")]
    MalformedLine { path: String, line: usize },
    #[error("{path}:{line}: duplicate piece {piece:?}")]
    DuplicatePieceAt {
        path: String,
        line: usize,
        piece: String,
    },
    #[error("{path}:{line}: non-finite log_prob")]
    NonFiniteLogProb { path: String, line: usize },
    #[error("{path}:{line}: positive log_prob {value}")]
    PositiveLogProb {
        path: String,
        line: usize,
        value: f64,
    },
    #[error("{path}:{line}: malformed header line")]
    BadHeader { path: String, line: usize },
    #[error("{path}: no pieces")]
    NoPieces { path: String },
    #[error("{path}: reserved pieces missing or out of order (expected {expected:?} first)")]
    BadReserved {
        path: String,
        expected: [&'static str; 4],
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("vocabulary invariant violated: {0}")]
    Invariant(String),
}

/// Training hyperparameters for [`train_vocab`].
#[derive(Debug, Clone)]
pub struct VocabTrainConfig {
    /// Final vocabulary size, counting reserved pieces.
    pub target_size: usize,
    /// Seed vocabulary holds `seed_multiplier * target_size` candidates.
    pub seed_multiplier: usize,
    /// EM iterations per round.
    pub em_iterations: usize,
    /// Fraction of prunable pieces removed per pruning round.
    pub prune_fraction: f64,
    /// Maximum piece length in units (word-initial marker+char counts as one).
    pub max_piece_len: usize,
    /// Fraction of character occurrences that must be representable; the
    /// rarest characters beyond it map to the unknown piece.
    pub char_coverage: f64,
}

impl Default for VocabTrainConfig {
    fn default() -> Self {
        Self {
            target_size: 16000,
            seed_multiplier: 4,
            em_iterations: 4,
            prune_fraction: 0.2,
            max_piece_len: 8,
            char_coverage: 0.9995,
        }
    }
}

/// Metadata carried alongside the pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabMeta {
    pub char_coverage: f64,
    pub boundary_marker: char,
}

/// A unigram subword language model: pieces with log-probabilities.
///
/// Immutable after construction; ids are dense in `[0, len)` with the four
/// reserved pieces first.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordVocab {
    pieces: Vec<(String, f64)>,
    piece_to_id: HashMap<String, u32>,
    meta: VocabMeta,
}

impl SubwordVocab {
    /// Builds a vocabulary from explicit non-reserved pieces, prepending the
    /// reserved ones. Structural invariants are enforced; the normalization
    /// invariant is not, so callers may pass unnormalized scores (useful for
    /// hand-built vocabularies in tools and tests).
    pub fn from_pieces(pieces: Vec<(String, f64)>) -> Result<Self, VocabError> {
        let mut all: Vec<(String, f64)> = RESERVED_PIECES
            .iter()
            .map(|p| (p.to_string(), 0.0))
            .collect();
        all[UNK_ID as usize].1 = unk_log_prob();
        all.extend(pieces);
        Self::from_raw(all, 1.0)
    }

    fn from_raw(pieces: Vec<(String, f64)>, char_coverage: f64) -> Result<Self, VocabError> {
        if pieces.len() < RESERVED_PIECES.len() {
            return Err(VocabError::Invariant("missing reserved pieces".into()));
        }
        let mut piece_to_id = HashMap::with_capacity(pieces.len());
        for (id, (text, log_prob)) in pieces.iter().enumerate() {
            if !log_prob.is_finite() || *log_prob > 0.0 {
                return Err(VocabError::Invariant(format!(
                    "piece {text:?} has invalid log_prob {log_prob}"
                )));
            }
            if text.chars().skip(1).any(|c| c == BOUNDARY_MARKER) {
                return Err(VocabError::MarkerInsidePiece {
                    piece: text.clone(),
                });
            }
            if piece_to_id.insert(text.clone(), id as u32).is_some() {
                return Err(VocabError::DuplicatePiece {
                    piece: text.clone(),
                });
            }
        }
        Ok(Self {
            pieces,
            piece_to_id,
            meta: VocabMeta {
                char_coverage,
                boundary_marker: BOUNDARY_MARKER,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn meta(&self) -> &VocabMeta {
        &self.meta
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.piece_to_id.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> &str {
        &self.pieces[id as usize].0
    }

    pub fn log_prob(&self, id: u32) -> f64 {
        self.pieces[id as usize].1
    }

    pub fn is_reserved(&self, id: u32) -> bool {
        (id as usize) < RESERVED_PIECES.len()
    }

    /// Stored log-probability of a piece, or `None` for unknown pieces.
    pub fn piece_log_prob(&self, piece: &str) -> Option<f64> {
        self.piece_to_id.get(piece).map(|&id| self.log_prob(id))
    }

    /// Checks the full set of type invariants, including normalization.
    pub fn validate(&self) -> Result<(), VocabError> {
        for (i, reserved) in RESERVED_PIECES.iter().enumerate() {
            if self.pieces.get(i).map(|p| p.0.as_str()) != Some(*reserved) {
                return Err(VocabError::Invariant(format!(
                    "reserved piece {reserved} missing at id {i}"
                )));
            }
        }
        if self.piece_to_id.len() != self.pieces.len() {
            return Err(VocabError::Invariant("piece_to_id is not a bijection".into()));
        }
        let mass: f64 = self
            .pieces
            .iter()
            .skip(RESERVED_PIECES.len())
            .map(|(_, lp)| lp.exp())
            .sum();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(VocabError::Invariant(format!(
                "non-reserved probability mass {mass} is not 1"
            )));
        }
        Ok(())
    }

    /// Serializes as UTF-8 text: `# key=value` headers, then one
    /// `piece<TAB>log_prob` line per piece, reserved pieces first. Log
    /// probabilities are written with 18 significant digits so the file
    /// round-trips bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# format=advsr-vocab-v1");
        let _ = writeln!(out, "# boundary_marker={}", self.meta.boundary_marker);
        let _ = writeln!(out, "# char_coverage={:.17e}", self.meta.char_coverage);
        for (text, lp) in &self.pieces {
            let _ = writeln!(out, "{text}\t{lp:.17e}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_text()).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses the text format produced by [`SubwordVocab::to_text`].
    /// `source` names the input in error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self, VocabError> {
        let path = source.to_string();
        let mut char_coverage = 1.0f64;
        let mut pieces: Vec<(String, f64)> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            if line.starts_with("# ") {
                if !pieces.is_empty() {
                    return Err(VocabError::BadHeader {
                        path,
                        line: lineno,
                    });
                }
                let body = line.strip_prefix("# ").unwrap();
                match body.split_once('=') {
                    Some(("char_coverage", v)) => {
                        char_coverage = v.parse().map_err(|_| VocabError::BadHeader {
                            path: path.clone(),
                            line: lineno,
                        })?;
                    }
                    Some(("boundary_marker", v)) if v.chars().count() == 1 => {
                        if !v.starts_with(BOUNDARY_MARKER) {
                            return Err(VocabError::BadHeader { path, line: lineno });
                        }
                    }
                    Some(("format", "advsr-vocab-v1")) => {}
                    _ => return Err(VocabError::BadHeader { path, line: lineno }),
                }
                continue;
            }
            let Some((piece, value)) = line.split_once('\t') else {
                return Err(VocabError::MalformedLine { path, line: lineno });
            };
            if piece.is_empty() || value.contains('\t') {
                return Err(VocabError::MalformedLine { path, line: lineno });
            }
            let log_prob: f64 = value
                .parse()
                .map_err(|_| VocabError::MalformedLine {
                    path: path.clone(),
                    line: lineno,
                })?;
            if !log_prob.is_finite() {
                return Err(VocabError::NonFiniteLogProb { path, line: lineno });
            }
            if log_prob > 0.0 {
                return Err(VocabError::PositiveLogProb {
                    path,
                    line: lineno,
                    value: log_prob,
                });
            }
            if let Some(_first) = seen.insert(piece.to_string(), lineno) {
                return Err(VocabError::DuplicatePieceAt {
                    path,
                    line: lineno,
                    piece: piece.to_string(),
                });
            }
            pieces.push((piece.to_string(), log_prob));
        }
        if pieces.is_empty() {
            return Err(VocabError::NoPieces { path });
        }
        let reserved_ok = pieces.len() >= 4
            && RESERVED_PIECES
                .iter()
                .zip(pieces.iter())
                .all(|(r, (p, _))| r == p);
        if !reserved_ok {
            return Err(VocabError::BadReserved {
                path,
                expected: RESERVED_PIECES,
            });
        }
        Self::from_raw(pieces, char_coverage)
    }
}

/// Splits a word into lattice units: the first character fused with the
/// boundary marker, then one unit per remaining character.
pub(crate) fn word_units(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(k, ch)| {
            if k == 0 {
                format!("{BOUNDARY_MARKER}{ch}")
            } else {
                ch.to_string()
            }
        })
        .collect()
}

/// Normalizes a sentence to single-space-separated tokens.
/// Returns `None` when nothing remains.
pub fn normalize_sentence(sentence: &str) -> Option<String> {
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    if tokens.is_empty() {
        None
    } else {
        Some(tokens.join(" "))
    }
}

struct TrainPiece {
    text: String,
    unit_len: usize,
    required: bool,
    log_prob: f64,
}

struct WordLatticeEdges {
    freq: f64,
    unit_count: usize,
    /// (start_unit, end_unit, piece index or None for unk)
    edges: Vec<(usize, usize, Option<usize>)>,
}

/// Trains a unigram vocabulary over a corpus of sentences.
///
/// Deterministic: the procedure contains no randomness and all accumulation
/// orders are fixed, so identical `(corpus, cfg)` inputs produce a
/// byte-identical saved vocabulary.
pub fn train_vocab(corpus: &[String], cfg: &VocabTrainConfig) -> Result<SubwordVocab, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }

    // Word frequencies.
    let mut word_freq: HashMap<String, u64> = HashMap::new();
    for (index, sentence) in corpus.iter().enumerate() {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(VocabError::EmptySentence { index });
        }
        for tok in tokens {
            if tok.contains(BOUNDARY_MARKER) {
                return Err(VocabError::MarkerInCorpus {
                    token: tok.to_string(),
                });
            }
            *word_freq.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(String, u64)> = word_freq.into_iter().collect();
    words.sort_unstable();

    // Character coverage: keep the most frequent characters until the
    // configured fraction of occurrences is representable.
    let mut char_freq: HashMap<char, u64> = HashMap::new();
    for (word, freq) in &words {
        for ch in word.chars() {
            *char_freq.entry(ch).or_insert(0) += *freq;
        }
    }
    let alphabet_size = char_freq.len();
    if cfg.target_size < alphabet_size + RESERVED_PIECES.len() {
        return Err(VocabError::TargetSizeTooSmall {
            target: cfg.target_size,
            alphabet: alphabet_size,
            reserved: RESERVED_PIECES.len(),
        });
    }
    let mut by_freq: Vec<(char, u64)> = char_freq.into_iter().collect();
    by_freq.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let total_chars: u64 = by_freq.iter().map(|(_, f)| f).sum();
    let mut covered: u64 = 0;
    let mut in_coverage: Vec<char> = Vec::new();
    for (ch, f) in &by_freq {
        if covered as f64 >= cfg.char_coverage * total_chars as f64 {
            break;
        }
        in_coverage.push(*ch);
        covered += f;
    }
    let coverage: std::collections::HashSet<char> = in_coverage.iter().copied().collect();

    // Required single-unit pieces: every in-coverage character, plus the
    // marker-fused variant of characters that start a word.
    let mut required: Vec<String> = in_coverage.iter().map(|c| c.to_string()).collect();
    let mut initial_chars: Vec<char> = words
        .iter()
        .filter_map(|(w, _)| w.chars().next())
        .filter(|c| coverage.contains(c))
        .collect();
    initial_chars.sort_unstable();
    initial_chars.dedup();
    for ch in initial_chars {
        required.push(format!("{BOUNDARY_MARKER}{ch}"));
    }

    // Seed candidates: unit-span substrings scored by frequency * length.
    let mut seed_score: HashMap<String, u64> = HashMap::new();
    for (word, freq) in &words {
        let units = word_units(word);
        let ok: Vec<bool> = word.chars().map(|c| coverage.contains(&c)).collect();
        for i in 0..units.len() {
            let mut piece = String::new();
            for j in i..units.len().min(i + cfg.max_piece_len) {
                if !ok[j] {
                    break;
                }
                piece.push_str(&units[j]);
                let span = j - i + 1;
                if span >= 2 {
                    *seed_score.entry(piece.clone()).or_insert(0) += freq * span as u64;
                }
            }
        }
    }
    let mut seeds: Vec<(String, u64)> = seed_score
        .into_iter()
        .filter(|(p, _)| !RESERVED_PIECES.contains(&p.as_str()))
        .collect();
    seeds.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let seed_budget = cfg.seed_multiplier.max(1) * cfg.target_size;
    seeds.truncate(seed_budget.saturating_sub(required.len()));

    let mut pieces: Vec<TrainPiece> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for text in &required {
        index.insert(text.clone(), pieces.len());
        pieces.push(TrainPiece {
            text: text.clone(),
            unit_len: 1,
            required: true,
            log_prob: 0.0,
        });
    }
    for (text, score) in &seeds {
        if index.contains_key(text) {
            continue;
        }
        let unit_len = text.chars().count() - usize::from(text.starts_with(BOUNDARY_MARKER));
        index.insert(text.clone(), pieces.len());
        pieces.push(TrainPiece {
            text: text.clone(),
            unit_len,
            required: false,
            log_prob: (*score as f64).ln(),
        });
    }
    // Initial probabilities proportional to the seed scores (required pieces
    // that never occur get the floor during the first M-step).
    for p in pieces.iter_mut() {
        if p.required {
            let score = seeds
                .iter()
                .find(|(t, _)| t == &p.text)
                .map(|(_, s)| *s)
                .unwrap_or(0);
            p.log_prob = if score > 0 {
                (score as f64).ln()
            } else {
                f64::NEG_INFINITY
            };
        }
    }
    // Required single-unit counts come from direct occurrences too.
    let mut single_occ: HashMap<String, u64> = HashMap::new();
    for (word, freq) in &words {
        for (j, unit) in word_units(word).iter().enumerate() {
            let in_cov = word.chars().nth(j).map(|c| coverage.contains(&c)) == Some(true);
            if in_cov {
                *single_occ.entry(unit.clone()).or_insert(0) += freq;
            }
        }
    }
    for p in pieces.iter_mut() {
        if p.unit_len == 1 {
            if let Some(&occ) = single_occ.get(&p.text) {
                if occ > 0 {
                    p.log_prob = (occ as f64).ln();
                }
            }
        }
    }
    normalize_log_probs(&mut pieces);

    // Precompute each distinct word's lattice edges over the seed vocabulary;
    // pruning only removes edges, so indices stay valid.
    let lattices: Vec<WordLatticeEdges> = words
        .iter()
        .map(|(word, freq)| {
            let units = word_units(word);
            let ok: Vec<bool> = word.chars().map(|c| coverage.contains(&c)).collect();
            let n = units.len();
            let mut edges = Vec::new();
            for i in 0..n {
                let mut piece = String::new();
                let mut any_single = false;
                for j in i..n.min(i + cfg.max_piece_len) {
                    if !ok[j] {
                        break;
                    }
                    piece.push_str(&units[j]);
                    if let Some(&pi) = index.get(&piece) {
                        edges.push((i, j + 1, Some(pi)));
                        if j == i {
                            any_single = true;
                        }
                    }
                }
                if !any_single {
                    edges.push((i, i + 1, None));
                }
            }
            WordLatticeEdges {
                freq: *freq as f64,
                unit_count: n,
                edges,
            }
        })
        .collect();

    let em = |pieces: &mut Vec<TrainPiece>, alive: &[bool]| {
        for _ in 0..cfg.em_iterations {
            let counts = e_step(pieces, alive, &lattices);
            m_step(pieces, alive, &counts);
        }
    };

    let mut alive = vec![true; pieces.len()];
    em(&mut pieces, &alive);
    loop {
        let size = alive.iter().filter(|a| **a).count() + RESERVED_PIECES.len();
        if size <= cfg.target_size {
            break;
        }
        let counts = e_step(&pieces, &alive, &lattices);
        let mut prunable: Vec<usize> = (0..pieces.len())
            .filter(|&i| alive[i] && !pieces[i].required && pieces[i].unit_len >= 2)
            .collect();
        if prunable.is_empty() {
            break;
        }
        prunable.sort_by(|&a, &b| {
            counts[a]
                .partial_cmp(&counts[b])
                .unwrap()
                .then(pieces[b].unit_len.cmp(&pieces[a].unit_len))
                .then(pieces[a].text.cmp(&pieces[b].text))
        });
        let excess = size - cfg.target_size;
        let k = ((prunable.len() as f64 * cfg.prune_fraction) as usize)
            .max(1)
            .min(excess)
            .min(prunable.len());
        for &i in prunable.iter().take(k) {
            alive[i] = false;
        }
        renormalize(&mut pieces, &alive);
        em(&mut pieces, &alive);
    }

    // Assemble: reserved first, then surviving pieces by descending
    // probability (ties by text).
    let mut final_pieces: Vec<(String, f64)> = RESERVED_PIECES
        .iter()
        .map(|p| (p.to_string(), 0.0))
        .collect();
    final_pieces[UNK_ID as usize].1 = unk_log_prob();
    let mut survivors: Vec<(String, f64)> = pieces
        .iter()
        .zip(alive.iter())
        .filter(|(_, a)| **a)
        .map(|(p, _)| (p.text.clone(), p.log_prob))
        .collect();
    survivors.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
    });
    final_pieces.extend(survivors);
    let vocab = SubwordVocab::from_raw(final_pieces, cfg.char_coverage)?;
    vocab.validate()?;
    Ok(vocab)
}

/// Expected piece counts from one forward-backward pass over every word
/// lattice. Unknown-piece edges carry the fixed penalty but accumulate no
/// count.
fn e_step(pieces: &[TrainPiece], alive: &[bool], lattices: &[WordLatticeEdges]) -> Vec<f64> {
    let mut counts = vec![0.0f64; pieces.len()];
    let unk_lp = unk_log_prob();
    for lat in lattices {
        let n = lat.unit_count;
        let edge_lp = |pi: &Option<usize>| match pi {
            Some(i) if alive[*i] => Some(pieces[*i].log_prob),
            Some(_) => None,
            None => Some(unk_lp),
        };
        let mut alpha = vec![f64::NEG_INFINITY; n + 1];
        alpha[0] = 0.0;
        for pos in 0..n {
            if alpha[pos] == f64::NEG_INFINITY {
                continue;
            }
            for (i, j, pi) in lat.edges.iter().filter(|(i, _, _)| *i == pos) {
                debug_assert_eq!(*i, pos);
                if let Some(lp) = edge_lp(pi) {
                    alpha[*j] = log_add(alpha[*j], alpha[pos] + lp);
                }
            }
        }
        let mut beta = vec![f64::NEG_INFINITY; n + 1];
        beta[n] = 0.0;
        for pos in (0..n).rev() {
            for (i, j, pi) in lat.edges.iter().filter(|(i, _, _)| *i == pos) {
                if let Some(lp) = edge_lp(pi) {
                    beta[*i] = log_add(beta[*i], lp + beta[*j]);
                }
            }
        }
        let log_z = alpha[n];
        if log_z == f64::NEG_INFINITY {
            continue;
        }
        for (i, j, pi) in &lat.edges {
            if let Some(idx) = pi {
                if alive[*idx] {
                    let lp = pieces[*idx].log_prob;
                    let post = (alpha[*i] + lp + beta[*j] - log_z).exp();
                    counts[*idx] += lat.freq * post;
                }
            }
        }
    }
    counts
}

/// Renormalizes counts into log-probabilities. Zero counts get a relative
/// floor of 1e-12 so required pieces keep finite log-probabilities.
fn m_step(pieces: &mut [TrainPiece], alive: &[bool], counts: &[f64]) {
    let total: f64 = counts
        .iter()
        .zip(alive.iter())
        .filter(|(_, a)| **a)
        .map(|(c, _)| c)
        .sum();
    let floor = if total > 0.0 { total * 1e-12 } else { 1.0 };
    let z: f64 = counts
        .iter()
        .zip(alive.iter())
        .filter(|(_, a)| **a)
        .map(|(c, _)| c.max(floor))
        .sum();
    for (i, p) in pieces.iter_mut().enumerate() {
        if alive[i] {
            p.log_prob = (counts[i].max(floor) / z).ln();
        }
    }
}

fn renormalize(pieces: &mut [TrainPiece], alive: &[bool]) {
    let log_mass = pieces
        .iter()
        .zip(alive.iter())
        .filter(|(_, a)| **a)
        .map(|(p, _)| p.log_prob)
        .fold(f64::NEG_INFINITY, log_add);
    for (i, p) in pieces.iter_mut().enumerate() {
        if alive[i] {
            p.log_prob -= log_mass;
        }
    }
}

fn normalize_log_probs(pieces: &mut [TrainPiece]) {
    let finite: Vec<f64> = pieces
        .iter()
        .map(|p| p.log_prob)
        .filter(|lp| lp.is_finite())
        .collect();
    let log_mass = finite.iter().copied().fold(f64::NEG_INFINITY, log_add);
    let floor = log_mass - 27.0; // e^-27 relative floor for zero-score seeds
    for p in pieces.iter_mut() {
        let lp = if p.log_prob.is_finite() { p.log_prob } else { floor };
        p.log_prob = lp - log_add(log_mass, floor);
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
