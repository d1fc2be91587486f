//! Flat `key=value` experiment configuration with section-prefixed keys.
//!
//! Lines starting with `#` are comments. Unknown or duplicated keys are
//! errors, which catches typos before a long run. Every run archives its
//! fully resolved configuration, so defaults are always recoverable.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::advsr::AdvConfig;
use crate::noise::NoiseOp;
use crate::vocab::VocabTrainConfig;

use super::HarnessError;

/// Environment variable naming the root under which relative output
/// directories are created.
pub const OUT_ROOT_ENV: &str = "ADVSR_LAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    Base,
    Sr,
    Advsr,
}

impl TrainMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(Self::Base),
            "sr" => Some(Self::Sr),
            "advsr" => Some(Self::Advsr),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Sr => "sr",
            Self::Advsr => "advsr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(Self::Sgd),
            "adam" => Some(Self::Adam),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        }
    }
}

/// Subword-regularization sampling hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct SrParams {
    pub alpha: f64,
    pub l: usize,
}

impl Default for SrParams {
    fn default() -> Self {
        Self { alpha: 0.1, l: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub valid_src: PathBuf,
    pub valid_tgt: PathBuf,
    pub test_src: PathBuf,
    pub test_tgt: PathBuf,
    /// Pre-trained vocabulary; when absent one is trained jointly over the
    /// source and target training corpora.
    pub vocab_path: Option<PathBuf>,
    pub vocab: VocabTrainConfig,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub grad_clip: f64,
    pub modes: Vec<TrainMode>,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    /// Source-token budget per batch.
    pub batch_tokens: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
    pub validate_beam: usize,
    /// Cap on validation sentences per epoch (0 = all).
    pub validate_limit: usize,
    pub test_beam: usize,
    pub decode_max_len: usize,
    pub sr: SrParams,
    pub adv: AdvConfig,
    /// Noise fractions evaluated on the test set; 0.0 means the clean set.
    pub noise_fractions: Vec<f64>,
    pub noise_ops: Vec<NoiseOp>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses configuration text. `source` names the input in errors.
    pub fn parse(text: &str, source: &str) -> Result<Self, HarnessError> {
        let bad = |line: usize, msg: String| HarnessError::Config {
            origin: source.to_string(),
            line,
            message: msg,
        };
        let mut kv: HashMap<String, (usize, String)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(bad(i + 1, format!("expected key=value, got {line:?}")));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if let Some((first, _)) = kv.insert(key.clone(), (i + 1, value)) {
                return Err(bad(i + 1, format!("duplicate key {key} (first on line {first})")));
            }
        }

        let mut take = |key: &str| kv.remove(key);
        let require = |slot: Option<(usize, String)>, key: &str| {
            slot.map(|(_, v)| v)
                .ok_or_else(|| bad(0, format!("missing required key {key}")))
        };
        let parse_num = |slot: Option<(usize, String)>, key: &str, default: f64| match slot {
            None => Ok(default),
            Some((line, v)) => v
                .parse::<f64>()
                .map_err(|_| bad(line, format!("{key}: invalid number {v:?}"))),
        };
        let parse_usize = |slot: Option<(usize, String)>, key: &str, default: usize| match slot {
            None => Ok(default),
            Some((line, v)) => v
                .parse::<usize>()
                .map_err(|_| bad(line, format!("{key}: invalid count {v:?}"))),
        };
        let parse_bool = |slot: Option<(usize, String)>, key: &str, default: bool| match slot {
            None => Ok(default),
            Some((line, v)) => match v.as_str() {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(bad(line, format!("{key}: invalid flag {v:?}"))),
            },
        };

        let train_src = PathBuf::from(require(take("data.train_src"), "data.train_src")?);
        let train_tgt = PathBuf::from(require(take("data.train_tgt"), "data.train_tgt")?);
        let valid_src = PathBuf::from(require(take("data.valid_src"), "data.valid_src")?);
        let valid_tgt = PathBuf::from(require(take("data.valid_tgt"), "data.valid_tgt")?);
        let test_src = PathBuf::from(require(take("data.test_src"), "data.test_src")?);
        let test_tgt = PathBuf::from(require(take("data.test_tgt"), "data.test_tgt")?);
        let vocab_path = take("vocab.path").map(|(_, v)| PathBuf::from(v));
        let vd = VocabTrainConfig::default();
        let vocab = VocabTrainConfig {
            target_size: parse_usize(take("vocab.target_size"), "vocab.target_size", vd.target_size)?,
            seed_multiplier: parse_usize(
                take("vocab.seed_multiplier"),
                "vocab.seed_multiplier",
                vd.seed_multiplier,
            )?,
            em_iterations: parse_usize(
                take("vocab.em_iterations"),
                "vocab.em_iterations",
                vd.em_iterations,
            )?,
            prune_fraction: parse_num(
                take("vocab.prune_fraction"),
                "vocab.prune_fraction",
                vd.prune_fraction,
            )?,
            max_piece_len: parse_usize(
                take("vocab.max_piece_len"),
                "vocab.max_piece_len",
                vd.max_piece_len,
            )?,
            char_coverage: parse_num(
                take("vocab.char_coverage"),
                "vocab.char_coverage",
                vd.char_coverage,
            )?,
        };

        let optimizer = match take("train.optimizer") {
            None => OptimizerKind::Sgd,
            Some((line, v)) => OptimizerKind::parse(&v)
                .ok_or_else(|| bad(line, format!("unknown optimizer {v:?}")))?,
        };
        let modes = match take("train.mode") {
            None => vec![TrainMode::Base, TrainMode::Sr, TrainMode::Advsr],
            Some((line, v)) => v
                .split(',')
                .map(|m| {
                    TrainMode::parse(m.trim())
                        .ok_or_else(|| bad(line, format!("unknown mode {m:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let seeds = match take("train.seeds") {
            None => vec![1, 2, 3],
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| bad(line, format!("invalid seed {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let noise_fractions = match take("noise.fractions") {
            None => vec![0.0, 0.3],
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| bad(line, format!("invalid fraction {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let noise_ops = match take("noise.ops") {
            None => vec![NoiseOp::Drop, NoiseOp::Replace, NoiseOp::Insert],
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    NoiseOp::parse(s.trim())
                        .ok_or_else(|| bad(line, format!("unknown noise op {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };

        let adv_default = AdvConfig::default();
        let adv = AdvConfig {
            r: parse_num(take("advsr.r"), "advsr.r", adv_default.r)?,
            n_candidates: parse_usize(
                take("advsr.n_candidates"),
                "advsr.n_candidates",
                adv_default.n_candidates,
            )?,
            perturb_source: parse_bool(
                take("advsr.perturb_source"),
                "advsr.perturb_source",
                adv_default.perturb_source,
            )?,
            perturb_target: parse_bool(
                take("advsr.perturb_target"),
                "advsr.perturb_target",
                adv_default.perturb_target,
            )?,
            seed: 0,
        };
        let sr_default = SrParams::default();
        let sr = SrParams {
            alpha: parse_num(take("sr.alpha"), "sr.alpha", sr_default.alpha)?,
            l: parse_usize(take("sr.l"), "sr.l", sr_default.l)?,
        };

        let mut out_dir = PathBuf::from(require(take("out.dir"), "out.dir")?);
        if out_dir.is_relative() {
            if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
                out_dir = PathBuf::from(root).join(out_dir);
            }
        }

        let cfg = Self {
            train_src,
            train_tgt,
            valid_src,
            valid_tgt,
            test_src,
            test_tgt,
            vocab_path,
            vocab,
            dim: parse_usize(take("model.dim"), "model.dim", 64)?,
            heads: parse_usize(take("model.heads"), "model.heads", 2)?,
            layers: parse_usize(take("model.layers"), "model.layers", 1)?,
            ff_dim: parse_usize(take("model.ff_dim"), "model.ff_dim", 128)?,
            max_len: parse_usize(take("model.max_len"), "model.max_len", 256)?,
            grad_clip: parse_num(take("model.grad_clip"), "model.grad_clip", 1.0)?,
            modes,
            optimizer,
            epochs: parse_usize(take("train.epochs"), "train.epochs", 15)?,
            batch_tokens: parse_usize(take("train.batch_tokens"), "train.batch_tokens", 1024)?,
            lr: parse_num(take("train.lr"), "train.lr", 0.5)?,
            seeds,
            validate_beam: parse_usize(take("train.validate_beam"), "train.validate_beam", 1)?,
            validate_limit: parse_usize(take("train.validate_limit"), "train.validate_limit", 0)?,
            test_beam: parse_usize(take("train.test_beam"), "train.test_beam", 4)?,
            decode_max_len: parse_usize(take("train.decode_max_len"), "train.decode_max_len", 64)?,
            sr,
            adv,
            noise_fractions,
            noise_ops,
            out_dir,
        };

        if let Some((line, _)) = kv.values().next() {
            let keys: Vec<&str> = kv.keys().map(String::as_str).collect();
            return Err(bad(*line, format!("unknown keys: {}", keys.join(", "))));
        }
        Ok(cfg)
    }

    /// Loads from a file and verifies that every referenced path exists.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn check_paths(&self) -> Result<(), HarnessError> {
        let mut paths = vec![
            &self.train_src,
            &self.train_tgt,
            &self.valid_src,
            &self.valid_tgt,
            &self.test_src,
            &self.test_tgt,
        ];
        if let Some(v) = &self.vocab_path {
            paths.push(v);
        }
        for p in paths {
            if !p.exists() {
                return Err(HarnessError::MissingPath {
                    path: p.display().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Serializes the fully resolved configuration, defaults included.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let p = |s: &mut String, k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        p(&mut s, "data.train_src", &self.train_src.display());
        p(&mut s, "data.train_tgt", &self.train_tgt.display());
        p(&mut s, "data.valid_src", &self.valid_src.display());
        p(&mut s, "data.valid_tgt", &self.valid_tgt.display());
        p(&mut s, "data.test_src", &self.test_src.display());
        p(&mut s, "data.test_tgt", &self.test_tgt.display());
        if let Some(v) = &self.vocab_path {
            p(&mut s, "vocab.path", &v.display());
        }
        p(&mut s, "vocab.target_size", &self.vocab.target_size);
        p(&mut s, "vocab.seed_multiplier", &self.vocab.seed_multiplier);
        p(&mut s, "vocab.em_iterations", &self.vocab.em_iterations);
        p(&mut s, "vocab.prune_fraction", &self.vocab.prune_fraction);
        p(&mut s, "vocab.max_piece_len", &self.vocab.max_piece_len);
        p(&mut s, "vocab.char_coverage", &self.vocab.char_coverage);
        p(&mut s, "model.dim", &self.dim);
        p(&mut s, "model.heads", &self.heads);
        p(&mut s, "model.layers", &self.layers);
        p(&mut s, "model.ff_dim", &self.ff_dim);
        p(&mut s, "model.max_len", &self.max_len);
        p(&mut s, "model.grad_clip", &self.grad_clip);
        let modes: Vec<&str> = self.modes.iter().map(|m| m.name()).collect();
        p(&mut s, "train.mode", &modes.join(","));
        p(&mut s, "train.optimizer", &self.optimizer.name());
        p(&mut s, "train.epochs", &self.epochs);
        p(&mut s, "train.batch_tokens", &self.batch_tokens);
        p(&mut s, "train.lr", &self.lr);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        p(&mut s, "train.seeds", &seeds.join(","));
        p(&mut s, "train.validate_beam", &self.validate_beam);
        p(&mut s, "train.validate_limit", &self.validate_limit);
        p(&mut s, "train.test_beam", &self.test_beam);
        p(&mut s, "train.decode_max_len", &self.decode_max_len);
        p(&mut s, "sr.alpha", &self.sr.alpha);
        p(&mut s, "sr.l", &self.sr.l);
        p(&mut s, "advsr.r", &self.adv.r);
        p(&mut s, "advsr.n_candidates", &self.adv.n_candidates);
        p(&mut s, "advsr.perturb_source", &self.adv.perturb_source);
        p(&mut s, "advsr.perturb_target", &self.adv.perturb_target);
        let fractions: Vec<String> = self.noise_fractions.iter().map(f64::to_string).collect();
        p(&mut s, "noise.fractions", &fractions.join(","));
        let ops: Vec<&str> = self.noise_ops.iter().map(|o| o.name()).collect();
        p(&mut s, "noise.ops", &ops.join(","));
        p(&mut s, "out.dir", &self.out_dir.display());
        s
    }
}
