//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SynthConfig;
use crate::decoder::BeamConfig;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, PointingMode};
use crate::metrics::{EvalOptions, NgramSemantics, NoveltyBase};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub phase1_checkpoint: PathBuf,
    pub init_checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub priors: PathBuf,
    pub decode_split: String,

    pub n_examples: usize,
    pub vocab_core_size: usize,
    pub entity_rate: f64,
    pub entity_pool: usize,
    pub synonym_fraction: f64,
    pub synonym_rate: f64,
    pub source_len_min: usize,
    pub source_len_max: usize,
    pub summary_len: usize,
    pub zipf_exponent: f64,
    pub period_rate: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,

    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,

    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub head_count: usize,

    pub learning_rate: f64,
    pub adagrad_init_accumulator: f64,
    pub max_grad_norm: f64,
    pub base_steps: usize,
    pub extension_steps: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub eval_every: usize,

    pub coverage: bool,
    pub lambda_cov: f64,
    pub pointing_loss: PointingMode,
    pub lambda_p: f64,

    pub beam_size: usize,
    pub max_len: usize,
    pub min_len: usize,
    pub length_normalize: bool,

    pub novelty_base: NoveltyBase,
    pub novelty_semantics: NgramSemantics,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: "run".into(),
            data_dir: "data".into(),
            checkpoint: "model.ckpt".into(),
            phase1_checkpoint: "phase1.ckpt".into(),
            init_checkpoint: PathBuf::new(),
            vocab: "vocab.txt".into(),
            priors: "priors.tsv".into(),
            decode_split: "test".into(),
            n_examples: 2000,
            vocab_core_size: 120,
            entity_rate: 0.15,
            entity_pool: 5000,
            synonym_fraction: 0.25,
            synonym_rate: 0.4,
            source_len_min: 30,
            source_len_max: 50,
            summary_len: 12,
            zipf_exponent: 1.0,
            period_rate: 0.12,
            val_fraction: 0.05,
            test_fraction: 0.1,
            vocab_size: 200,
            max_src_len: 400,
            max_tgt_len: 100,
            emb_dim: 16,
            hidden_dim: 16,
            head_count: 1,
            learning_rate: 0.15,
            adagrad_init_accumulator: 0.1,
            max_grad_norm: 2.0,
            base_steps: 3000,
            extension_steps: 3000,
            batch_size: 4,
            dropout_rate: 0.0,
            eval_every: 100,
            coverage: true,
            lambda_cov: 1.0,
            pointing_loss: PointingMode::None,
            lambda_p: 0.0,
            beam_size: 4,
            max_len: 100,
            min_len: 1,
            length_normalize: true,
            novelty_base: NoveltyBase::Source,
            novelty_semantics: NgramSemantics::Set,
        }
    }
}

/// Every key with its one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for data generation, initialization and sampling"),
    ("output_dir", "directory receiving every artifact"),
    ("data_dir", "corpus directory (train/val/test .tsv); relative paths resolve under output_dir"),
    ("checkpoint", "model checkpoint; relative paths resolve under output_dir"),
    ("phase1_checkpoint", "snapshot taken when phase 1 ends"),
    ("init_checkpoint", "training state to resume from; empty starts from a fresh initialization"),
    ("vocab", "vocabulary file written by train, read by decode"),
    ("priors", "word-prior file written by train"),
    ("decode_split", "split decoded and evaluated: train, val or test"),
    ("n_examples", "synthetic corpus size before splitting"),
    ("vocab_core_size", "number of Zipf-distributed core words"),
    ("entity_rate", "per-position probability of an entity token"),
    ("entity_pool", "number of distinct entity tokens"),
    ("synonym_fraction", "fraction of core words that have a summary-only synonym"),
    ("synonym_rate", "probability that a target occurrence of such a word uses the synonym"),
    ("source_len_min", "shortest source, in tokens"),
    ("source_len_max", "longest source, in tokens"),
    ("summary_len", "content tokens per reference summary"),
    ("zipf_exponent", "exponent of the core-word frequency law"),
    ("period_rate", "per-position probability of a sentence break"),
    ("val_fraction", "share of examples held out for validation"),
    ("test_fraction", "share of examples held out for testing"),
    ("vocab_size", "generation vocabulary size, reserved tokens included"),
    ("max_src_len", "source truncation length"),
    ("max_tgt_len", "target truncation length"),
    ("emb_dim", "word embedding size"),
    ("hidden_dim", "LSTM units per direction"),
    ("head_count", "attention heads; must divide 2 * hidden_dim"),
    ("learning_rate", "Adagrad learning rate"),
    ("adagrad_init_accumulator", "initial Adagrad accumulator value"),
    ("max_grad_norm", "global gradient-norm clip"),
    ("base_steps", "phase-1 steps (NLL only)"),
    ("extension_steps", "phase-2 steps (coverage and pointing losses)"),
    ("batch_size", "examples per step"),
    ("dropout_rate", "pointer dropout probability per example in phase 2"),
    ("eval_every", "steps between progress lines"),
    ("coverage", "enable coverage attention and loss in phase 2 (true/false)"),
    ("lambda_cov", "coverage loss weight"),
    ("pointing_loss", "phase-2 pointing penalty: none, naive or word_prior"),
    ("lambda_p", "pointing loss weight"),
    ("beam_size", "beam width"),
    ("max_len", "longest decoded summary"),
    ("min_len", "shortest decoded summary, stop token included"),
    ("length_normalize", "rank finished beams by log-probability per token (true/false)"),
    ("novelty_base", "novelty measured against: source or reference"),
    ("novelty_semantics", "novelty n-gram counting: set or multiset"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::invalid(format!("`{key}` must be true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "output_dir" => self.output_dir = v.into(),
            "data_dir" => self.data_dir = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "phase1_checkpoint" => self.phase1_checkpoint = v.into(),
            "init_checkpoint" => self.init_checkpoint = v.into(),
            "vocab" => self.vocab = v.into(),
            "priors" => self.priors = v.into(),
            "decode_split" => {
                if !matches!(v, "train" | "val" | "test") {
                    return Err(Error::invalid(format!("decode_split must be train, val or test, got `{v}`")));
                }
                self.decode_split = v.into()
            }
            "n_examples" => self.n_examples = parse(key, v)?,
            "vocab_core_size" => self.vocab_core_size = parse(key, v)?,
            "entity_rate" => self.entity_rate = parse(key, v)?,
            "entity_pool" => self.entity_pool = parse(key, v)?,
            "synonym_fraction" => self.synonym_fraction = parse(key, v)?,
            "synonym_rate" => self.synonym_rate = parse(key, v)?,
            "source_len_min" => self.source_len_min = parse(key, v)?,
            "source_len_max" => self.source_len_max = parse(key, v)?,
            "summary_len" => self.summary_len = parse(key, v)?,
            "zipf_exponent" => self.zipf_exponent = parse(key, v)?,
            "period_rate" => self.period_rate = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "max_src_len" => self.max_src_len = parse(key, v)?,
            "max_tgt_len" => self.max_tgt_len = parse(key, v)?,
            "emb_dim" => self.emb_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "head_count" => self.head_count = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "adagrad_init_accumulator" => self.adagrad_init_accumulator = parse(key, v)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, v)?,
            "base_steps" => self.base_steps = parse(key, v)?,
            "extension_steps" => self.extension_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "dropout_rate" => self.dropout_rate = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "coverage" => self.coverage = parse_bool(key, v)?,
            "lambda_cov" => self.lambda_cov = parse(key, v)?,
            "pointing_loss" => self.pointing_loss = v.parse()?,
            "lambda_p" => self.lambda_p = parse(key, v)?,
            "beam_size" => self.beam_size = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "min_len" => self.min_len = parse(key, v)?,
            "length_normalize" => self.length_normalize = parse_bool(key, v)?,
            "novelty_base" => {
                self.novelty_base = match v {
                    "source" => NoveltyBase::Source,
                    "reference" => NoveltyBase::Reference,
                    _ => return Err(Error::invalid(format!("novelty_base must be source or reference, got `{v}`"))),
                }
            }
            "novelty_semantics" => {
                self.novelty_semantics = match v {
                    "set" => NgramSemantics::Set,
                    "multiset" => NgramSemantics::Multiset,
                    _ => return Err(Error::invalid(format!("novelty_semantics must be set or multiset, got `{v}`"))),
                }
            }
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let b = |x: bool| if x { "true" } else { "false" }.to_string();
        let p = |x: &Path| x.display().to_string();
        Some(match key {
            "seed" => self.seed.to_string(),
            "output_dir" => p(&self.output_dir),
            "data_dir" => p(&self.data_dir),
            "checkpoint" => p(&self.checkpoint),
            "phase1_checkpoint" => p(&self.phase1_checkpoint),
            "init_checkpoint" => p(&self.init_checkpoint),
            "vocab" => p(&self.vocab),
            "priors" => p(&self.priors),
            "decode_split" => self.decode_split.clone(),
            "n_examples" => self.n_examples.to_string(),
            "vocab_core_size" => self.vocab_core_size.to_string(),
            "entity_rate" => self.entity_rate.to_string(),
            "entity_pool" => self.entity_pool.to_string(),
            "synonym_fraction" => self.synonym_fraction.to_string(),
            "synonym_rate" => self.synonym_rate.to_string(),
            "source_len_min" => self.source_len_min.to_string(),
            "source_len_max" => self.source_len_max.to_string(),
            "summary_len" => self.summary_len.to_string(),
            "zipf_exponent" => self.zipf_exponent.to_string(),
            "period_rate" => self.period_rate.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "max_src_len" => self.max_src_len.to_string(),
            "max_tgt_len" => self.max_tgt_len.to_string(),
            "emb_dim" => self.emb_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "head_count" => self.head_count.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "adagrad_init_accumulator" => self.adagrad_init_accumulator.to_string(),
            "max_grad_norm" => self.max_grad_norm.to_string(),
            "base_steps" => self.base_steps.to_string(),
            "extension_steps" => self.extension_steps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "dropout_rate" => self.dropout_rate.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "coverage" => b(self.coverage),
            "lambda_cov" => self.lambda_cov.to_string(),
            "pointing_loss" => self.pointing_loss.as_str().to_string(),
            "lambda_p" => self.lambda_p.to_string(),
            "beam_size" => self.beam_size.to_string(),
            "max_len" => self.max_len.to_string(),
            "min_len" => self.min_len.to_string(),
            "length_normalize" => b(self.length_normalize),
            "novelty_base" => match self.novelty_base {
                NoveltyBase::Source => "source".into(),
                NoveltyBase::Reference => "reference".into(),
            },
            "novelty_semantics" => match self.novelty_semantics {
                NgramSemantics::Set => "set".into(),
                NgramSemantics::Multiset => "multiset".into(),
            },
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown or repeated keys are errors.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::parse(origin, i + 1, format!("duplicate key `{k}`")));
            }
            self.set(k, v).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }

    /// Every key, one per line, each preceded by its description.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, doc) in KEYS {
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        self.model_config(self.vocab_size).validate()?;
        self.train_config().validate()?;
        self.beam_config().validate()?;
        if self.max_src_len == 0 || self.max_tgt_len == 0 {
            return Err(Error::invalid("max_src_len and max_tgt_len must be positive"));
        }
        if self.n_examples == 0 {
            return Err(Error::invalid("n_examples must be positive"));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_dir.join(p)
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.resolve(&self.data_dir)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.resolve(&self.checkpoint)
    }

    pub fn phase1_path(&self) -> PathBuf {
        self.resolve(&self.phase1_checkpoint)
    }

    pub fn init_path(&self) -> Option<PathBuf> {
        (!self.init_checkpoint.as_os_str().is_empty()).then(|| self.resolve(&self.init_checkpoint))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.resolve(&self.vocab)
    }

    pub fn priors_path(&self) -> PathBuf {
        self.resolve(&self.priors)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut s = SynthConfig::new(self.seed, self.n_examples, self.synonym_fraction);
        s.vocab_core_size = self.vocab_core_size;
        s.synonym_map = crate::data::synonym_map(self.vocab_core_size, self.synonym_fraction, self.seed);
        s.synonym_rate = self.synonym_rate;
        s.entity_rate = self.entity_rate;
        s.entity_pool = self.entity_pool;
        s.source_len_min = self.source_len_min;
        s.source_len_max = self.source_len_max;
        s.summary_len = self.summary_len;
        s.zipf_exponent = self.zipf_exponent;
        s.period_rate = self.period_rate;
        s.val_fraction = self.val_fraction;
        s.test_fraction = self.test_fraction;
        s
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            emb_dim: self.emb_dim,
            hidden_dim: self.hidden_dim,
            head_count: self.head_count,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_cov: self.lambda_cov,
            lambda_p: self.lambda_p,
            mode: self.pointing_loss,
            coverage_on: self.coverage,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            adagrad_init_accumulator: self.adagrad_init_accumulator,
            max_grad_norm: self.max_grad_norm,
            base_steps: self.base_steps,
            extension_steps: self.extension_steps,
            batch_size: self.batch_size,
            seed: self.seed,
            loss: self.loss_config(),
            head_count: self.head_count,
            dropout_rate: self.dropout_rate,
            eval_every: self.eval_every,
        }
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam_size,
            max_len: self.max_len,
            min_len: self.min_len,
            length_normalize: self.length_normalize,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            novelty_base: self.novelty_base,
            semantics: self.novelty_semantics,
        }
    }

    /// Coverage attention is active at decode time only when the model was
    /// trained with it in phase 2.
    pub fn decode_with_coverage(&self) -> bool {
        self.coverage && self.extension_steps > 0
    }
}
