use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{save_corpus, Example};
use crate::error::{Error, Result};

pub const PERIOD: &str = ".";

/// Seeded generator for a lead-summarization task that needs both output
/// mechanisms.
///
/// Sources mix Zipf-distributed core words, sentence periods, and entity
/// tokens drawn from a pool large enough that most fall outside any small
/// vocabulary. A target keeps the first `summary_len` content tokens of its
/// source, entities verbatim and core words passed through `synonym_map`.
/// Replacement words never occur in sources, so they can only be generated.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_examples: usize,
    pub vocab_core_size: usize,
    /// Per-position probability that a source token is an entity.
    pub entity_rate: f64,
    pub entity_pool: usize,
    pub synonym_map: BTreeMap<String, String>,
    /// Probability that an occurrence of a mapped word is replaced; below 1
    /// a target may either copy the word or paraphrase it.
    pub synonym_rate: f64,
    pub source_len_min: usize,
    pub source_len_max: usize,
    pub summary_len: usize,
    pub zipf_exponent: f64,
    /// Per-position probability of a sentence break among non-entity tokens.
    pub period_rate: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::new(1, 2000, 0.25)
    }
}

pub fn core_word(i: usize) -> String {
    format!("w{i:03}")
}

pub fn synonym_word(i: usize) -> String {
    format!("s{i:03}")
}

pub fn entity_word(i: usize) -> String {
    format!("e{i:05}")
}

impl SynthConfig {
    /// Desk-scale defaults with a synonym for a seeded `synonym_fraction`
    /// of the core words.
    pub fn new(seed: u64, n_examples: usize, synonym_fraction: f64) -> Self {
        let mut cfg = Self {
            seed,
            n_examples,
            vocab_core_size: 120,
            entity_rate: 0.15,
            entity_pool: 5000,
            synonym_map: BTreeMap::new(),
            synonym_rate: 1.0,
            source_len_min: 30,
            source_len_max: 50,
            summary_len: 12,
            zipf_exponent: 1.0,
            period_rate: 0.12,
            val_fraction: 0.05,
            test_fraction: 0.1,
        };
        cfg.synonym_map = synonym_map(cfg.vocab_core_size, synonym_fraction, seed);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if self.vocab_core_size == 0 || self.entity_pool == 0 {
            return Err(Error::invalid("vocab_core_size and entity_pool must be positive"));
        }
        if !frac(self.synonym_rate) {
            return Err(Error::invalid("synonym_rate must lie in [0, 1]"));
        }
        if !frac(self.entity_rate) || !(0.0..1.0).contains(&self.period_rate) {
            return Err(Error::invalid("entity_rate must lie in [0, 1] and period_rate in [0, 1)"));
        }
        if self.source_len_min == 0 || self.source_len_min > self.source_len_max {
            return Err(Error::invalid("need 1 <= source_len_min <= source_len_max"));
        }
        if self.summary_len == 0 {
            return Err(Error::invalid("summary_len must be positive"));
        }
        if !frac(self.val_fraction) || !frac(self.test_fraction) || self.val_fraction + self.test_fraction > 1.0 {
            return Err(Error::invalid("split fractions must be in [0, 1] and sum to at most 1"));
        }
        Ok(())
    }
}

/// Seeded choice of which core words get a replacement.
pub fn synonym_map(core_size: usize, fraction: f64, seed: u64) -> BTreeMap<String, String> {
    let mut idx: Vec<usize> = (0..core_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5359_4e4f_4e59_4d53);
    idx.shuffle(&mut rng);
    let n = (fraction.clamp(0.0, 1.0) * core_size as f64).round() as usize;
    idx[..n]
        .iter()
        .map(|&i| (core_word(i), synonym_word(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<Splits> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights: Vec<f64> = (0..cfg.vocab_core_size)
        .map(|r| 1.0 / ((r + 1) as f64).powf(cfg.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;

    let mut para_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    para_rng.set_stream(1);
    let mut all = Vec::with_capacity(cfg.n_examples);
    for _ in 0..cfg.n_examples {
        let len = rng.gen_range(cfg.source_len_min..=cfg.source_len_max);
        let mut source: Vec<String> = Vec::with_capacity(len);
        while source.len() < len {
            if rng.gen::<f64>() < cfg.entity_rate {
                source.push(entity_word(rng.gen_range(0..cfg.entity_pool)));
                continue;
            }
            let after_break = source.last().map_or(true, |t| t == PERIOD);
            if rng.gen::<f64>() < cfg.period_rate && !after_break {
                source.push(PERIOD.to_owned());
            } else {
                source.push(core_word(zipf.sample(&mut rng)));
            }
        }
        let target = summarize(&source, cfg, &mut para_rng);
        all.push(Example { source, target });
    }

    let n_test = (cfg.test_fraction * cfg.n_examples as f64).round() as usize;
    let n_val = (cfg.val_fraction * cfg.n_examples as f64).round() as usize;
    let n_train = cfg.n_examples.saturating_sub(n_test + n_val);
    let test = all.split_off(n_train + n_val);
    let val = all.split_off(n_train);
    Ok(Splits { train: all, val, test })
}

fn summarize(source: &[String], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut target: Vec<String> = Vec::new();
    let mut content = 0;
    for tok in source {
        if content == cfg.summary_len {
            break;
        }
        if tok == PERIOD {
            if target.last().is_some_and(|t| t != PERIOD) {
                target.push(tok.clone());
            }
            continue;
        }
        content += 1;
        let replaced = match cfg.synonym_map.get(tok) {
            Some(syn) if cfg.synonym_rate >= 1.0 || rng.gen::<f64>() < cfg.synonym_rate => syn,
            _ => tok,
        };
        target.push(replaced.clone());
    }
    if target.last().is_some_and(|t| t != PERIOD) {
        target.push(PERIOD.to_owned());
    }
    target
}

/// Writes `train.tsv`, `val.tsv` and `test.tsv` under `dir`.
pub fn write_splits(splits: &Splits, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_corpus(&dir.join("train.tsv"), &splits.train)?;
    save_corpus(&dir.join("val.tsv"), &splits.val)?;
    save_corpus(&dir.join("test.tsv"), &splits.test)?;
    Ok(())
}
