use std::path::Path;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Corpus frequency of each generation-vocabulary word. Tokens outside the
/// vocabulary count toward the denominator but have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct WordPrior {
    probs: Vec<f64>,
}

impl WordPrior {
    pub fn compute<'a, I, S>(corpus: I, vocab: &Vocabulary) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        let mut counts = vec![0u64; vocab.len()];
        let mut total = 0u64;
        for seq in corpus {
            for tok in seq {
                total += 1;
                if vocab.contains(tok) {
                    counts[vocab.lookup(tok)] += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::invalid("word priors need a non-empty corpus"));
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self { probs })
    }

    pub fn zeros(vocab_size: usize) -> Self {
        Self {
            probs: vec![0.0; vocab_size],
        }
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    /// Prior of an extended id; 0 for anything outside the vocabulary.
    pub fn get(&self, id: usize) -> f64 {
        self.probs.get(id).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `token<TAB>probability` per vocabulary entry, 17 significant digits.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut s = String::new();
        for (tok, p) in vocab.tokens().iter().zip(&self.probs) {
            s.push_str(&format!("{tok}\t{p:.16e}\n"));
        }
        s
    }

    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text(vocab))?;
        Ok(())
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut probs = vec![0.0; vocab.len()];
        for (i, line) in text.lines().enumerate() {
            let (tok, p) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected token<TAB>probability"))?;
            let p: f64 = p
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad probability `{p}`")))?;
            if vocab.contains(tok) {
                probs[vocab.lookup(tok)] = p;
            }
        }
        Ok(Self { probs })
    }
}
