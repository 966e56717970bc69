use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const STOP: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const START_TOKEN: &str = "<s>";
pub const STOP_TOKEN: &str = "</s>";

const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, START_TOKEN, STOP_TOKEN];

/// Fixed generation vocabulary. Ids are dense; the four reserved tokens
/// always occupy ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `size - 4` most frequent tokens, ties broken lexicographically.
    pub fn build<'a, I, S>(corpus: I, size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        if size <= RESERVED.len() {
            return Err(Error::invalid(format!("vocabulary size {size} must exceed {}", RESERVED.len())));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_any = false;
        for seq in corpus {
            for tok in seq {
                seen_any = true;
                if !RESERVED.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if !seen_any {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = RESERVED
            .iter()
            .copied()
            .chain(ranked.into_iter().take(size - RESERVED.len()).map(|(t, _)| t))
            .map(str::to_owned)
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    /// Wraps an explicit id-ordered token list. The first four entries must
    /// be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().zip(RESERVED).all(|(a, b)| a == b));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        if tokens.len() <= RESERVED.len() || !tokens.iter().zip(RESERVED).all(|(a, b)| a == b) {
            return Err(Error::invalid("vocabulary file must start with the reserved tokens"));
        }
        Ok(Self::from_tokens(tokens))
    }
}
