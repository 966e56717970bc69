use std::collections::HashMap;

use super::vocab::{Vocabulary, START, STOP, UNK};
use crate::error::{Error, Result};

/// A source/target pair mapped onto the generation vocabulary plus the
/// document's own out-of-vocabulary tokens.
///
/// Extended ids at or above `vocab_size` index into `oov_tokens`. Target
/// tokens that are OOV and absent from the source map to UNK: neither the
/// generator nor the pointer can produce them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub source_ids: Vec<usize>,
    pub source_ext_ids: Vec<usize>,
    pub oov_tokens: Vec<String>,
    pub target_ids: Vec<usize>,
    pub target_ext_ids: Vec<usize>,
    pub vocab_size: usize,
    pub source_len_before: usize,
    pub target_len_before: usize,
}

impl EncodedExample {
    pub fn ext_vocab_size(&self) -> usize {
        self.vocab_size + self.oov_tokens.len()
    }

    pub fn source_len(&self) -> usize {
        self.source_ids.len()
    }

    /// Decoder inputs for teacher forcing: `START` then the target ids, with
    /// extended OOVs already folded to UNK.
    pub fn decoder_inputs(&self) -> Vec<usize> {
        std::iter::once(START).chain(self.target_ids.iter().copied()).collect()
    }

    /// Supervision targets: the extended target ids followed by `STOP`.
    pub fn decoder_targets(&self) -> Vec<usize> {
        self.target_ext_ids.iter().copied().chain(std::iter::once(STOP)).collect()
    }

    /// Maps an extended id back to its surface token.
    pub fn token<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> Option<&'a str> {
        if id < self.vocab_size {
            vocab.token(id)
        } else {
            self.oov_tokens.get(id - self.vocab_size).map(String::as_str)
        }
    }
}

pub fn encode_example<S: AsRef<str>>(
    src: &[S],
    tgt: &[S],
    vocab: &Vocabulary,
    max_src: usize,
    max_tgt: usize,
) -> Result<EncodedExample> {
    if max_src == 0 || max_tgt == 0 {
        return Err(Error::invalid("max_src and max_tgt must be at least 1"));
    }
    let src_trunc = &src[..src.len().min(max_src)];
    let tgt_trunc = &tgt[..tgt.len().min(max_tgt)];
    if src_trunc.is_empty() {
        return Err(Error::invalid("empty source after truncation"));
    }
    let v = vocab.len();
    let mut oov_tokens: Vec<String> = Vec::new();
    let mut oov_index: HashMap<&str, usize> = HashMap::new();
    let mut source_ids = Vec::with_capacity(src_trunc.len());
    let mut source_ext_ids = Vec::with_capacity(src_trunc.len());
    for tok in src_trunc {
        let tok = tok.as_ref();
        let id = vocab.lookup(tok);
        source_ids.push(id);
        if id == UNK && !vocab.contains(tok) {
            let ext = *oov_index.entry(tok).or_insert_with(|| {
                oov_tokens.push(tok.to_owned());
                v + oov_tokens.len() - 1
            });
            source_ext_ids.push(ext);
        } else {
            source_ext_ids.push(id);
        }
    }
    let mut target_ids = Vec::with_capacity(tgt_trunc.len());
    let mut target_ext_ids = Vec::with_capacity(tgt_trunc.len());
    for tok in tgt_trunc {
        let tok = tok.as_ref();
        let id = vocab.lookup(tok);
        target_ids.push(id);
        if id == UNK && !vocab.contains(tok) {
            target_ext_ids.push(oov_index.get(tok).copied().unwrap_or(UNK));
        } else {
            target_ext_ids.push(id);
        }
    }
    Ok(EncodedExample {
        source_ids,
        source_ext_ids,
        oov_tokens,
        target_ids,
        target_ext_ids,
        vocab_size: v,
        source_len_before: src.len(),
        target_len_before: tgt.len(),
    })
}
