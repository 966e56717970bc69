//! Vocabulary, example encoding, word priors, corpus files and the synthetic
//! task generator.

mod corpus;
mod example;
mod prior;
mod synth;
mod vocab;

pub use corpus::{format_corpus, load_corpus, parse_corpus, save_corpus, Example};
pub use example::{encode_example, EncodedExample};
pub use prior::WordPrior;
pub use synth::{
    core_word, entity_word, generate_synthetic_corpus, synonym_map, synonym_word, write_splits, Splits,
    SynthConfig, PERIOD,
};
pub use vocab::{Vocabulary, PAD, PAD_TOKEN, START, START_TOKEN, STOP, STOP_TOKEN, UNK, UNK_TOKEN};

/// Builds the generation vocabulary from sources and targets of `examples`.
pub fn build_vocab(examples: &[Example], size: usize) -> crate::Result<Vocabulary> {
    Vocabulary::build(token_streams(examples), size)
}

/// Word priors counted over sources and targets of `examples`.
pub fn compute_word_priors(examples: &[Example], vocab: &Vocabulary) -> crate::Result<WordPrior> {
    WordPrior::compute(token_streams(examples), vocab)
}

fn token_streams(examples: &[Example]) -> impl Iterator<Item = impl Iterator<Item = &str>> {
    examples
        .iter()
        .map(|e| e.source.iter().chain(&e.target).map(String::as_str))
}

pub fn encode_all(examples: &[Example], vocab: &Vocabulary, max_src: usize, max_tgt: usize) -> crate::Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| encode_example(&e.source, &e.target, vocab, max_src, max_tgt))
        .collect()
}
