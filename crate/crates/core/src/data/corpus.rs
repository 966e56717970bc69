use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One raw source/target pair, tokens as written in the corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Example {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl Example {
    pub fn new(source: &str, target: &str) -> Self {
        Self {
            source: source.split_whitespace().map(str::to_owned).collect(),
            target: target.split_whitespace().map(str::to_owned).collect(),
        }
    }
}

/// Parses `source tokens<TAB>target tokens` lines. `origin` only labels errors.
pub fn parse_corpus(text: &str, origin: &Path) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, i + 1, "missing TAB between source and target"))?;
        if tgt.contains('\t') {
            return Err(Error::parse(origin, i + 1, "more than one TAB"));
        }
        out.push(Example::new(src, tgt));
    }
    Ok(out)
}

pub fn format_corpus(examples: &[Example]) -> String {
    let mut s = String::new();
    for ex in examples {
        let _ = writeln!(s, "{}\t{}", ex.source.join(" "), ex.target.join(" "));
    }
    s
}

pub fn load_corpus(path: &Path) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, path)
}

pub fn save_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    std::fs::write(path, format_corpus(examples))?;
    Ok(())
}
