//! ROUGE, novelty, duplication, head KL and the signed-rank test.

mod report;
mod wilcoxon;

use std::collections::{HashMap, HashSet};

pub use report::{
    evaluate, format_scores, parse_scores, EvalOptions, ExampleScores, MetricReport, NoveltyBase,
};
pub use wilcoxon::{wilcoxon, WilcoxonMethod, WilcoxonResult};

use crate::autodiff::LOG_FLOOR;
use crate::data::PERIOD;
use crate::error::{Error, Result};

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> impl Iterator<Item = Vec<&str>> {
    let n = n.max(1);
    tokens.windows(n).map(|w| w.iter().map(AsRef::as_ref).collect())
}

fn counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    for g in ngrams(tokens, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

fn f1(overlap: usize, cand: usize, reference: usize) -> f64 {
    if overlap == 0 || cand == 0 || reference == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1 with clipped n-gram counts.
pub fn rouge_n<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T], n: usize) -> f64 {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let c = counts(candidate, n);
    let r = counts(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    f1(
        overlap,
        candidate.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

fn lcs_len<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x.as_ref() == y.as_ref() { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T]) -> f64 {
    f1(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NgramSemantics {
    /// Distinct n-grams.
    #[default]
    Set,
    /// Every n-gram occurrence.
    Multiset,
}

/// Percentage of the summary's n-grams that never occur in `source`.
pub fn novelty<S: AsRef<str>, T: AsRef<str>>(summary: &[S], source: &[T], n: usize, sem: NgramSemantics) -> f64 {
    assert!(n >= 1, "novelty needs n >= 1");
    let known: HashSet<Vec<&str>> = ngrams(source, n).collect();
    let (novel, total) = match sem {
        NgramSemantics::Set => {
            let distinct: HashSet<Vec<&str>> = ngrams(summary, n).collect();
            (distinct.iter().filter(|g| !known.contains(*g)).count(), distinct.len())
        }
        NgramSemantics::Multiset => {
            let all: Vec<Vec<&str>> = ngrams(summary, n).collect();
            (all.iter().filter(|g| !known.contains(*g)).count(), all.len())
        }
    };
    pct(novel, total)
}

fn pct(part: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * part as f64 / total as f64
    }
}

/// Token runs between period tokens; empty runs are skipped.
pub fn sentences<S: AsRef<str>>(tokens: &[S]) -> Vec<Vec<&str>> {
    tokens
        .split(|t| t.as_ref() == PERIOD)
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(AsRef::as_ref).collect())
        .collect()
}

fn contains_run(haystack: &[&str], needle: &[&str]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Percentage of summary sentences that do not appear verbatim in `source`.
pub fn sentence_novelty<S: AsRef<str>, T: AsRef<str>>(summary: &[S], source: &[T]) -> f64 {
    let src: Vec<&str> = source.iter().map(AsRef::as_ref).collect();
    let sents = sentences(summary);
    pct(sents.iter().filter(|s| !contains_run(&src, s)).count(), sents.len())
}

/// `100 (1 - distinct / total)` over the summary's n-grams.
pub fn duplication<S: AsRef<str>>(summary: &[S], n: usize) -> f64 {
    assert!(n >= 1, "duplication needs n >= 1");
    let all: Vec<Vec<&str>> = ngrams(summary, n).collect();
    let distinct: HashSet<&Vec<&str>> = all.iter().collect();
    pct(all.len() - distinct.len(), all.len())
}

/// Sentence analogue of [`duplication`].
pub fn sentence_duplication<S: AsRef<str>>(summary: &[S]) -> f64 {
    let sents = sentences(summary);
    let distinct: HashSet<&Vec<&str>> = sents.iter().collect();
    pct(sents.len() - distinct.len(), sents.len())
}

/// `Σ p_i (log p_i - log q_i)` with both logs clamped.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| if a == 0.0 { 0.0 } else { a * (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()) })
        .sum()
}

/// Attention for one example: per step, per head, one row over source positions.
pub type AttentionTrace = Vec<Vec<Vec<f64>>>;

/// Mean pairwise head KL over all steps of all examples. With `other`, an
/// extra column compares each head of `traces` with the sole head of `other`.
pub fn kl_matrix(traces: &[AttentionTrace], other: Option<&[AttentionTrace]>) -> Result<Vec<Vec<f64>>> {
    let heads = traces
        .iter()
        .flat_map(|ex| ex.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::Misaligned("no attention steps".into()))?;
    if let Some(o) = other {
        if o.len() != traces.len() {
            return Err(Error::Misaligned(format!("{} examples vs {}", traces.len(), o.len())));
        }
    }
    let cols = heads + usize::from(other.is_some());
    let mut sum = vec![vec![0.0; cols]; heads];
    let mut steps = 0usize;
    for (e, ex) in traces.iter().enumerate() {
        let ob = other.map(|o| &o[e]);
        if let Some(ob) = ob {
            if ob.len() != ex.len() {
                return Err(Error::Misaligned(format!("example {e}: {} steps vs {}", ex.len(), ob.len())));
            }
        }
        for (t, step) in ex.iter().enumerate() {
            if step.len() != heads {
                return Err(Error::Misaligned(format!("example {e} step {t}: {} heads, expected {heads}", step.len())));
            }
            let width = step[0].len();
            if step.iter().any(|row| row.len() != width) {
                return Err(Error::Misaligned(format!("example {e} step {t}: ragged attention rows")));
            }
            for i in 0..heads {
                for j in 0..heads {
                    sum[i][j] += kl_divergence(&step[i], &step[j]);
                }
            }
            if let Some(ob) = ob {
                let single = match ob[t].as_slice() {
                    [row] if row.len() == width => row,
                    _ => return Err(Error::Misaligned(format!("example {e} step {t}: second trace must have one head of width {width}"))),
                };
                for i in 0..heads {
                    sum[i][heads] += kl_divergence(&step[i], single);
                }
            }
            steps += 1;
        }
    }
    Ok(sum
        .into_iter()
        .map(|row| row.into_iter().map(|x| x / steps as f64).collect())
        .collect())
}

/// Tab-separated matrix with a header row of head labels.
pub fn format_kl_matrix(m: &[Vec<f64>]) -> String {
    let heads = m.len();
    let mut header: Vec<String> = (0..heads).map(|j| format!("head{j}")).collect();
    if m.first().is_some_and(|r| r.len() > heads) {
        header.push("single".into());
    }
    let mut out = format!("\t{}\n", header.join("\t"));
    for (i, row) in m.iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|&x| format_sig(x)).collect();
        out.push_str(&format!("head{i}\t{}\n", vals.join("\t")));
    }
    out
}

/// Six significant digits, trailing zeros trimmed.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if !(-4..=5).contains(&exp) {
        return sci;
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
