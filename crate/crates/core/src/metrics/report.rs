use std::fmt::Write as _;
use std::path::Path;

use super::{
    duplication, format_sig, novelty, rouge_l, rouge_n, sentence_duplication, sentence_novelty, NgramSemantics,
};
use crate::decoder::TraceEntry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoveltyBase {
    #[default]
    Source,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub novelty_base: NoveltyBase,
    pub semantics: NgramSemantics,
}

/// Corpus means. ROUGE in [0, 1], percentages in [0, 100].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub examples: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub novel_ngram_pct: [f64; 4],
    pub novel_sentence_pct: f64,
    pub dup_ngram_pct: [f64; 4],
    pub dup_sentence_pct: f64,
    pub avg_pgen: Option<f64>,
    pub mean_length: f64,
}

impl MetricReport {
    /// `(name, value)` pairs in report order.
    pub fn entries(&self) -> Vec<(String, Option<f64>)> {
        let mut v = vec![
            ("examples".to_string(), Some(self.examples as f64)),
            ("rouge1".into(), Some(self.rouge1)),
            ("rouge2".into(), Some(self.rouge2)),
            ("rougeL".into(), Some(self.rouge_l)),
        ];
        for (n, x) in self.novel_ngram_pct.iter().enumerate() {
            v.push((format!("novel_{}gram_pct", n + 1), Some(*x)));
        }
        v.push(("novel_sentence_pct".into(), Some(self.novel_sentence_pct)));
        for (n, x) in self.dup_ngram_pct.iter().enumerate() {
            v.push((format!("dup_{}gram_pct", n + 1), Some(*x)));
        }
        v.push(("dup_sentence_pct".into(), Some(self.dup_sentence_pct)));
        v.push(("avg_pgen".into(), self.avg_pgen));
        v.push(("mean_length".into(), Some(self.mean_length)));
        v
    }

    /// `metric<TAB>value` lines; a missing p_gen prints as `-`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}\t{}", v.map_or_else(|| "-".into(), format_sig));
        }
        out
    }

    pub fn parse_tsv(text: &str, origin: &Path) -> Result<Vec<(String, Option<f64>)>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "metric\tvalue")) => {}
            _ => return Err(Error::parse(origin, 1, "expected header `metric<TAB>value`")),
        }
        lines
            .map(|(i, line)| {
                let (k, v) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::parse(origin, i + 1, "expected `metric<TAB>value`"))?;
                let v = if v == "-" {
                    None
                } else {
                    Some(v.parse().map_err(|_| Error::parse(origin, i + 1, "bad value"))?)
                };
                Ok((k.to_string(), v))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

pub const SCORES_HEADER: &str = "rouge1\trouge2\trougeL";

pub fn format_scores(scores: &[ExampleScores]) -> String {
    let mut out = format!("{SCORES_HEADER}\n");
    for s in scores {
        let _ = writeln!(out, "{:.10e}\t{:.10e}\t{:.10e}", s.rouge1, s.rouge2, s.rouge_l);
    }
    out
}

pub fn parse_scores(text: &str, origin: &Path) -> Result<Vec<ExampleScores>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(SCORES_HEADER) {
        return Err(Error::parse(origin, 1, format!("expected header `{SCORES_HEADER}`")));
    }
    lines
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split('\t')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(origin, i + 1, "bad score"))?;
            match v[..] {
                [rouge1, rouge2, rouge_l] => Ok(ExampleScores { rouge1, rouge2, rouge_l }),
                _ => Err(Error::parse(origin, i + 1, "expected three scores")),
            }
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Aggregates every metric over aligned summaries, references and sources.
/// p_gen is averaged over all traced tokens.
pub fn evaluate<S: AsRef<str>>(
    summaries: &[Vec<S>],
    references: &[Vec<S>],
    sources: &[Vec<S>],
    traces: Option<&[Vec<TraceEntry>]>,
    opts: EvalOptions,
) -> Result<(MetricReport, Vec<ExampleScores>)> {
    let n = summaries.len();
    if references.len() != n || sources.len() != n || traces.is_some_and(|t| t.len() != n) {
        return Err(Error::Misaligned(format!(
            "line counts differ: {n} summaries, {} references, {} sources{}",
            references.len(),
            sources.len(),
            traces.map_or(String::new(), |t| format!(", {} traced examples", t.len()))
        )));
    }
    let scores: Vec<ExampleScores> = summaries
        .iter()
        .zip(references)
        .map(|(s, r)| ExampleScores {
            rouge1: rouge_n(s, r, 1),
            rouge2: rouge_n(s, r, 2),
            rouge_l: rouge_l(s, r),
        })
        .collect();
    let bases: Vec<&Vec<S>> = match opts.novelty_base {
        NoveltyBase::Source => sources.iter().collect(),
        NoveltyBase::Reference => references.iter().collect(),
    };
    let mut novel = [0.0; 4];
    let mut dup = [0.0; 4];
    for k in 0..4 {
        novel[k] = mean(summaries.iter().zip(&bases).map(|(s, b)| novelty(s, b, k + 1, opts.semantics)));
        dup[k] = mean(summaries.iter().map(|s| duplication(s, k + 1)));
    }
    let avg_pgen = traces.map(|t| {
        let all: Vec<f64> = t.iter().flatten().map(|e| e.p_gen).collect();
        mean(all.into_iter())
    });
    let report = MetricReport {
        examples: n,
        rouge1: mean(scores.iter().map(|s| s.rouge1)),
        rouge2: mean(scores.iter().map(|s| s.rouge2)),
        rouge_l: mean(scores.iter().map(|s| s.rouge_l)),
        novel_ngram_pct: novel,
        novel_sentence_pct: mean(summaries.iter().zip(&bases).map(|(s, b)| sentence_novelty(s, b))),
        dup_ngram_pct: dup,
        dup_sentence_pct: mean(summaries.iter().map(|s| sentence_duplication(s))),
        avg_pgen,
        mean_length: mean(summaries.iter().map(|s| s.len() as f64)),
    };
    Ok((report, scores))
}
