//! Beam search over the extended vocabulary, with p_gen and attention traces.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{Graph, Var, LOG_FLOOR};
use crate::data::{EncodedExample, Vocabulary, START, STOP};
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncoderOutput, ExtendedSource, ModelConfig, ModelParams, Network, ParamSet, StepFlags};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub min_len: usize,
    /// Rank finished hypotheses by log-probability per token.
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            max_len: 100,
            min_len: 1,
            length_normalize: true,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid("need beam_size >= 1 and 1 <= max_len >= min_len"));
        }
        Ok(())
    }
}

/// What a decoder step reports besides the next-token distribution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepTrace {
    pub p_gen: f64,
    /// One row per head; row 0 is the pointer head.
    pub attention: Vec<Vec<f64>>,
}

/// Anything that can be stepped token by token.
pub trait StepModel {
    type State: Clone;

    fn start(&mut self) -> Self::State;

    /// Distribution over the extended vocabulary after feeding `prev`.
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State, StepTrace)>;
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    /// Emitted extended ids, the stop token included when finished by it.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub state: S,
    pub p_gen: Vec<f64>,
    pub attention: Vec<Vec<Vec<f64>>>,
    pub finished: bool,
}

impl<S> Hypothesis<S> {
    fn last(&self) -> usize {
        self.tokens.last().copied().unwrap_or(START)
    }

    pub fn score(&self, length_normalize: bool) -> f64 {
        if length_normalize && !self.tokens.is_empty() {
            self.logprob / self.tokens.len() as f64
        } else {
            self.logprob
        }
    }

    /// Tokens before the stop token.
    pub fn summary_ids(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&STOP) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn log_prob(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Indices of the `k` largest entries, ties to the lower index.
fn top_k(dist: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..dist.len()).filter(|&i| Some(i) != exclude).collect();
    ids.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

/// Beam search. Each live hypothesis proposes its `beam_size` best
/// continuations; the best `beam_size` non-final candidates stay live and
/// candidates ending in the stop token (or reaching `max_len`) retire.
///
/// Without length normalization the search runs until no live hypothesis
/// can still beat the best finished one; with it, until `beam_size`
/// hypotheses have finished.
pub fn beam_search<M: StepModel>(model: &mut M, cfg: &BeamConfig) -> Result<Hypothesis<M::State>> {
    cfg.validate()?;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        state: model.start(),
        p_gen: Vec::new(),
        attention: Vec::new(),
        finished: false,
    }];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();
    for t in 0..cfg.max_len {
        let mut candidates = Vec::new();
        for hyp in &live {
            let (dist, state, trace) = model.step(&hyp.state, hyp.last())?;
            let exclude = (t + 1 < cfg.min_len).then_some(STOP);
            for id in top_k(&dist, cfg.beam_size, exclude) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(id);
                let mut p_gen = hyp.p_gen.clone();
                p_gen.push(trace.p_gen);
                let mut attention = hyp.attention.clone();
                attention.push(trace.attention.clone());
                candidates.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + log_prob(dist[id]),
                    state: state.clone(),
                    p_gen,
                    attention,
                    finished: id == STOP || t + 1 == cfg.max_len,
                });
            }
        }
        // Stable sort keeps parent order, then token order, among equal scores.
        candidates.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        live.clear();
        for c in candidates {
            if live.len() == cfg.beam_size {
                break;
            }
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
        let done = if cfg.length_normalize {
            finished.len() >= cfg.beam_size
        } else {
            let best_done = finished.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            best_done >= best_live
        };
        if done {
            break;
        }
    }
    let pool = if finished.is_empty() { live } else { finished };
    let mut best: Option<Hypothesis<M::State>> = None;
    for h in pool {
        if best.as_ref().map_or(true, |b| h.score(cfg.length_normalize) > b.score(cfg.length_normalize)) {
            best = Some(h);
        }
    }
    Ok(best.expect("beam search keeps at least one hypothesis"))
}

/// Stepwise argmax until the stop token or `max_len`.
pub fn greedy<M: StepModel>(model: &mut M, max_len: usize) -> Result<Vec<usize>> {
    let mut state = model.start();
    let mut prev = START;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (dist, next, _) = model.step(&state, prev)?;
        prev = top_k(&dist, 1, None)[0];
        out.push(prev);
        state = next;
        if prev == STOP {
            break;
        }
    }
    Ok(out)
}

/// Decoder state carried between steps outside any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PgState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub coverage: Vec<f64>,
}

/// The pointer-generator network as a [`StepModel`] for one source. The
/// encoder runs once; each step rebuilds only the decoder part of the graph.
pub struct PgStepModel {
    graph: Graph,
    params: ParamSet<Var>,
    config: ModelConfig,
    encoder: EncoderOutput,
    ext: ExtendedSource,
    base_len: usize,
    coverage_on: bool,
}

impl PgStepModel {
    /// `params` should not require gradients, so no tape is recorded.
    pub fn new(params: &ModelParams, ex: &EncodedExample, coverage_on: bool) -> Result<Self> {
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph);
        let encoder = Network::new(params.config, &bound.set).encode(&mut graph, &ex.source_ids)?;
        let base_len = graph.len();
        Ok(Self {
            graph,
            params: bound.set,
            config: params.config,
            encoder,
            ext: ExtendedSource::new(ex),
            base_len,
            coverage_on,
        })
    }
}

impl StepModel for PgStepModel {
    type State = PgState;

    fn start(&mut self) -> PgState {
        let g = &self.graph;
        PgState {
            h: g.value(self.encoder.init.h).to_vec(),
            c: g.value(self.encoder.init.c).to_vec(),
            coverage: vec![0.0; self.encoder.len()],
        }
    }

    fn step(&mut self, state: &PgState, prev: usize) -> Result<(Vec<f64>, PgState, StepTrace)> {
        let g = &mut self.graph;
        g.truncate(self.base_len);
        let h = g.row(state.h.clone());
        let c = g.row(state.c.clone());
        let cov = g.row(state.coverage.clone());
        let flags = StepFlags {
            coverage_on: self.coverage_on,
            pointer_dropped: false,
        };
        let out = Network::new(self.config, &self.params).decode_step(
            g,
            &self.encoder,
            &self.ext,
            DecoderState { h, c },
            cov,
            prev,
            flags,
        )?;
        let attention: Vec<Vec<f64>> = out.attention.iter().map(|&a| g.value(a).to_vec()).collect();
        let coverage = state.coverage.iter().zip(&attention[0]).map(|(c, a)| c + a).collect();
        let next = PgState {
            h: g.value(out.state.h).to_vec(),
            c: g.value(out.state.c).to_vec(),
            coverage,
        };
        let trace = StepTrace {
            p_gen: g.scalar(out.p_gen),
            attention,
        };
        Ok((g.value(out.final_dist).to_vec(), next, trace))
    }
}

/// One decoded summary with its per-token trace (stop token excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub p_gen: Vec<f64>,
    /// Pointer-head attention per emitted token.
    pub attention: Vec<Vec<f64>>,
    pub logprob: f64,
}

pub fn decode_example(
    params: &ModelParams,
    vocab: &Vocabulary,
    ex: &EncodedExample,
    cfg: &BeamConfig,
    coverage_on: bool,
) -> Result<Decoded> {
    let mut model = PgStepModel::new(params, ex, coverage_on)?;
    let hyp = beam_search(&mut model, cfg)?;
    let ids = hyp.summary_ids().to_vec();
    let n = ids.len();
    let tokens = ids
        .iter()
        .map(|&id| ex.token(vocab, id).unwrap_or(crate::data::UNK_TOKEN).to_string())
        .collect();
    Ok(Decoded {
        ids,
        tokens,
        p_gen: hyp.p_gen[..n].to_vec(),
        attention: hyp.attention[..n].iter().map(|heads| heads[0].clone()).collect(),
        logprob: hyp.logprob,
    })
}

/// Decodes every example, fanning out over `threads` workers. Output order
/// follows input order.
pub fn decode_corpus(
    params: &ModelParams,
    vocab: &Vocabulary,
    examples: &[EncodedExample],
    cfg: &BeamConfig,
    coverage_on: bool,
    threads: usize,
) -> Result<Vec<Decoded>> {
    cfg.validate()?;
    let mut frozen = params.clone();
    frozen.set_requires_grad(false);
    let threads = threads.max(1).min(examples.len().max(1));
    if threads == 1 {
        return examples
            .iter()
            .map(|ex| decode_example(&frozen, vocab, ex, cfg, coverage_on))
            .collect();
    }
    let chunk = examples.len().div_ceil(threads);
    let frozen = &frozen;
    let parts: Vec<Result<Vec<Decoded>>> = std::thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|ex| decode_example(frozen, vocab, ex, cfg, coverage_on))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decode worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn format_summaries(decoded: &[Decoded]) -> String {
    decoded.iter().map(|d| d.tokens.join(" ") + "\n").collect()
}

/// `#example i`, then `token<TAB>p_gen<TAB>attention` per emitted token.
pub fn format_trace(decoded: &[Decoded]) -> String {
    let mut out = String::new();
    for (i, d) in decoded.iter().enumerate() {
        let _ = writeln!(out, "#example {i}");
        for ((tok, pg), attn) in d.tokens.iter().zip(&d.p_gen).zip(&d.attention) {
            let attn: Vec<String> = attn.iter().map(|a| format!("{a:.6e}")).collect();
            let _ = writeln!(out, "{tok}\t{pg:.6e}\t{}", attn.join(","));
        }
    }
    out
}

/// A parsed trace entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub token: String,
    pub p_gen: f64,
    pub attention: Vec<f64>,
}

pub fn parse_trace(text: &str, origin: &Path) -> Result<Vec<Vec<TraceEntry>>> {
    let mut out: Vec<Vec<TraceEntry>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix("#example ") {
            let idx: usize = rest
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, lineno, "bad example header"))?;
            if idx != out.len() {
                return Err(Error::parse(origin, lineno, format!("expected example {}, found {idx}", out.len())));
            }
            out.push(Vec::new());
            continue;
        }
        let current = out
            .last_mut()
            .ok_or_else(|| Error::parse(origin, lineno, "trace entry before any example header"))?;
        let mut fields = line.split('\t');
        let (Some(token), Some(pg), Some(attn), None) = (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::parse(origin, lineno, "expected token, p_gen and attention"));
        };
        let p_gen = pg.parse().map_err(|_| Error::parse(origin, lineno, "bad p_gen"))?;
        let attention = attn
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(origin, lineno, "bad attention value"))?;
        current.push(TraceEntry {
            token: token.to_string(),
            p_gen,
            attention,
        });
    }
    Ok(out)
}
