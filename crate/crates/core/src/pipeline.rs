//! Every pipeline stage as a function of a [`RunConfig`], plus the
//! variant grid. All artifacts land under the configured output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Graph;
use crate::config::RunConfig;
use crate::data::{
    build_vocab, compute_word_priors, encode_all, generate_synthetic_corpus, load_corpus, write_splits, EncodedExample,
    Example, Splits, Vocabulary, WordPrior,
};
use crate::decoder::{decode_corpus, format_summaries, format_trace, parse_trace, Decoded};
use crate::error::{Error, Result};
use crate::losses::PointingMode;
use crate::metrics::{
    evaluate, format_kl_matrix, format_scores, format_sig, kl_matrix, parse_scores, wilcoxon, AttentionTrace,
    ExampleScores, MetricReport, WilcoxonMethod, WilcoxonResult,
};
use crate::model::{ModelParams, Network, StepFlags};
use crate::tiny::{full_loss_grad_check, loss_modes};
use crate::trainer::{format_log, resume, LogRow, TrainOutcome, TrainState};

/// Worker count: `PGLAB_THREADS` when set, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("PGLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

fn tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?.lines().map(tokens).collect())
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Splits> {
    cfg.validate()?;
    let splits = generate_synthetic_corpus(&cfg.synth_config())?;
    write_splits(&splits, &cfg.data_path())?;
    Ok(splits)
}

pub fn load_split(cfg: &RunConfig, split: &str) -> Result<Vec<Example>> {
    load_corpus(&cfg.data_path().join(format!("{split}.tsv")))
}

/// Vocabulary and (for the word-prior loss) priors from the training split.
pub fn prepare_vocab(cfg: &RunConfig, train: &[Example]) -> Result<(Vocabulary, Option<WordPrior>)> {
    let vocab = build_vocab(train, cfg.vocab_size)?;
    let priors = match cfg.pointing_loss {
        PointingMode::WordPrior => Some(compute_word_priors(train, &vocab)?),
        _ => None,
    };
    Ok((vocab, priors))
}

/// Trains on the training split and writes the checkpoint, the phase-1
/// snapshot, the vocabulary, the priors and `train_log.tsv`.
pub fn cmd_train(cfg: &RunConfig, progress: &mut dyn FnMut(&LogRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = load_split(cfg, "train")?;
    let (vocab, priors) = prepare_vocab(cfg, &train)?;
    let encoded = encode_all(&train, &vocab, cfg.max_src_len, cfg.max_tgt_len)?;
    let tc = cfg.train_config();
    let state = match cfg.init_path() {
        Some(p) => TrainState::load(&p, tc.adagrad_init_accumulator)?,
        None => TrainState::new(
            ModelParams::init(cfg.model_config(vocab.len()), cfg.seed)?,
            tc.adagrad_init_accumulator,
        ),
    };
    if state.params.config.vocab_size != vocab.len() {
        return Err(Error::invalid(format!(
            "checkpoint vocabulary has {} entries, corpus gives {}",
            state.params.config.vocab_size,
            vocab.len()
        )));
    }
    let outcome = resume(&tc, state, &encoded, priors.as_ref(), progress)?;
    write(&cfg.vocab_path(), &vocab.to_text())?;
    if let Some(p) = &priors {
        fs::create_dir_all(&cfg.output_dir)?;
        p.save(&vocab, &cfg.priors_path())?;
    }
    fs::create_dir_all(&cfg.output_dir)?;
    if let Some(p1) = &outcome.phase1 {
        p1.save(&cfg.phase1_path())?;
    }
    outcome.state.save(&cfg.checkpoint_path())?;
    write(&cfg.out("train_log.tsv"), &format_log(&outcome.log))?;
    Ok(outcome)
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<(ModelParams, Vocabulary)> {
    let params = ModelParams::load(checkpoint)?;
    let vocab = Vocabulary::from_text(&fs::read_to_string(cfg.vocab_path())?)?;
    if vocab.len() != params.config.vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    Ok((params, vocab))
}

/// Decodes the configured split and writes `summaries.txt`, `trace.txt`,
/// and the aligned `references.txt` and `sources.txt`.
pub fn cmd_decode(cfg: &RunConfig) -> Result<Vec<Decoded>> {
    cfg.validate()?;
    let (params, vocab) = load_model(cfg, &cfg.checkpoint_path())?;
    let split = load_split(cfg, &cfg.decode_split)?;
    let encoded = encode_all(&split, &vocab, cfg.max_src_len, cfg.max_tgt_len)?;
    let decoded = decode_corpus(
        &params,
        &vocab,
        &encoded,
        &cfg.beam_config(),
        cfg.decode_with_coverage(),
        thread_count(),
    )?;
    write(&cfg.out("summaries.txt"), &format_summaries(&decoded))?;
    write(&cfg.out("trace.txt"), &format_trace(&decoded))?;
    let join = |f: fn(&Example) -> &Vec<String>| -> String { split.iter().map(|e| f(e).join(" ") + "\n").collect() };
    write(&cfg.out("references.txt"), &join(|e| &e.target))?;
    write(&cfg.out("sources.txt"), &join(|e| &e.source))?;
    Ok(decoded)
}

/// Files read by [`cmd_eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInputs {
    pub summaries: PathBuf,
    pub references: PathBuf,
    pub sources: PathBuf,
    pub trace: Option<PathBuf>,
}

impl EvalInputs {
    /// The files [`cmd_decode`] writes; the trace only when present.
    pub fn from_config(cfg: &RunConfig) -> Self {
        let trace = cfg.out("trace.txt");
        Self {
            summaries: cfg.out("summaries.txt"),
            references: cfg.out("references.txt"),
            sources: cfg.out("sources.txt"),
            trace: trace.exists().then_some(trace),
        }
    }
}

/// Writes `report.tsv` and the per-example `scores.tsv`.
pub fn cmd_eval(cfg: &RunConfig, inputs: &EvalInputs) -> Result<(MetricReport, Vec<ExampleScores>)> {
    let summaries = read_lines(&inputs.summaries)?;
    let references = read_lines(&inputs.references)?;
    let sources = read_lines(&inputs.sources)?;
    let traces = match &inputs.trace {
        Some(p) => Some(parse_trace(&fs::read_to_string(p)?, p)?),
        None => None,
    };
    let (report, scores) = evaluate(&summaries, &references, &sources, traces.as_deref(), cfg.eval_options())?;
    write(&cfg.out("report.tsv"), &report.to_tsv())?;
    write(&cfg.out("scores.tsv"), &format_scores(&scores))?;
    Ok((report, scores))
}

/// Paired signed-rank tests of per-example ROUGE-1, ROUGE-2 and ROUGE-L.
pub fn compare_scores(a: &[ExampleScores], b: &[ExampleScores]) -> Result<Vec<(&'static str, Result<WilcoxonResult>)>> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!("{} scored examples vs {}", a.len(), b.len())));
    }
    let col = |s: &[ExampleScores], f: fn(&ExampleScores) -> f64| s.iter().map(f).collect::<Vec<f64>>();
    let metrics: [(&'static str, fn(&ExampleScores) -> f64); 3] =
        [("rouge1", |s| s.rouge1), ("rouge2", |s| s.rouge2), ("rougeL", |s| s.rouge_l)];
    Ok(metrics
        .into_iter()
        .map(|(name, f)| (name, wilcoxon(&col(a, f), &col(b, f), WilcoxonMethod::Auto)))
        .collect())
}

pub fn format_comparison(rows: &[(&'static str, Result<WilcoxonResult>)]) -> String {
    let mut out = String::from("metric\tn\tw_plus\tw_minus\tp_value\tmethod\n");
    for (name, r) in rows {
        match r {
            Ok(r) => {
                let method = if r.exact { "exact" } else { "normal" };
                let _ = writeln!(
                    out,
                    "{name}\t{}\t{}\t{}\t{}\t{method}",
                    r.n,
                    format_sig(r.w_plus),
                    format_sig(r.w_minus),
                    format_sig(r.p_value)
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{name}\t-\t-\t-\t-\t{e}");
            }
        }
    }
    out
}

/// Compares two `scores.tsv` files and writes `compare.tsv`.
pub fn cmd_compare(cfg: &RunConfig, a: &Path, b: &Path) -> Result<Vec<(&'static str, Result<WilcoxonResult>)>> {
    let sa = parse_scores(&fs::read_to_string(a)?, a)?;
    let sb = parse_scores(&fs::read_to_string(b)?, b)?;
    let rows = compare_scores(&sa, &sb)?;
    if rows.iter().all(|(_, r)| r.is_err()) {
        let (_, first) = rows.into_iter().next().expect("three metrics");
        return Err(first.unwrap_err());
    }
    write(&cfg.out("compare.tsv"), &format_comparison(&rows))?;
    Ok(rows)
}

/// Teacher-forced attention of every head at every target step.
pub fn teacher_forced_attention(
    params: &ModelParams,
    examples: &[EncodedExample],
    coverage_on: bool,
) -> Result<Vec<AttentionTrace>> {
    let mut frozen = params.clone();
    frozen.set_requires_grad(false);
    let flags = StepFlags {
        coverage_on,
        pointer_dropped: false,
    };
    examples
        .iter()
        .map(|ex| {
            let mut g = Graph::new();
            let bound = frozen.bind(&mut g);
            let tf = Network::new(frozen.config, &bound.set).forward_teacher_forced(&mut g, ex, flags)?;
            Ok(tf
                .steps
                .iter()
                .map(|s| s.attention.iter().map(|&a| g.value(a).to_vec()).collect())
                .collect())
        })
        .collect()
}

/// Mean head-to-head KL of `a` on the configured split, optionally against
/// a single-head model `b`. Writes `attn_kl.tsv`.
pub fn cmd_attn_kl(cfg: &RunConfig, a: &Path, b: Option<&Path>) -> Result<Vec<Vec<f64>>> {
    let (pa, vocab) = load_model(cfg, a)?;
    let split = load_split(cfg, &cfg.decode_split)?;
    let encoded = encode_all(&split, &vocab, cfg.max_src_len, cfg.max_tgt_len)?;
    let cov = cfg.decode_with_coverage();
    let ta = teacher_forced_attention(&pa, &encoded, cov)?;
    let tb = match b {
        Some(p) => {
            let pb = ModelParams::load(p)?;
            if pb.config.head_count != 1 || pb.config.vocab_size != pa.config.vocab_size {
                return Err(Error::invalid("second checkpoint must be single-head with the same vocabulary"));
            }
            Some(teacher_forced_attention(&pb, &encoded, cov)?)
        }
        None => None,
    };
    let m = kl_matrix(&ta, tb.as_deref())?;
    write(&cfg.out("attn_kl.tsv"), &format_kl_matrix(&m))?;
    Ok(m)
}

/// Max relative gradient error of the tiny model per head count and loss
/// mode.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    for heads in [1, 4] {
        for (name, loss) in loss_modes() {
            let r = full_loss_grad_check(heads, loss, cfg.seed)?;
            rows.push((format!("heads={heads} {name}"), r.max_rel_error));
        }
    }
    Ok(rows)
}

/// One cell of the variant grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub heads: usize,
    pub mode: PointingMode,
    pub lambda_p: f64,
    pub dropout: f64,
    pub coverage: bool,
}

pub const DROPOUT_RATE: f64 = 0.2;
pub const NAIVE_LAMBDA: f64 = 0.05;
pub const WORD_PRIOR_LAMBDA: f64 = 0.2;

/// Heads {1, 4} × {baseline, dropout, naive, word prior}, all with coverage,
/// then the single-head baseline without coverage.
pub fn variant_grid() -> Vec<Variant> {
    let mut out = Vec::new();
    for heads in [1, 4] {
        let v = |name: &str, mode, lambda_p, dropout| Variant {
            name: format!("h{heads}-{name}"),
            heads,
            mode,
            lambda_p,
            dropout,
            coverage: true,
        };
        out.push(v("baseline", PointingMode::None, 0.0, 0.0));
        out.push(v("dropout", PointingMode::None, 0.0, DROPOUT_RATE));
        out.push(v("naive", PointingMode::Naive, NAIVE_LAMBDA, 0.0));
        out.push(v("word_prior", PointingMode::WordPrior, WORD_PRIOR_LAMBDA, 0.0));
    }
    out.push(Variant {
        name: "h1-baseline-nocov".into(),
        heads: 1,
        mode: PointingMode::None,
        lambda_p: 0.0,
        dropout: 0.0,
        coverage: false,
    });
    out
}

impl Variant {
    pub fn apply(&self, base: &RunConfig, root: &Path) -> RunConfig {
        let mut c = base.clone();
        c.output_dir = root.join(&self.name);
        c.data_dir = root.join("data");
        c.head_count = self.heads;
        c.pointing_loss = self.mode;
        c.lambda_p = self.lambda_p;
        c.dropout_rate = self.dropout;
        c.coverage = self.coverage;
        c.init_checkpoint = PathBuf::new();
        c
    }
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub report: MetricReport,
    pub scores: Vec<ExampleScores>,
    pub train_pgen: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<VariantResult>,
    pub table: String,
}

impl ExperimentOutcome {
    pub fn get(&self, name: &str) -> Option<&VariantResult> {
        self.results.iter().find(|r| r.variant.name == name)
    }
}

/// Runs the grid under `<output_dir>/experiment`. Phase 1 is trained once
/// per head count and every variant resumes from that snapshot. Writes
/// `comparison.tsv` with one row per variant and a signed-rank p-value of
/// ROUGE-1 against the same-head baseline.
pub fn cmd_experiment(base: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentOutcome> {
    base.validate()?;
    let root = base.output_dir.join("experiment");
    let mut data_cfg = base.clone();
    data_cfg.output_dir = root.clone();
    data_cfg.data_dir = "data".into();
    cmd_gen_data(&data_cfg)?;
    progress("corpus written");

    let grid = variant_grid();
    let mut results: Vec<VariantResult> = Vec::new();
    for heads in [1, 4] {
        let mut p1 = Variant {
            name: format!("h{heads}-phase1"),
            heads,
            mode: PointingMode::None,
            lambda_p: 0.0,
            dropout: 0.0,
            coverage: false,
        }
        .apply(base, &root);
        p1.extension_steps = 0;
        cmd_train(&p1, &mut |_| {})?;
        progress(&format!("phase 1 done for {heads} head(s)"));
        for v in grid.iter().filter(|v| v.heads == heads) {
            let mut c = v.apply(base, &root);
            c.init_checkpoint = p1.checkpoint_path();
            let outcome = cmd_train(&c, &mut |_| {})?;
            cmd_decode(&c)?;
            let (report, scores) = cmd_eval(&c, &EvalInputs::from_config(&c))?;
            let phase2: Vec<f64> = outcome.log.iter().filter(|r| r.phase == 2).filter_map(|r| r.train_pgen).collect();
            let train_pgen = (!phase2.is_empty()).then(|| phase2.iter().sum::<f64>() / phase2.len() as f64);
            progress(&format!(
                "{}: rouge1 {} avg_pgen {}",
                v.name,
                format_sig(report.rouge1),
                report.avg_pgen.map_or("-".into(), format_sig)
            ));
            results.push(VariantResult {
                variant: v.clone(),
                report,
                scores,
                train_pgen,
            });
        }
    }
    let table = comparison_table(&results);
    write(&base.out("comparison.tsv"), &table)?;
    Ok(ExperimentOutcome { results, table })
}

fn comparison_table(results: &[VariantResult]) -> String {
    let mut out = String::from("variant\theads");
    let names: Vec<String> = results
        .first()
        .map(|r| r.report.entries().into_iter().map(|(k, _)| k).collect())
        .unwrap_or_default();
    for k in &names {
        let _ = write!(out, "\t{k}");
    }
    out.push_str("\ttrain_pgen\tp_rouge1_vs_baseline\n");
    for r in results {
        let _ = write!(out, "{}\t{}", r.variant.name, r.variant.heads);
        for (_, v) in r.report.entries() {
            let _ = write!(out, "\t{}", v.map_or("-".into(), format_sig));
        }
        let _ = write!(out, "\t{}", r.train_pgen.map_or("-".into(), format_sig));
        let baseline = results
            .iter()
            .find(|b| b.variant.heads == r.variant.heads && b.variant.name == format!("h{}-baseline", r.variant.heads));
        let p = match baseline {
            Some(b) if b.variant != r.variant => {
                let x: Vec<f64> = b.scores.iter().map(|s| s.rouge1).collect();
                let y: Vec<f64> = r.scores.iter().map(|s| s.rouge1).collect();
                wilcoxon(&x, &y, WilcoxonMethod::Auto).map_or("-".into(), |w| format_sig(w.p_value))
            }
            _ => "-".into(),
        };
        let _ = writeln!(out, "\t{p}");
    }
    out
}
