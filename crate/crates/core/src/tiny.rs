//! The tiny model used for gradient checks: vocabulary 20, embeddings and
//! hidden state of 8, a 6-token source and a 4-token target.

use crate::autodiff::{grad_check_against, GradCheckReport, Graph, Var};
use crate::data::{encode_example, EncodedExample, Vocabulary, WordPrior};
use crate::error::Result;
use crate::losses::{total_loss, LossConfig, LossTerms, PointingMode};
use crate::model::{ModelConfig, ModelParams, Network, StepFlags};

pub fn tiny_config(heads: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        emb_dim: 8,
        hidden_dim: 8,
        head_count: heads,
    }
}

/// Vocabulary of 20 ids (`t0..t15` after the reserved four) and a 6-token
/// source with two OOVs, one of them repeated.
pub fn tiny_example() -> (Vocabulary, EncodedExample) {
    let words: Vec<String> = (0..16).map(|i| format!("t{i}")).collect();
    let vocab = Vocabulary::build([words.iter().map(String::as_str)], 20).expect("tiny vocabulary");
    let ex = encode_example(
        &["t1", "zz", "t3", "t1", "qq", "zz"],
        &["zz", "t5", "t1", "qq"],
        &vocab,
        6,
        4,
    )
    .expect("tiny example");
    (vocab, ex)
}

/// Seeded initialization rescaled so weights have standard deviation
/// around `scale` instead of the training default.
pub fn tiny_params(cfg: ModelConfig, seed: u64, scale: f64) -> Result<ModelParams> {
    let mut p = ModelParams::init(cfg, seed)?;
    for t in &mut p.tensors {
        t.data.iter_mut().for_each(|x| *x *= scale / 0.05);
    }
    Ok(p)
}

/// Equal prior mass on every non-reserved id.
pub fn uniform_priors(n: usize) -> WordPrior {
    WordPrior::from_probs((0..n).map(|i| if i < 4 { 0.0 } else { 1.0 / (n - 4) as f64 }).collect())
}

/// The four loss modes: NLL, NLL + coverage, then each pointing loss on top.
pub fn loss_modes() -> Vec<(&'static str, LossConfig)> {
    let base = LossConfig {
        coverage_on: false,
        ..LossConfig::nll_only()
    };
    let cov = LossConfig {
        coverage_on: true,
        lambda_cov: 1.0,
        ..base
    };
    vec![
        ("nll", base),
        ("nll+cov", cov),
        (
            "nll+cov+naive",
            LossConfig {
                lambda_p: 0.05,
                mode: PointingMode::Naive,
                ..cov
            },
        ),
        (
            "nll+cov+wp",
            LossConfig {
                lambda_p: 0.2,
                mode: PointingMode::WordPrior,
                ..cov
            },
        ),
    ]
}

/// Full-loss gradient check on the tiny model. Central differences are
/// taken with the word-prior factors frozen at the unperturbed point.
pub fn full_loss_grad_check(heads: usize, loss: LossConfig, seed: u64) -> Result<GradCheckReport> {
    let (_, ex) = tiny_example();
    let cfg = tiny_config(heads);
    let p = tiny_params(cfg, seed, 0.3)?;
    let priors = uniform_priors(cfg.vocab_size);
    let flags = StepFlags {
        coverage_on: loss.coverage_on,
        pointer_dropped: false,
    };
    let run = |g: &mut Graph, vars: &[Var], frozen: Option<&[f64]>| -> Result<LossTerms> {
        let b = p.bind_vars(vars.to_vec());
        let tf = Network::new(cfg, &b.set).forward_teacher_forced(g, &ex, flags)?;
        total_loss(g, &tf, &ex.source_ext_ids, Some(&priors), &loss, frozen)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = p.tensors.iter().map(|t| g.leaf(t)).collect();
    let factors = run(&mut g, &vars, None)?.wp_factors;
    let frozen = (loss.mode == PointingMode::WordPrior).then_some(factors);
    let mut tensors = p.tensors.clone();
    grad_check_against(
        &|g: &mut Graph, v: &[Var]| Ok(run(g, v, None)?.total),
        &|g: &mut Graph, v: &[Var]| Ok(run(g, v, frozen.as_deref())?.total),
        &mut tensors,
        1e-6,
    )
}
