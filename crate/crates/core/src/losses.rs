//! Training objectives: NLL, coverage, and the two pointing penalties.

use crate::autodiff::{Graph, Var};
use crate::data::WordPrior;
use crate::error::{Error, Result};
use crate::model::{StepOutput, TeacherForced};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointingMode {
    #[default]
    None,
    Naive,
    WordPrior,
}

impl PointingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Naive => "naive",
            Self::WordPrior => "word_prior",
        }
    }
}

impl std::str::FromStr for PointingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "naive" => Ok(Self::Naive),
            "word_prior" => Ok(Self::WordPrior),
            _ => Err(Error::invalid(format!("unknown pointing mode `{s}` (none, naive, word_prior)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_cov: f64,
    pub lambda_p: f64,
    pub mode: PointingMode,
    pub coverage_on: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cov: 1.0,
            lambda_p: 0.0,
            mode: PointingMode::None,
            coverage_on: false,
        }
    }
}

impl LossConfig {
    /// NLL only.
    pub fn nll_only() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cov >= 0.0 && self.lambda_p >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Graph handles for each term of one example's loss.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub nll: Var,
    pub coverage: Option<Var>,
    pub pointing: Option<Var>,
    /// Per-step cross-entropy factors of the word-prior loss (empty otherwise).
    pub wp_factors: Vec<f64>,
}

/// `(1/T) Σ_t -log p(w*_t)` with the clamped log.
pub fn nll_loss(g: &mut Graph, steps: &[StepOutput], targets: &[usize]) -> Result<Var> {
    if steps.len() != targets.len() || steps.is_empty() {
        return Err(Error::Misaligned(format!(
            "{} decoder steps for {} targets",
            steps.len(),
            targets.len()
        )));
    }
    let mut picked = Vec::with_capacity(steps.len());
    for (step, &t) in steps.iter().zip(targets) {
        picked.push(g.slice(step.final_dist, t, 1)?);
    }
    let p = g.concat(&picked)?;
    let logp = g.log_clamped(p)?;
    let total = g.sum(logp);
    Ok(g.scale(total, -1.0 / steps.len() as f64))
}

/// `(λ/T) Σ_t Σ_i min(a_i^t, c_i^t)` over the pointer head.
pub fn coverage_loss(g: &mut Graph, steps: &[StepOutput], lambda: f64) -> Result<Var> {
    let mut terms = Vec::with_capacity(steps.len());
    for step in steps {
        let m = g.minimum(step.pointer_attention(), step.coverage)?;
        terms.push(g.sum(m));
    }
    let s = sum_all(g, &terms)?;
    Ok(g.scale(s, lambda / steps.len().max(1) as f64))
}

/// `λ_p Σ_t p_point^t`, summed over steps. Steps with the pointer dropped
/// contribute nothing.
pub fn naive_pointing_loss(g: &mut Graph, steps: &[StepOutput], lambda_p: f64) -> Result<Var> {
    let terms: Vec<Var> = steps.iter().filter_map(|s| s.p_point).collect();
    let s = sum_all(g, &terms)?;
    Ok(g.scale(s, lambda_p))
}

/// `Σ_t λ_p p_point^t · sg(-Σ_i p_w(x_i) log(1 - a_i^t))`.
///
/// `source_ext_ids` gives the word at each source position; OOV ids fall
/// outside the prior table and weigh 0. With `frozen`, the cross-entropy
/// factors are taken from it instead of the graph. Returns the loss and
/// the factors actually used.
pub fn word_prior_pointing_loss(
    g: &mut Graph,
    steps: &[StepOutput],
    priors: &WordPrior,
    source_ext_ids: &[usize],
    lambda_p: f64,
    frozen: Option<&[f64]>,
) -> Result<(Var, Vec<f64>)> {
    if let Some(f) = frozen {
        if f.len() != steps.len() {
            return Err(Error::Misaligned(format!("{} frozen factors for {} steps", f.len(), steps.len())));
        }
    }
    let weights: Vec<f64> = source_ext_ids.iter().map(|&id| priors.get(id)).collect();
    let w = g.row(weights);
    let mut terms = Vec::with_capacity(steps.len());
    let mut factors = Vec::with_capacity(steps.len());
    for (t, step) in steps.iter().enumerate() {
        let Some(p_point) = step.p_point else {
            factors.push(0.0);
            continue;
        };
        let factor = match frozen {
            Some(f) => g.scalar_const(f[t]),
            None => {
                let keep = g.one_minus(step.pointer_attention());
                let log_keep = g.log_clamped(keep)?;
                let weighted = g.mul(log_keep, w)?;
                let ce = g.sum(weighted);
                let ce = g.neg(ce);
                g.stop_gradient(ce)
            }
        };
        factors.push(g.scalar(factor));
        terms.push(g.mul(p_point, factor)?);
    }
    let s = sum_all(g, &terms)?;
    Ok((g.scale(s, lambda_p), factors))
}

/// NLL plus the configured coverage and pointing terms.
pub fn total_loss(
    g: &mut Graph,
    tf: &TeacherForced,
    source_ext_ids: &[usize],
    priors: Option<&WordPrior>,
    cfg: &LossConfig,
    frozen: Option<&[f64]>,
) -> Result<LossTerms> {
    let nll = nll_loss(g, &tf.steps, &tf.targets)?;
    let mut total = nll;
    let coverage = if cfg.coverage_on {
        let c = coverage_loss(g, &tf.steps, cfg.lambda_cov)?;
        total = g.add(total, c)?;
        Some(c)
    } else {
        None
    };
    let mut wp_factors = Vec::new();
    let pointing = match cfg.mode {
        PointingMode::None => None,
        PointingMode::Naive => Some(naive_pointing_loss(g, &tf.steps, cfg.lambda_p)?),
        PointingMode::WordPrior => {
            let priors = priors.ok_or_else(|| Error::invalid("word-prior loss needs word priors"))?;
            let (l, f) = word_prior_pointing_loss(g, &tf.steps, priors, source_ext_ids, cfg.lambda_p, frozen)?;
            wp_factors = f;
            Some(l)
        }
    };
    if let Some(p) = pointing {
        total = g.add(total, p)?;
    }
    Ok(LossTerms {
        total,
        nll,
        coverage,
        pointing,
        wp_factors,
    })
}

fn sum_all(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    match terms {
        [] => Ok(g.scalar_const(0.0)),
        [one] => Ok(*one),
        _ => {
            let row = g.concat(terms)?;
            Ok(g.sum(row))
        }
    }
}
