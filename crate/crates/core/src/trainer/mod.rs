//! Adagrad training with global-norm clipping and a two-phase schedule:
//! NLL only, then the configured coverage and pointing terms.

mod optim;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use optim::{adagrad_step, clip_gradients, AdagradState};

use crate::autodiff::{Graph, Tensor};
use crate::data::{EncodedExample, WordPrior};
use crate::decoder::{beam_search, BeamConfig, PgStepModel};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig, PointingMode};
use crate::model::{pointer_dropout_decision, Checkpoint, ModelParams, Network, StepFlags};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adagrad_init_accumulator: f64,
    pub max_grad_norm: f64,
    pub base_steps: usize,
    pub extension_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Phase-2 objective. Phase 1 always trains NLL alone.
    pub loss: LossConfig,
    pub head_count: usize,
    /// Probability of dropping the pointer for a whole example (phase 2).
    pub dropout_rate: f64,
    /// Interval for progress callbacks.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.15,
            adagrad_init_accumulator: 0.1,
            max_grad_norm: 2.0,
            base_steps: 3000,
            extension_steps: 3000,
            batch_size: 4,
            seed: 1,
            loss: LossConfig {
                coverage_on: true,
                ..LossConfig::default()
            },
            head_count: 1,
            dropout_rate: 0.0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.adagrad_init_accumulator > 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::invalid("learning_rate, adagrad_init_accumulator and max_grad_norm must be positive"));
        }
        if self.batch_size == 0 || self.head_count == 0 || self.eval_every == 0 {
            return Err(Error::invalid("batch_size, head_count and eval_every must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        self.loss.validate()
    }

    fn phase_of(&self, step: usize) -> u8 {
        if step < self.base_steps {
            1
        } else {
            2
        }
    }

    pub fn total_steps(&self) -> usize {
        self.base_steps + self.extension_steps
    }
}

/// Parameters, optimizer state and the number of completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adagrad: AdagradState,
    pub step: usize,
}

const ADAGRAD_PREFIX: &str = "adagrad.";
const STEP_KEY: &str = "train.step";

impl TrainState {
    pub fn new(params: ModelParams, init_accumulator: f64) -> Self {
        let adagrad = AdagradState::new(&params.tensors, init_accumulator);
        Self { params, adagrad, step: 0 }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.params.to_checkpoint();
        for ((name, t), acc) in self.params.names.iter().zip(&self.params.tensors).zip(&self.adagrad.accumulators) {
            let shaped = Tensor::new(t.shape.clone(), acc.clone()).expect("accumulator matches tensor shape");
            ckpt.entries.push((format!("{ADAGRAD_PREFIX}{name}"), shaped));
        }
        ckpt.entries.push((STEP_KEY.into(), Tensor::scalar(self.step as f64)));
        ckpt
    }

    /// Restores a training state. Plain model checkpoints start a fresh
    /// optimizer at `init_accumulator`.
    pub fn from_checkpoint(ckpt: &Checkpoint, init_accumulator: f64) -> Result<Self> {
        let params = ModelParams::from_checkpoint(ckpt)?;
        let mut state = Self::new(params, init_accumulator);
        if let Some(step) = ckpt.get(STEP_KEY) {
            state.step = step.data[0] as usize;
            for (name, acc) in state.params.names.iter().zip(&mut state.adagrad.accumulators) {
                let t = ckpt
                    .get(&format!("{ADAGRAD_PREFIX}{name}"))
                    .ok_or_else(|| Error::invalid(format!("checkpoint lacks optimizer state for {name}")))?;
                if t.data.len() != acc.len() {
                    return Err(Error::invalid(format!("optimizer state for {name} has the wrong size")));
                }
                acc.copy_from_slice(&t.data);
            }
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path, init_accumulator: f64) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, init_accumulator)
    }
}

/// One training step, averaged over the batch. `cov_loss`, `point_loss`
/// and `train_pgen` are `None` when not evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub phase: u8,
    pub nll: f64,
    pub cov_loss: Option<f64>,
    pub point_loss: Option<f64>,
    pub train_pgen: Option<f64>,
}

pub const LOG_HEADER: &str = "step\tphase\tnll\tcov_loss\tpoint_loss\ttrain_pgen";

pub fn format_log(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.10e}"));
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.10e}\t{}\t{}\t{}",
            r.step,
            r.phase,
            r.nll,
            opt(r.cov_loss),
            opt(r.point_loss),
            opt(r.train_pgen)
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Snapshot at the phase boundary, when phase 1 ended during this run.
    pub phase1: Option<TrainState>,
    pub log: Vec<LogRow>,
}

/// Trains from a fresh initialization.
pub fn train(
    config: &TrainConfig,
    params: ModelParams,
    examples: &[EncodedExample],
    priors: Option<&WordPrior>,
    progress: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    let state = TrainState::new(params, config.adagrad_init_accumulator);
    resume(config, state, examples, priors, progress)
}

/// Continues training from `state.step` up to `config.total_steps()`.
/// Example order and dropout draws depend only on the seed and the global
/// step, so resuming from a phase-1 snapshot reproduces an uninterrupted run.
pub fn resume(
    config: &TrainConfig,
    mut state: TrainState,
    examples: &[EncodedExample],
    priors: Option<&WordPrior>,
    progress: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.head_count != state.params.config.head_count {
        return Err(Error::invalid(format!(
            "config asks for {} heads but the checkpoint has {}",
            config.head_count, state.params.config.head_count
        )));
    }
    let total = config.total_steps();
    if state.step < total && examples.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if config.loss.mode == PointingMode::WordPrior && priors.is_none() && config.extension_steps > 0 {
        return Err(Error::invalid("word-prior loss needs word priors"));
    }
    let mut order = EpochOrder::new(config.seed, examples.len());
    let mut log = Vec::with_capacity(total.saturating_sub(state.step));
    let mut phase1 = None;
    if state.step == config.base_steps && config.base_steps > 0 && state.step < total {
        phase1 = Some(state.clone());
    }
    while state.step < total {
        let step = state.step;
        let phase = config.phase_of(step);
        let loss_cfg = if phase == 1 { LossConfig::nll_only() } else { config.loss };
        let dropout = if phase == 1 { 0.0 } else { config.dropout_rate };
        let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed);
        drop_rng.set_stream((1 << 32) + step as u64);

        state.params.zero_grad();
        let mut acc = BatchStats::default();
        let scale = 1.0 / config.batch_size as f64;
        for j in 0..config.batch_size {
            let ex = &examples[order.index(step * config.batch_size + j)];
            let dropped = pointer_dropout_decision(dropout, &mut drop_rng)?;
            let flags = StepFlags {
                coverage_on: loss_cfg.coverage_on,
                pointer_dropped: dropped,
            };
            let mut g = Graph::new();
            let bound = state.params.bind(&mut g);
            let tf = Network::new(state.params.config, &bound.set).forward_teacher_forced(&mut g, ex, flags)?;
            let terms = total_loss(&mut g, &tf, &ex.source_ext_ids, priors, &loss_cfg, None)?;
            let value = g.scalar(terms.total);
            if !value.is_finite() {
                return Err(Error::Diverged { step, loss: value });
            }
            acc.nll += g.scalar(terms.nll) * scale;
            acc.cov += terms.coverage.map_or(0.0, |v| g.scalar(v)) * scale;
            acc.point += terms.pointing.map_or(0.0, |v| g.scalar(v)) * scale;
            if !dropped {
                acc.pgen_sum += tf.steps.iter().map(|s| g.scalar(s.p_gen)).sum::<f64>();
                acc.pgen_count += tf.steps.len();
            }
            g.backward(terms.total)?;
            state.params.accumulate_grads(&g, &bound, scale);
        }
        let ModelParams { tensors, names, .. } = &mut state.params;
        clip_gradients(tensors, names, config.max_grad_norm)?;
        adagrad_step(tensors, &mut state.adagrad, config.learning_rate);
        state.params.zero_grad();
        state.step += 1;

        let row = LogRow {
            step,
            phase,
            nll: acc.nll,
            cov_loss: (phase == 2 && loss_cfg.coverage_on).then_some(acc.cov),
            point_loss: (phase == 2 && loss_cfg.mode != PointingMode::None).then_some(acc.point),
            train_pgen: (acc.pgen_count > 0).then(|| acc.pgen_sum / acc.pgen_count as f64),
        };
        if state.step % config.eval_every == 0 || state.step == total {
            progress(&row);
        }
        log.push(row);
        if state.step == config.base_steps && state.step < total {
            phase1 = Some(state.clone());
        }
    }
    Ok(TrainOutcome { state, phase1, log })
}

#[derive(Default)]
struct BatchStats {
    nll: f64,
    cov: f64,
    point: f64,
    pgen_sum: f64,
    pgen_count: usize,
}

/// Sample order: position `k` of the endless stream reads epoch `k / n`,
/// each epoch being a seeded permutation.
struct EpochOrder {
    seed: u64,
    n: usize,
    epoch: Option<usize>,
    perm: Vec<usize>,
}

impl EpochOrder {
    fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            n,
            epoch: None,
            perm: Vec::new(),
        }
    }

    fn index(&mut self, k: usize) -> usize {
        let epoch = k / self.n;
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64);
            self.perm = (0..self.n).collect();
            self.perm.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        self.perm[k % self.n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PgenMode {
    TeacherForced,
    Decoded(BeamConfig),
}

/// Mean p_gen over every decoder step of every example. Decoded mode
/// averages over emitted summary tokens, the stop token excluded.
pub fn average_pgen(params: &ModelParams, examples: &[EncodedExample], coverage_on: bool, mode: PgenMode) -> Result<f64> {
    let mut frozen = params.clone();
    frozen.set_requires_grad(false);
    let mut sum = 0.0;
    let mut count = 0usize;
    for ex in examples {
        match mode {
            PgenMode::TeacherForced => {
                let mut g = Graph::new();
                let bound = frozen.bind(&mut g);
                let flags = StepFlags {
                    coverage_on,
                    pointer_dropped: false,
                };
                let tf = Network::new(frozen.config, &bound.set).forward_teacher_forced(&mut g, ex, flags)?;
                sum += tf.steps.iter().map(|s| g.scalar(s.p_gen)).sum::<f64>();
                count += tf.steps.len();
            }
            PgenMode::Decoded(beam) => {
                let mut model = PgStepModel::new(&frozen, ex, coverage_on)?;
                let hyp = beam_search(&mut model, &beam)?;
                let n = hyp.summary_ids().len();
                sum += hyp.p_gen[..n].iter().sum::<f64>();
                count += n;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}
