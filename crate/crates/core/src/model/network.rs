use std::rc::Rc;

use rand::Rng;

use super::params::{ModelConfig, ParamSet};
use crate::autodiff::{Graph, Var};
use crate::data::{EncodedExample, UNK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[L, 2H]`; rows at masked positions are zero.
    pub states: Var,
    pub mask: Rc<[bool]>,
    pub init: DecoderState,
    /// Per-head `states · W_h`, computed once per source.
    pub features: Vec<Var>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepFlags {
    /// Feed the coverage vector into the pointer head's attention scores.
    pub coverage_on: bool,
    /// Pointer dropped for this example: `p_gen` is fixed at 1 and the
    /// switch is not evaluated.
    pub pointer_dropped: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// One distribution over source positions per head; head 0 is the pointer.
    pub attention: Vec<Var>,
    pub context: Var,
    pub p_vocab: Var,
    pub p_gen: Var,
    /// `1 - p_gen`; `None` when the pointer is dropped.
    pub p_point: Option<Var>,
    /// Coverage vector this step's attention was computed with.
    pub coverage: Var,
    /// Distribution over the extended vocabulary.
    pub final_dist: Var,
    pub state: DecoderState,
    pub input: Var,
}

impl StepOutput {
    pub fn pointer_attention(&self) -> Var {
        self.attention[0]
    }
}

/// Output of a teacher-forced pass over one example.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    pub encoder: EncoderOutput,
    pub steps: Vec<StepOutput>,
    /// Extended-vocabulary ids the steps are supervised with.
    pub targets: Vec<usize>,
}

/// The pointer-generator network over one bound parameter set.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    pub config: ModelConfig,
    pub params: &'a ParamSet<Var>,
}

impl<'a> Network<'a> {
    pub fn new(config: ModelConfig, params: &'a ParamSet<Var>) -> Self {
        Self { config, params }
    }

    fn embed(&self, g: &mut Graph, id: usize) -> Result<Var> {
        let id = if id >= self.config.vocab_size { UNK } else { id };
        g.gather_row(self.params.embedding, id)
    }

    /// Input, forget, output, candidate gates in that order.
    fn lstm_cell(&self, g: &mut Graph, w: Var, b: Var, x: Var, state: DecoderState) -> Result<DecoderState> {
        let h = self.config.hidden_dim;
        let xh = g.concat(&[x, state.h])?;
        let z = g.matmul(xh, w)?;
        let z = g.add(z, b)?;
        let gi = g.slice(z, 0, h)?;
        let gf = g.slice(z, h, h)?;
        let go = g.slice(z, 2 * h, h)?;
        let gc = g.slice(z, 3 * h, h)?;
        let i = g.sigmoid(gi);
        let f = g.sigmoid(gf);
        let o = g.sigmoid(go);
        let cand = g.tanh(gc);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let hn = g.mul(o, tc)?;
        Ok(DecoderState { h: hn, c })
    }

    pub fn encode(&self, g: &mut Graph, source_ids: &[usize]) -> Result<EncoderOutput> {
        self.encode_masked(g, source_ids, &vec![true; source_ids.len()])
    }

    /// Bidirectional LSTM over the unmasked positions. Masked positions get
    /// zero states and never receive attention.
    pub fn encode_masked(&self, g: &mut Graph, source_ids: &[usize], mask: &[bool]) -> Result<EncoderOutput> {
        if source_ids.len() != mask.len() {
            return Err(Error::Shape {
                op: "encode",
                lhs: vec![source_ids.len()],
                rhs: vec![mask.len()],
            });
        }
        let live: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if live.is_empty() {
            return Err(Error::invalid("encode: empty source"));
        }
        let p = self.params;
        let h = self.config.hidden_dim;
        let embs: Vec<Var> = live
            .iter()
            .map(|&i| self.embed(g, source_ids[i]))
            .collect::<Result<_>>()?;
        let zero = DecoderState {
            h: g.zeros(vec![1, h]),
            c: g.zeros(vec![1, h]),
        };
        let mut fw = Vec::with_capacity(live.len());
        let mut st = zero;
        for &x in &embs {
            st = self.lstm_cell(g, p.enc_fw_w, p.enc_fw_b, x, st)?;
            fw.push(st);
        }
        let mut bw = vec![zero; live.len()];
        st = zero;
        for k in (0..live.len()).rev() {
            st = self.lstm_cell(g, p.enc_bw_w, p.enc_bw_b, embs[k], st)?;
            bw[k] = st;
        }
        let pad = g.zeros(vec![1, 2 * h]);
        let mut rows = vec![pad; mask.len()];
        for (k, &i) in live.iter().enumerate() {
            rows[i] = g.concat(&[fw[k].h, bw[k].h])?;
        }
        let states = g.stack(&rows)?;

        let (fw_last, bw_last) = (fw[live.len() - 1], bw[0]);
        let hcat = g.concat(&[fw_last.h, bw_last.h])?;
        let ccat = g.concat(&[fw_last.c, bw_last.c])?;
        let ih = g.matmul(hcat, p.bridge_h_w)?;
        let ih = g.add(ih, p.bridge_h_b)?;
        let ic = g.matmul(ccat, p.bridge_c_w)?;
        let ic = g.add(ic, p.bridge_c_b)?;
        let init = DecoderState {
            h: g.tanh(ih),
            c: g.tanh(ic),
        };
        let features = p
            .heads
            .iter()
            .map(|head| g.matmul(states, head.w_h))
            .collect::<Result<_>>()?;
        Ok(EncoderOutput {
            states,
            mask: Rc::from(mask),
            init,
            features,
        })
    }

    /// Per-head attention `softmax(vᵀ tanh(W_h h_i + W_s s + [W_c c_i] + b))`.
    /// The coverage term enters the pointer head only, and only when enabled.
    pub fn attention_step(
        &self,
        g: &mut Graph,
        dec_h: Var,
        enc: &EncoderOutput,
        coverage: Var,
        coverage_on: bool,
    ) -> Result<Vec<Var>> {
        let len = enc.len();
        let mut out = Vec::with_capacity(self.params.heads.len());
        for (k, head) in self.params.heads.iter().enumerate() {
            let sw = g.matmul(dec_h, head.w_s)?;
            let swb = g.add(sw, head.bias)?;
            let mut feat = g.add(enc.features[k], swb)?;
            if k == 0 && coverage_on {
                let col = g.reshape(coverage, vec![len, 1])?;
                let cw = g.matmul(col, self.params.coverage_w)?;
                feat = g.add(feat, cw)?;
            }
            let act = g.tanh(feat);
            let e = g.matmul(act, head.v)?;
            let e = g.reshape(e, vec![1, len])?;
            out.push(g.masked_softmax(e, Some(&enc.mask))?);
        }
        Ok(out)
    }

    /// Concatenated per-head contexts; with one head this is `Σ a_i h_i`.
    pub fn make_context(&self, g: &mut Graph, attention: &[Var], enc: &EncoderOutput) -> Result<Var> {
        let mut parts = Vec::with_capacity(attention.len());
        for (a, head) in attention.iter().zip(&self.params.heads) {
            let ctx = g.matmul(*a, enc.states)?;
            parts.push(match head.proj {
                Some(proj) => g.matmul(ctx, proj)?,
                None => ctx,
            });
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.concat(&parts)
        }
    }

    /// `softmax(V'(V[s, h*] + b) + b')`.
    pub fn generator_distribution(&self, g: &mut Graph, s: Var, context: Var) -> Result<Var> {
        let p = self.params;
        let sc = g.concat(&[s, context])?;
        let hid = g.matmul(sc, p.out_w)?;
        let hid = g.add(hid, p.out_b)?;
        let logits = g.matmul(hid, p.vocab_w)?;
        let logits = g.add(logits, p.vocab_b)?;
        g.softmax(logits)
    }

    /// `σ(w_h*ᵀ h* + w_sᵀ s + w_xᵀ x + b_ptr)`.
    pub fn switch(&self, g: &mut Graph, context: Var, s: Var, x: Var) -> Result<Var> {
        let p = self.params;
        let a = g.matmul(context, p.switch_ctx)?;
        let b = g.matmul(s, p.switch_state)?;
        let c = g.matmul(x, p.switch_input)?;
        let z = g.add(a, b)?;
        let z = g.add(z, c)?;
        let z = g.add(z, p.switch_bias)?;
        Ok(g.sigmoid(z))
    }

    /// One decoder step from `prev` (the previous output token, extended id).
    pub fn decode_step(
        &self,
        g: &mut Graph,
        enc: &EncoderOutput,
        ext: &ExtendedSource,
        state: DecoderState,
        coverage: Var,
        prev: usize,
        flags: StepFlags,
    ) -> Result<StepOutput> {
        let x = self.embed(g, prev)?;
        let state = self.lstm_cell(g, self.params.dec_w, self.params.dec_b, x, state)?;
        let attention = self.attention_step(g, state.h, enc, coverage, flags.coverage_on)?;
        let context = self.make_context(g, &attention, enc)?;
        let p_vocab = self.generator_distribution(g, state.h, context)?;
        let (p_gen, p_point, final_dist) = if flags.pointer_dropped {
            let one = g.scalar_const(1.0);
            (one, None, zero_extend(g, p_vocab, ext.ext_size)?)
        } else {
            let p_gen = self.switch(g, context, state.h, x)?;
            let (dist, p_point) = final_distribution(g, p_vocab, p_gen, attention[0], ext)?;
            (p_gen, Some(p_point), dist)
        };
        Ok(StepOutput {
            attention,
            context,
            p_vocab,
            p_gen,
            p_point,
            coverage,
            final_dist,
            state,
            input: x,
        })
    }

    /// Runs the decoder over the gold target. Step `t` is fed gold token
    /// `t - 1`; coverage accumulates the pointer head's attention.
    pub fn forward_teacher_forced(&self, g: &mut Graph, ex: &EncodedExample, flags: StepFlags) -> Result<TeacherForced> {
        let encoder = self.encode(g, &ex.source_ids)?;
        let ext = ExtendedSource::new(ex);
        let inputs = ex.decoder_inputs();
        let targets = ex.decoder_targets();
        let mut state = encoder.init;
        let mut coverage = g.zeros(vec![1, encoder.len()]);
        let mut steps = Vec::with_capacity(inputs.len());
        for &prev in &inputs {
            let out = self.decode_step(g, &encoder, &ext, state, coverage, prev, flags)?;
            state = out.state;
            coverage = g.add(coverage, out.pointer_attention())?;
            steps.push(out);
        }
        Ok(TeacherForced {
            encoder,
            steps,
            targets,
        })
    }
}

/// Scatter indices and extended size for one source document.
#[derive(Debug, Clone)]
pub struct ExtendedSource {
    pub ids: Rc<[usize]>,
    pub ext_size: usize,
    pub vocab_size: usize,
}

impl ExtendedSource {
    pub fn new(ex: &EncodedExample) -> Self {
        Self {
            ids: Rc::from(ex.source_ext_ids.as_slice()),
            ext_size: ex.ext_vocab_size(),
            vocab_size: ex.vocab_size,
        }
    }
}

fn zero_extend(g: &mut Graph, p_vocab: Var, ext_size: usize) -> Result<Var> {
    let v = g.shape(p_vocab)[1];
    if ext_size == v {
        return Ok(p_vocab);
    }
    let pad = g.zeros(vec![1, ext_size - v]);
    g.concat(&[p_vocab, pad])
}

/// `p(w) = p_gen · p_vocab(w) + (1 - p_gen) · Σ_{i: w_i = w} a_i` over the
/// extended vocabulary. Returns the distribution and `p_point`.
pub fn final_distribution(
    g: &mut Graph,
    p_vocab: Var,
    p_gen: Var,
    pointer_attention: Var,
    ext: &ExtendedSource,
) -> Result<(Var, Var)> {
    let gen = zero_extend(g, p_vocab, ext.ext_size)?;
    let gen = g.mul(gen, p_gen)?;
    let p_point = g.one_minus(p_gen);
    let copy = g.mul(pointer_attention, p_point)?;
    let copy = g.scatter_add(copy, ext.ids.clone(), ext.ext_size)?;
    Ok((g.add(gen, copy)?, p_point))
}

/// Whether to drop the pointer for a whole training example.
pub fn pointer_dropout_decision<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("pointer dropout rate {rate} outside [0, 1)")));
    }
    Ok(rate > 0.0 && rng.gen::<f64>() < rate)
}
