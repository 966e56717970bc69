use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Network sizes. The encoder runs `hidden_dim` units per direction, so the
/// context vector has `2 * hidden_dim` entries regardless of head count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub head_count: usize,
}

impl ModelConfig {
    pub fn context_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn attn_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn head_dim(&self) -> usize {
        self.context_dim() / self.head_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= 4 || self.emb_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("vocab_size > 4 and positive dimensions required"));
        }
        if self.head_count == 0 || self.context_dim() % self.head_count != 0 {
            return Err(Error::invalid(format!(
                "head_count {} must divide the context size {}",
                self.head_count,
                self.context_dim()
            )));
        }
        Ok(())
    }
}

/// Per-head attention weights. `proj` maps the head's context down to
/// `context_dim / head_count` and only exists with more than one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSet<T> {
    pub w_h: T,
    pub w_s: T,
    pub bias: T,
    pub v: T,
    pub proj: Option<T>,
}

/// Every learnable tensor, generic over storage so the same layout serves
/// as indices into [`ModelParams::tensors`] and as graph handles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub embedding: T,
    pub enc_fw_w: T,
    pub enc_fw_b: T,
    pub enc_bw_w: T,
    pub enc_bw_b: T,
    pub bridge_h_w: T,
    pub bridge_h_b: T,
    pub bridge_c_w: T,
    pub bridge_c_b: T,
    pub dec_w: T,
    pub dec_b: T,
    pub heads: Vec<HeadSet<T>>,
    /// Coverage weight `W_c`; feeds the pointer head only.
    pub coverage_w: T,
    pub out_w: T,
    pub out_b: T,
    pub vocab_w: T,
    pub vocab_b: T,
    pub switch_ctx: T,
    pub switch_state: T,
    pub switch_input: T,
    pub switch_bias: T,
}

impl<T> ParamSet<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ParamSet<U> {
        ParamSet {
            embedding: f(&self.embedding),
            enc_fw_w: f(&self.enc_fw_w),
            enc_fw_b: f(&self.enc_fw_b),
            enc_bw_w: f(&self.enc_bw_w),
            enc_bw_b: f(&self.enc_bw_b),
            bridge_h_w: f(&self.bridge_h_w),
            bridge_h_b: f(&self.bridge_h_b),
            bridge_c_w: f(&self.bridge_c_w),
            bridge_c_b: f(&self.bridge_c_b),
            dec_w: f(&self.dec_w),
            dec_b: f(&self.dec_b),
            heads: self
                .heads
                .iter()
                .map(|h| HeadSet {
                    w_h: f(&h.w_h),
                    w_s: f(&h.w_s),
                    bias: f(&h.bias),
                    v: f(&h.v),
                    proj: h.proj.as_ref().map(&mut f),
                })
                .collect(),
            coverage_w: f(&self.coverage_w),
            out_w: f(&self.out_w),
            out_b: f(&self.out_b),
            vocab_w: f(&self.vocab_w),
            vocab_b: f(&self.vocab_b),
            switch_ctx: f(&self.switch_ctx),
            switch_state: f(&self.switch_state),
            switch_input: f(&self.switch_input),
            switch_bias: f(&self.switch_bias),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Uniform,
    Zero,
    /// Zero except the forget-gate quarter, which starts at 1.
    LstmBias,
}

/// All learnable weights, stored flat in a fixed named order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
    pub names: Vec<String>,
    pub layout: ParamSet<usize>,
}

const INIT_RANGE: f64 = 0.05;

impl ModelParams {
    /// Uniform(-0.05, 0.05) matrices, zero biases, LSTM forget bias 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::default();
        let (v, e, h) = (config.vocab_size, config.emb_dim, config.hidden_dim);
        let (ctx, attn) = (config.context_dim(), config.attn_dim());
        let mut add = |name: &str, shape: Vec<usize>, init: Init| b.add(name, shape, init, &mut rng);

        let embedding = add("embedding", vec![v, e], Init::Uniform);
        let enc_fw_w = add("encoder.fw.w", vec![e + h, 4 * h], Init::Uniform);
        let enc_fw_b = add("encoder.fw.b", vec![1, 4 * h], Init::LstmBias);
        let enc_bw_w = add("encoder.bw.w", vec![e + h, 4 * h], Init::Uniform);
        let enc_bw_b = add("encoder.bw.b", vec![1, 4 * h], Init::LstmBias);
        let bridge_h_w = add("bridge.h.w", vec![2 * h, h], Init::Uniform);
        let bridge_h_b = add("bridge.h.b", vec![1, h], Init::Zero);
        let bridge_c_w = add("bridge.c.w", vec![2 * h, h], Init::Uniform);
        let bridge_c_b = add("bridge.c.b", vec![1, h], Init::Zero);
        let dec_w = add("decoder.w", vec![e + h, 4 * h], Init::Uniform);
        let dec_b = add("decoder.b", vec![1, 4 * h], Init::LstmBias);
        let heads = (0..config.head_count)
            .map(|k| HeadSet {
                w_h: add(&format!("attention.{k}.w_h"), vec![ctx, attn], Init::Uniform),
                w_s: add(&format!("attention.{k}.w_s"), vec![h, attn], Init::Uniform),
                bias: add(&format!("attention.{k}.b"), vec![1, attn], Init::Zero),
                v: add(&format!("attention.{k}.v"), vec![attn, 1], Init::Uniform),
                proj: (config.head_count > 1)
                    .then(|| add(&format!("attention.{k}.proj"), vec![ctx, config.head_dim()], Init::Uniform)),
            })
            .collect();
        let coverage_w = add("attention.0.w_c", vec![1, attn], Init::Uniform);
        let out_w = add("output.w", vec![h + ctx, h], Init::Uniform);
        let out_b = add("output.b", vec![1, h], Init::Zero);
        let vocab_w = add("output.vocab.w", vec![h, v], Init::Uniform);
        let vocab_b = add("output.vocab.b", vec![1, v], Init::Zero);
        let switch_ctx = add("switch.w_ctx", vec![ctx, 1], Init::Uniform);
        let switch_state = add("switch.w_s", vec![h, 1], Init::Uniform);
        let switch_input = add("switch.w_x", vec![e, 1], Init::Uniform);
        let switch_bias = add("switch.b", vec![1, 1], Init::Zero);

        let layout = ParamSet {
            embedding,
            enc_fw_w,
            enc_fw_b,
            enc_bw_w,
            enc_bw_b,
            bridge_h_w,
            bridge_h_b,
            bridge_c_w,
            bridge_c_b,
            dec_w,
            dec_b,
            heads,
            coverage_w,
            out_w,
            out_b,
            vocab_w,
            vocab_b,
            switch_ctx,
            switch_state,
            switch_input,
            switch_bias,
        };
        Ok(Self {
            config,
            tensors: b.tensors,
            names: b.names,
            layout,
        })
    }

    /// Same layout, every entry zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        for t in &mut p.tensors {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(p)
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_entries(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        for t in &mut self.tensors {
            t.requires_grad = on;
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Copies every tensor into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars: Vec<Var> = self.tensors.iter().map(|t| g.leaf(t)).collect();
        self.bind_vars(vars)
    }

    /// Pairs externally created leaves (one per tensor, in order) with the layout.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Bound {
        let set = self.layout.map(|&i| vars[i]);
        Bound { vars, set }
    }

    /// Adds `scale *` each leaf's adjoint into the matching tensor's grad.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound, scale: f64) {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            if let Some(d) = g.grad(v) {
                t.accumulate_grad(d, scale);
            }
        }
    }
}

/// Graph handles for one bound copy of the parameters.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub set: ParamSet<Var>,
}

#[derive(Default)]
struct Builder {
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl Builder {
    fn add(&mut self, name: &str, shape: Vec<usize>, init: Init, rng: &mut ChaCha8Rng) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Uniform => (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect(),
            Init::Zero => vec![0.0; n],
            Init::LstmBias => {
                let h = n / 4;
                (0..n).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect()
            }
        };
        self.tensors.push(Tensor {
            shape,
            data,
            requires_grad: true,
            grad: None,
        });
        self.names.push(name.to_owned());
        self.tensors.len() - 1
    }
}
