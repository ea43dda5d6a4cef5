//! Building blocks for the transformer layers: linear maps, MLP stacks,
//! multi-head attention, post-norm encoder sublayers, and the bind-once
//! machinery that turns parameter structs into tape leaves.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stket_autograd::{Tape, Tensor, ValueId};

use crate::error::Result;

/// FNV-1a over the parameter name, mixed with the run seed. Stable across
/// platforms and releases so initialization is reproducible.
pub fn seeded_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-limit..limit)).with_requires_grad()
}

pub fn small_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, 0.02).expect("valid stddev");
    Tensor::from_fn(shape, |_| normal.sample(rng)).with_requires_grad()
}

/// Records (name, leaf id) for every bound parameter of one tape forward.
pub struct Binder<'t> {
    pub tape: &'t mut Tape,
    pub names: Vec<(String, ValueId)>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t mut Tape) -> Self {
        Binder {
            tape,
            names: Vec::new(),
        }
    }

    pub fn leaf(&mut self, name: String, t: &Tensor) -> ValueId {
        let id = self.tape.leaf(t);
        self.names.push((name, id));
        id
    }
}

/// `y = x·W + b`, with `W: [in × out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Xavier-uniform weights; bias uniform in ±1/√fan_in. The non-zero bias
    /// keeps ReLU pre-activations off the exact kink even for all-zero
    /// inputs (the unseen-pair fallback feeds zero vectors through MLPs).
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            w: xavier_uniform(in_dim, out_dim, rng),
            b: Tensor::from_fn(&[out_dim], |_| rng.gen_range(-bound..bound)).with_requires_grad(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> LinearIds {
        LinearIds {
            w: b.leaf(format!("{prefix}.w"), &self.w),
            b: b.leaf(format!("{prefix}.b"), &self.b),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ValueId,
    pub b: ValueId,
}

impl LinearIds {
    pub fn forward(&self, tape: &mut Tape, x: ValueId) -> Result<ValueId> {
        let h = tape.matmul(x, self.w)?;
        Ok(tape.add_bias(h, self.b)?)
    }
}

/// Affine stack with ReLU between layers and no activation after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`
    pub fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> MlpIds {
        MlpIds {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.bind(b, &format!("{prefix}.{i}")))
                .collect(),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.{i}"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.{i}"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpIds {
    pub layers: Vec<LinearIds>,
}

impl MlpIds {
    pub fn forward(&self, tape: &mut Tape, x: ValueId) -> Result<ValueId> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Layer-norm gain and shift.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl Norm {
    pub fn init(dim: usize) -> Self {
        Norm {
            gamma: Tensor::from_fn(&[dim], |_| 1.0).with_requires_grad(),
            beta: Tensor::zeros(&[dim]).with_requires_grad(),
        }
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> NormIds {
        NormIds {
            gamma: b.leaf(format!("{prefix}.gamma"), &self.gamma),
            beta: b.leaf(format!("{prefix}.beta"), &self.beta),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.gamma"), &self.gamma);
        f(format!("{prefix}.beta"), &self.beta);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gamma: ValueId,
    pub beta: ValueId,
}

/// Dropout state for one forward pass. `eval` mode is the identity; training
/// mode draws masks from a seeded stream so runs are reproducible.
pub struct DropoutCtx {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl DropoutCtx {
    pub fn eval() -> Self {
        DropoutCtx { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, seed: u64) -> Self {
        DropoutCtx {
            rate,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: ValueId) -> Result<ValueId> {
        match self.rng.as_mut() {
            Some(rng) if self.rate > 0.0 => {
                let keep = 1.0 - self.rate;
                let mask: Vec<f64> = (0..tape.value(x).len())
                    .map(|_| if rng.gen_bool(self.rate) { 0.0 } else { 1.0 / keep })
                    .collect();
                Ok(tape.dropout(x, &mask)?)
            }
            _ => Ok(x),
        }
    }
}

/// Q/K/V/output projections of one attention block.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl Attention {
    pub fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Attention {
            wq: Linear::init(dim, dim, rng),
            wk: Linear::init(dim, dim, rng),
            wv: Linear::init(dim, dim, rng),
            wo: Linear::init(dim, dim, rng),
        }
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> AttentionIds {
        AttentionIds {
            wq: self.wq.bind(b, &format!("{prefix}.wq")),
            wk: self.wk.bind(b, &format!("{prefix}.wk")),
            wv: self.wv.bind(b, &format!("{prefix}.wv")),
            wo: self.wo.bind(b, &format!("{prefix}.wo")),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.wq.visit(&format!("{prefix}.wq"), f);
        self.wk.visit(&format!("{prefix}.wk"), f);
        self.wv.visit(&format!("{prefix}.wv"), f);
        self.wo.visit(&format!("{prefix}.wo"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.wq.visit_mut(&format!("{prefix}.wq"), f);
        self.wk.visit_mut(&format!("{prefix}.wk"), f);
        self.wv.visit_mut(&format!("{prefix}.wv"), f);
        self.wo.visit_mut(&format!("{prefix}.wo"), f);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub wq: LinearIds,
    pub wk: LinearIds,
    pub wv: LinearIds,
    pub wo: LinearIds,
}

impl AttentionIds {
    /// Multi-head attention over the rows of `f`.
    ///
    /// `bias_qk`, when present, is added to both the projected queries and
    /// keys (knowledge embeddings plus frame encodings); values never carry
    /// it. `score_mask` is an additive pre-softmax mask.
    pub fn forward(
        &self,
        tape: &mut Tape,
        f: ValueId,
        bias_qk: Option<ValueId>,
        heads: usize,
        dropout: &mut DropoutCtx,
        score_mask: Option<&[f64]>,
    ) -> Result<ValueId> {
        let mut q = self.wq.forward(tape, f)?;
        let mut k = self.wk.forward(tape, f)?;
        if let Some(bias) = bias_qk {
            q = tape.add(q, bias)?;
            k = tape.add(k, bias)?;
        }
        let v = self.wv.forward(tape, f)?;
        let d = tape.shape(q)[1];
        debug_assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rows = tape.shape(q)[0];
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let mut scores = tape.matmul(qh, kt)?;
            scores = tape.affine(scores, scale, 0.0);
            if let Some(mask) = score_mask {
                debug_assert_eq!(mask.len(), rows * rows);
                let m = tape.constant(mask.to_vec(), &[rows, rows]);
                scores = tape.add(scores, m)?;
            }
            let mut attn = tape.softmax_rows(scores)?;
            attn = dropout.apply(tape, attn)?;
            outs.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat(&outs, 1)?;
        self.wo.forward(tape, merged)
    }
}

/// One post-norm encoder layer: attention and FFN sublayers, each followed
/// by residual add and layer norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub norm1: Norm,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub norm2: Norm,
}

impl EncoderLayer {
    pub fn init(dim: usize, ffn_width: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            attn: Attention::init(dim, rng),
            norm1: Norm::init(dim),
            ffn1: Linear::init(dim, ffn_width, rng),
            ffn2: Linear::init(ffn_width, dim, rng),
            norm2: Norm::init(dim),
        }
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> EncoderLayerIds {
        EncoderLayerIds {
            attn: self.attn.bind(b, &format!("{prefix}.attn")),
            norm1: self.norm1.bind(b, &format!("{prefix}.norm1")),
            ffn1: self.ffn1.bind(b, &format!("{prefix}.ffn1")),
            ffn2: self.ffn2.bind(b, &format!("{prefix}.ffn2")),
            norm2: self.norm2.bind(b, &format!("{prefix}.norm2")),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.ffn1.visit(&format!("{prefix}.ffn1"), f);
        self.ffn2.visit(&format!("{prefix}.ffn2"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.ffn1.visit_mut(&format!("{prefix}.ffn1"), f);
        self.ffn2.visit_mut(&format!("{prefix}.ffn2"), f);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerIds {
    pub attn: AttentionIds,
    pub norm1: NormIds,
    pub ffn1: LinearIds,
    pub ffn2: LinearIds,
    pub norm2: NormIds,
}

impl EncoderLayerIds {
    pub fn forward(
        &self,
        tape: &mut Tape,
        f: ValueId,
        bias_qk: Option<ValueId>,
        heads: usize,
        dropout: &mut DropoutCtx,
        score_mask: Option<&[f64]>,
    ) -> Result<ValueId> {
        let att = self
            .attn
            .forward(tape, f, bias_qk, heads, dropout, score_mask)?;
        let att = dropout.apply(tape, att)?;
        let res = tape.add(f, att)?;
        let h = tape.layer_norm(res, self.norm1.gamma, self.norm1.beta)?;
        let ff = self.ffn1.forward(tape, h)?;
        let ff = tape.relu(ff);
        let ff = self.ffn2.forward(tape, ff)?;
        let ff = dropout.apply(tape, ff)?;
        let res2 = tape.add(h, ff)?;
        Ok(tape.layer_norm(res2, self.norm2.gamma, self.norm2.beta)?)
    }
}

/// Multi-label BCE with clamped logs: `−Σ [y log φ + (1−y) log(1−φ)]`,
/// summed over every entry. `phi` must already be in (0, 1).
pub fn bce_sum(tape: &mut Tape, phi: ValueId, labels: &[f64]) -> Result<ValueId> {
    let shape = tape.shape(phi).to_vec();
    debug_assert_eq!(labels.len(), tape.value(phi).len());
    let y = tape.constant(labels.to_vec(), &shape);
    let not_y = tape.affine(y, -1.0, 1.0);
    let log_p = tape.log_clamped(phi);
    let one_m = tape.affine(phi, -1.0, 1.0);
    let log_q = tape.log_clamped(one_m);
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(not_y, log_q)?;
    let both = tape.add(pos, neg)?;
    let s = tape.sum(both);
    Ok(tape.affine(s, -1.0, 0.0))
}
