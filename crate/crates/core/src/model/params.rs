use std::collections::HashMap;

use stket_autograd::{Tape, Tensor, ValueId};

use crate::error::{CoreError, Result};
use crate::model::config::{ClassifierMode, ModelConfig};
use crate::nn::{
    seeded_rng, small_normal, Attention, AttentionIds, Binder, EncoderLayer, EncoderLayerIds,
    Linear, LinearIds, Mlp, MlpIds, Norm, NormIds,
};

/// Predicate classifier: one head, or one head per predicate type group.
#[derive(Debug, Clone)]
pub enum ClassifierHead {
    Single(Linear),
    Three(Vec<Linear>),
}

impl ClassifierHead {
    fn init(cfg: &ModelConfig, name: &str, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, name);
        match cfg.classifier_mode {
            ClassifierMode::SingleHead => {
                ClassifierHead::Single(Linear::init(cfg.d(), cfg.num_predicates, &mut rng))
            }
            ClassifierMode::ThreeHead => ClassifierHead::Three(
                cfg.predicate_type_sizes
                    .iter()
                    .map(|&sz| Linear::init(cfg.d(), sz, &mut rng))
                    .collect(),
            ),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        match self {
            ClassifierHead::Single(l) => l.visit(prefix, f),
            ClassifierHead::Three(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    l.visit(&format!("{prefix}.{i}"), f);
                }
            }
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            ClassifierHead::Single(l) => l.visit_mut(prefix, f),
            ClassifierHead::Three(ls) => {
                for (i, l) in ls.iter_mut().enumerate() {
                    l.visit_mut(&format!("{prefix}.{i}"), f);
                }
            }
        }
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> ClassifierHeadIds {
        match self {
            ClassifierHead::Single(l) => ClassifierHeadIds::Single(l.bind(b, prefix)),
            ClassifierHead::Three(ls) => ClassifierHeadIds::Three(
                ls.iter()
                    .enumerate()
                    .map(|(i, l)| l.bind(b, &format!("{prefix}.{i}")))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ClassifierHeadIds {
    Single(LinearIds),
    Three(Vec<LinearIds>),
}

impl ClassifierHeadIds {
    /// Sigmoid confidences over all predicates, `[rows × C]`.
    pub fn forward(&self, tape: &mut Tape, x: ValueId) -> Result<ValueId> {
        let logits = self.logits(tape, x)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn logits(&self, tape: &mut Tape, x: ValueId) -> Result<ValueId> {
        match self {
            ClassifierHeadIds::Single(l) => l.forward(tape, x),
            ClassifierHeadIds::Three(ls) => {
                let mut parts = Vec::with_capacity(ls.len());
                for l in ls {
                    parts.push(l.forward(tape, x)?);
                }
                Ok(tape.concat(&parts, 1)?)
            }
        }
    }
}

/// The aggregation block: self-attention at width 2d over a pair's window,
/// then projection down to d.
#[derive(Debug, Clone)]
pub struct StaLayer {
    pub attn: Attention,
    pub norm: Norm,
    pub proj: Linear,
}

impl StaLayer {
    fn init(d: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        StaLayer {
            attn: Attention::init(2 * d, rng),
            norm: Norm::init(2 * d),
            proj: Linear::init(2 * d, d, rng),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.norm.visit(&format!("{prefix}.norm"), f);
        self.proj.visit(&format!("{prefix}.proj"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
        self.proj.visit_mut(&format!("{prefix}.proj"), f);
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> StaLayerIds {
        StaLayerIds {
            attn: self.attn.bind(b, &format!("{prefix}.attn")),
            norm: self.norm.bind(b, &format!("{prefix}.norm")),
            proj: self.proj.bind(b, &format!("{prefix}.proj")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StaLayerIds {
    pub attn: AttentionIds,
    pub norm: NormIds,
    pub proj: LinearIds,
}

/// Every learnable weight of the network.
#[derive(Debug, Clone)]
pub struct ModelParams {
    // relationship representation builder
    pub f_s: Linear,
    pub f_o: Linear,
    pub f_u: Linear,
    /// Projects the two occupancy masks to union-map channels.
    pub f_box: Linear,
    /// `[num_object_classes × semantic_dim]` embedding table.
    pub sem_table: Tensor,

    // knowledge embedders with their auxiliary prediction heads
    pub spa_embed: Mlp,
    pub spa_aux_head: Linear,
    pub tem_embed: Mlp,
    pub tem_aux_head: Linear,

    // encoder stacks
    pub skel: Vec<EncoderLayer>,
    pub tkel: Vec<EncoderLayer>,
    /// Window-position encodings for the temporal layers: previous frame,
    /// current frame. Each `[d]`.
    pub frame_enc: [Tensor; 2],
    pub sta: StaLayer,
    /// Window-position encodings for aggregation, τ of them, each `[2d]`.
    pub sta_enc: Vec<Tensor>,

    // classifier heads: the coarse head doubles as the spatial-loss head
    pub head_spatial: ClassifierHead,
    pub head_temporal: ClassifierHead,
    pub head_final: ClassifierHead,
    /// Object classifier over proposal features (used by SGCls / SGGen).
    pub obj_head: Linear,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let d = cfg.d();
        let [h1, h2, h3] = cfg.knowledge_hidden;
        let embed_dims = [cfg.num_predicates, h1, h2, h3, d];
        let rng_for = |name: &str| seeded_rng(seed, name);
        ModelParams {
            f_s: Linear::init(cfg.visual_dim, cfg.proj_dim, &mut rng_for("repr.f_s")),
            f_o: Linear::init(cfg.visual_dim, cfg.proj_dim, &mut rng_for("repr.f_o")),
            f_u: Linear::init(cfg.union_flat(), cfg.proj_dim, &mut rng_for("repr.f_u")),
            f_box: Linear::init(2, cfg.union_channels, &mut rng_for("repr.f_box")),
            sem_table: small_normal(
                &[cfg.num_object_classes, cfg.semantic_dim],
                &mut rng_for("repr.sem_table"),
            ),
            spa_embed: Mlp::init(&embed_dims, &mut rng_for("spa.mlp")),
            spa_aux_head: Linear::init(d, cfg.num_predicates, &mut rng_for("spa.head")),
            tem_embed: Mlp::init(&embed_dims, &mut rng_for("tem.mlp")),
            tem_aux_head: Linear::init(d, cfg.num_predicates, &mut rng_for("tem.head")),
            skel: (0..cfg.num_spatial_layers)
                .map(|i| EncoderLayer::init(d, cfg.ffn_width, &mut rng_for(&format!("skel.{i}"))))
                .collect(),
            tkel: (0..cfg.num_temporal_layers)
                .map(|i| EncoderLayer::init(d, cfg.ffn_width, &mut rng_for(&format!("tkel.{i}"))))
                .collect(),
            frame_enc: [
                small_normal(&[d], &mut rng_for("enc.e1")),
                small_normal(&[d], &mut rng_for("enc.e2")),
            ],
            sta: StaLayer::init(d, &mut rng_for("sta")),
            sta_enc: (0..cfg.window)
                .map(|i| small_normal(&[2 * d], &mut rng_for(&format!("sta.enc.{i}"))))
                .collect(),
            head_spatial: ClassifierHead::init(cfg, "head.s", seed),
            head_temporal: ClassifierHead::init(cfg, "head.t", seed),
            head_final: ClassifierHead::init(cfg, "head.c", seed),
            obj_head: Linear::init(cfg.visual_dim, cfg.num_object_classes, &mut rng_for("obj")),
        }
    }

    /// Walk every tensor in a stable order with its canonical name.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.f_s.visit("repr.f_s", f);
        self.f_o.visit("repr.f_o", f);
        self.f_u.visit("repr.f_u", f);
        self.f_box.visit("repr.f_box", f);
        f("repr.sem_table".into(), &self.sem_table);
        self.spa_embed.visit("spa.mlp", f);
        self.spa_aux_head.visit("spa.head", f);
        self.tem_embed.visit("tem.mlp", f);
        self.tem_aux_head.visit("tem.head", f);
        for (i, l) in self.skel.iter().enumerate() {
            l.visit(&format!("skel.{i}"), f);
        }
        for (i, l) in self.tkel.iter().enumerate() {
            l.visit(&format!("tkel.{i}"), f);
        }
        f("enc.e1".into(), &self.frame_enc[0]);
        f("enc.e2".into(), &self.frame_enc[1]);
        self.sta.visit("sta", f);
        for (i, e) in self.sta_enc.iter().enumerate() {
            f(format!("sta.enc.{i}"), e);
        }
        self.head_spatial.visit("head.s", f);
        self.head_temporal.visit("head.t", f);
        self.head_final.visit("head.c", f);
        self.obj_head.visit("obj", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.f_s.visit_mut("repr.f_s", f);
        self.f_o.visit_mut("repr.f_o", f);
        self.f_u.visit_mut("repr.f_u", f);
        self.f_box.visit_mut("repr.f_box", f);
        f("repr.sem_table".into(), &mut self.sem_table);
        self.spa_embed.visit_mut("spa.mlp", f);
        self.spa_aux_head.visit_mut("spa.head", f);
        self.tem_embed.visit_mut("tem.mlp", f);
        self.tem_aux_head.visit_mut("tem.head", f);
        for (i, l) in self.skel.iter_mut().enumerate() {
            l.visit_mut(&format!("skel.{i}"), f);
        }
        for (i, l) in self.tkel.iter_mut().enumerate() {
            l.visit_mut(&format!("tkel.{i}"), f);
        }
        f("enc.e1".into(), &mut self.frame_enc[0]);
        f("enc.e2".into(), &mut self.frame_enc[1]);
        self.sta.visit_mut("sta", f);
        for (i, e) in self.sta_enc.iter_mut().enumerate() {
            f(format!("sta.enc.{i}"), e);
        }
        self.head_spatial.visit_mut("head.s", f);
        self.head_temporal.visit_mut("head.t", f);
        self.head_final.visit_mut("head.c", f);
        self.obj_head.visit_mut("obj", f);
    }

    /// Bind every parameter once as a tape leaf.
    pub fn bind(&self, binder: &mut Binder) -> ModelIds {
        ModelIds {
            f_s: self.f_s.bind(binder, "repr.f_s"),
            f_o: self.f_o.bind(binder, "repr.f_o"),
            f_u: self.f_u.bind(binder, "repr.f_u"),
            f_box: self.f_box.bind(binder, "repr.f_box"),
            sem_table: binder.leaf("repr.sem_table".into(), &self.sem_table),
            spa_embed: self.spa_embed.bind(binder, "spa.mlp"),
            spa_aux_head: self.spa_aux_head.bind(binder, "spa.head"),
            tem_embed: self.tem_embed.bind(binder, "tem.mlp"),
            tem_aux_head: self.tem_aux_head.bind(binder, "tem.head"),
            skel: self
                .skel
                .iter()
                .enumerate()
                .map(|(i, l)| l.bind(binder, &format!("skel.{i}")))
                .collect(),
            tkel: self
                .tkel
                .iter()
                .enumerate()
                .map(|(i, l)| l.bind(binder, &format!("tkel.{i}")))
                .collect(),
            e1: binder.leaf("enc.e1".into(), &self.frame_enc[0]),
            e2: binder.leaf("enc.e2".into(), &self.frame_enc[1]),
            sta: self.sta.bind(binder, "sta"),
            sta_enc: self
                .sta_enc
                .iter()
                .enumerate()
                .map(|(i, e)| binder.leaf(format!("sta.enc.{i}"), e))
                .collect(),
            head_spatial: self.head_spatial.bind(binder, "head.s"),
            head_temporal: self.head_temporal.bind(binder, "head.t"),
            head_final: self.head_final.bind(binder, "head.c"),
            obj_head: self.obj_head.bind(binder, "obj"),
        }
    }

    /// Total scalar parameter count.
    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Map of name → shape for dimension audits.
    pub fn shape_manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t.shape().to_vec())));
        out
    }

    /// Fetch a parameter tensor by canonical name.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        let mut found = None;
        self.visit(&mut |n, t| {
            if n == name {
                found = Some(t);
            }
        });
        found
    }

    /// Apply gradients from a backward pass onto the `grad` fields.
    pub fn set_grads(&mut self, grads: &HashMap<String, Vec<f64>>) -> Result<()> {
        let mut missing = Vec::new();
        self.visit_mut(&mut |name, t| match grads.get(&name) {
            Some(g) => t.grad = Some(g.clone()),
            None => missing.push(name),
        });
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CoreError::Numeric(format!(
                "gradients missing for parameters: {missing:?}"
            )))
        }
    }
}

/// Tape leaf ids mirroring [`ModelParams`] for one forward pass.
pub struct ModelIds {
    pub f_s: LinearIds,
    pub f_o: LinearIds,
    pub f_u: LinearIds,
    pub f_box: LinearIds,
    pub sem_table: ValueId,
    pub spa_embed: MlpIds,
    pub spa_aux_head: LinearIds,
    pub tem_embed: MlpIds,
    pub tem_aux_head: LinearIds,
    pub skel: Vec<EncoderLayerIds>,
    pub tkel: Vec<EncoderLayerIds>,
    pub e1: ValueId,
    pub e2: ValueId,
    pub sta: StaLayerIds,
    pub sta_enc: Vec<ValueId>,
    pub head_spatial: ClassifierHeadIds,
    pub head_temporal: ClassifierHeadIds,
    pub head_final: ClassifierHeadIds,
    pub obj_head: LinearIds,
}
