//! End-to-end forward pass for one video: relationship representations,
//! spatial knowledge-embedded layers, temporal layers over two-frame sliding
//! windows, per-pair aggregation windows, classifier heads, and the summed
//! multi-task loss.

use serde::{Deserialize, Serialize};
use stket_autograd::{Tape, ValueId};

use crate::data::{argmax, link_consecutive, FrameAnnotation, VideoAnnotation};
use crate::error::{CoreError, Result};
use crate::knowledge::Banks;
use crate::model::config::{FirstFrameMode, ModelConfig, TemporalRowMode};
use crate::model::params::{ModelIds, ModelParams};
use crate::model::repr::build_frame_representations;
use crate::nn::{bce_sum, Binder, DropoutCtx};

/// Evaluation task: how much ground truth the model is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Ground-truth boxes and classes; predict predicates.
    PredCls,
    /// Ground-truth boxes; predict classes and predicates.
    SgCls,
    /// Externally supplied proposals; predict everything.
    SgGen,
}

impl TaskMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "predcls" => Ok(TaskMode::PredCls),
            "sgcls" => Ok(TaskMode::SgCls),
            "sggen" => Ok(TaskMode::SgGen),
            other => Err(CoreError::Config(format!(
                "unknown task {other:?} (expected predcls, sgcls, or sggen)"
            ))),
        }
    }
}

pub struct ForwardOptions {
    /// Training mode: dropout active, loss computed.
    pub train: bool,
    pub dropout_seed: u64,
    pub compute_loss: bool,
    pub task: TaskMode,
}

impl ForwardOptions {
    pub fn eval(task: TaskMode) -> Self {
        ForwardOptions {
            train: false,
            dropout_seed: 0,
            compute_loss: false,
            task,
        }
    }

    pub fn train(task: TaskMode, dropout_seed: u64) -> Self {
        ForwardOptions {
            train: true,
            dropout_seed,
            compute_loss: true,
            task,
        }
    }
}

/// Transition rows chosen by the coarse predictions, recorded so a rerun can
/// replay the exact same (non-differentiable) selections.
#[derive(Debug, Clone, Default)]
pub struct FrozenDecisions {
    /// per frame, per relationship: the row fed to the temporal embedder
    pub temporal_rows: Vec<Vec<Vec<f64>>>,
}

/// Numeric per-frame outputs (confidences in (0,1)).
#[derive(Debug, Clone, Default)]
pub struct FrameActivations {
    /// Coarse predictions from the spatial head, `K × C`.
    pub coarse: Vec<Vec<f64>>,
    /// Temporal-head predictions, `K × C`.
    pub temporal: Vec<Vec<f64>>,
    /// Final predictions from the aggregation head, `K × C`.
    pub final_phi: Vec<Vec<f64>>,
    /// Object class probabilities per proposal (SGCls only).
    pub object_probs: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub spatial: f64,
    pub temporal: f64,
    pub aggregated: f64,
    pub spatial_knowledge: f64,
    pub temporal_knowledge: f64,
    pub object: f64,
    pub total: f64,
}

pub struct VideoForward {
    pub tape: Tape,
    /// (parameter name, leaf id) registry from the bind pass.
    pub param_ids: Vec<(String, ValueId)>,
    pub frames: Vec<FrameActivations>,
    pub loss_id: Option<ValueId>,
    pub loss: Option<LossBreakdown>,
    pub decisions: FrozenDecisions,
}

/// Rows of spatial knowledge embeddings for a frame, `[K × d]`; a zero
/// constant when knowledge is disabled.
fn spatial_knowledge_rows(
    tape: &mut Tape,
    ids: &ModelIds,
    banks: &Banks,
    frame: &FrameAnnotation,
    cfg: &ModelConfig,
) -> Result<ValueId> {
    let k = frame.relationships.len();
    if !cfg.knowledge_enabled {
        return Ok(tape.constant(vec![0.0; k * cfg.d()], &[k, cfg.d()]));
    }
    let c = cfg.num_predicates;
    let mut rows = Vec::with_capacity(k * c);
    for idx in 0..k {
        let (i, j) = frame.pair_classes(idx);
        rows.extend(banks.spatial.vector(i, j));
    }
    let e = tape.constant(rows, &[k, c]);
    ids.spa_embed.forward(tape, e)
}

/// Spatial layers: queries and keys carry the knowledge rows, values do not.
/// The same knowledge matrix is added at every stacked layer.
pub fn skel_forward(
    tape: &mut Tape,
    ids: &ModelIds,
    x: ValueId,
    knowledge: ValueId,
    cfg: &ModelConfig,
    dropout: &mut DropoutCtx,
) -> Result<ValueId> {
    let mut f = x;
    for layer in &ids.skel {
        f = layer.forward(tape, f, Some(knowledge), cfg.heads, dropout, None)?;
    }
    Ok(f)
}

/// Additive pre-softmax mask preventing previous-frame rows from attending
/// to current-frame rows.
fn causal_mask(k_prev: usize, total: usize) -> Vec<f64> {
    let mut mask = vec![0.0; total * total];
    for r in 0..k_prev {
        for c in k_prev..total {
            mask[r * total + c] = -1e9;
        }
    }
    mask
}

/// One two-frame temporal window: rows of the previous frame followed by
/// rows of the current frame, with the matching knowledge-plus-encoding
/// bias for queries and keys.
pub struct TemporalWindow {
    pub window: ValueId,
    pub bias: ValueId,
    pub k_prev: usize,
    pub k_curr: usize,
}

/// Run the stacked temporal layers over one window; returns all rows
/// (previous block then current block).
pub fn run_temporal_window(
    tape: &mut Tape,
    ids: &ModelIds,
    w: &TemporalWindow,
    cfg: &ModelConfig,
    dropout: &mut DropoutCtx,
) -> Result<ValueId> {
    let total = w.k_prev + w.k_curr;
    let mask = if cfg.tkel_causal && w.k_prev > 0 {
        Some(causal_mask(w.k_prev, total))
    } else {
        None
    };
    let mut f = w.window;
    for layer in &ids.tkel {
        f = layer.forward(tape, f, Some(w.bias), cfg.heads, dropout, mask.as_deref())?;
    }
    Ok(f)
}

/// One window of the aggregation schedule: positions `[start, end)` of a
/// chain, emitting final representations for the positions in `emit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggWindow {
    pub start: usize,
    pub end: usize,
    pub emit: Vec<usize>,
}

/// Sliding windows of width `tau` over a chain of `len` positions, under the
/// earliest-appearance rule: every position's final representation comes
/// from the first window containing it, so the leading window emits all its
/// positions and each later window emits only its trailing position.
pub fn aggregation_windows(len: usize, tau: usize) -> Vec<AggWindow> {
    assert!(len > 0 && tau > 0);
    if len <= tau {
        return vec![AggWindow {
            start: 0,
            end: len,
            emit: (0..len).collect(),
        }];
    }
    let mut out = Vec::with_capacity(len - tau + 1);
    for start in 0..=len - tau {
        let end = start + tau;
        let emit = if start == 0 {
            (0..tau).collect()
        } else {
            vec![end - 1]
        };
        out.push(AggWindow { start, end, emit });
    }
    out
}

/// One aggregation window: self-attention over a pair's concatenated
/// spatial/temporal rows at width 2d, then projection to d.
pub fn run_aggregation_window(
    tape: &mut Tape,
    ids: &ModelIds,
    rows: &[ValueId],
    cfg: &ModelConfig,
    dropout: &mut DropoutCtx,
) -> Result<ValueId> {
    let cmat = tape.concat(rows, 0)?;
    let two_d = 2 * cfg.d();
    let mut enc_rows = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        enc_rows.push(tape.reshape(ids.sta_enc[i], &[1, two_d])?);
    }
    let enc = tape.concat(&enc_rows, 0)?;
    let att = ids
        .sta
        .attn
        .forward(tape, cmat, Some(enc), cfg.heads, dropout, None)?;
    let att = dropout.apply(tape, att)?;
    let res = tape.add(cmat, att)?;
    let h = tape.layer_norm(res, ids.sta.norm.gamma, ids.sta.norm.beta)?;
    ids.sta.proj.forward(tape, h)
}

/// Spatial knowledge embedding for one class pair: the four-layer embedder
/// applied to the pair's co-occurrence vector, `[1 × d]`.
pub fn spatial_embedding(
    tape: &mut Tape,
    ids: &ModelIds,
    banks: &Banks,
    subject_class: usize,
    object_class: usize,
) -> Result<ValueId> {
    let row = banks.spatial.vector(subject_class, object_class);
    let c = row.len();
    let e = tape.constant(row, &[1, c]);
    ids.spa_embed.forward(tape, e)
}

/// Temporal knowledge embedding: the transition row selected by the coarse
/// confidence vector (argmax or expectation), through the temporal embedder.
pub fn temporal_embedding(
    tape: &mut Tape,
    ids: &ModelIds,
    banks: &Banks,
    subject_class: usize,
    object_class: usize,
    coarse: &[f64],
    mode: TemporalRowMode,
) -> Result<ValueId> {
    let row = match mode {
        TemporalRowMode::Argmax => banks.temporal.row(subject_class, object_class, argmax(coarse)),
        TemporalRowMode::Expected => banks.temporal.row_expected(subject_class, object_class, coarse),
    };
    let c = row.len();
    let e = tape.constant(row, &[1, c]);
    ids.tem_embed.forward(tape, e)
}

fn labels_matrix(frame: &FrameAnnotation, num_predicates: usize) -> Vec<f64> {
    let mut y = vec![0.0; frame.relationships.len() * num_predicates];
    for (k, rel) in frame.relationships.iter().enumerate() {
        for &p in &rel.predicates {
            y[k * num_predicates + p] = 1.0;
        }
    }
    y
}

fn rows_of(tape: &Tape, id: ValueId) -> Vec<Vec<f64>> {
    let shape = tape.shape(id);
    let (m, n) = (shape[0], shape[1]);
    let v = tape.value(id);
    (0..m).map(|r| v[r * n..(r + 1) * n].to_vec()).collect()
}

/// Run the whole network over one video.
pub fn forward_video(
    params: &ModelParams,
    banks: &Banks,
    video: &VideoAnnotation,
    cfg: &ModelConfig,
    opts: &ForwardOptions,
    frozen: Option<&FrozenDecisions>,
) -> Result<VideoForward> {
    let mut tape = Tape::new();
    let (ids, param_ids) = {
        let mut binder = Binder::new(&mut tape);
        let ids = params.bind(&mut binder);
        let names = std::mem::take(&mut binder.names);
        (ids, names)
    };
    let mut dropout = if opts.train && cfg.dropout > 0.0 {
        DropoutCtx::train(cfg.dropout, opts.dropout_seed)
    } else {
        DropoutCtx::eval()
    };

    let d = cfg.d();
    let c = cfg.num_predicates;
    let t_frames = video.frames.len();
    let counts: Vec<usize> = video.frames.iter().map(|f| f.relationships.len()).collect();

    // spatial pass
    let mut fs: Vec<Option<ValueId>> = Vec::with_capacity(t_frames);
    let mut s_rows: Vec<Option<ValueId>> = Vec::with_capacity(t_frames);
    let mut coarse_ids: Vec<Option<ValueId>> = Vec::with_capacity(t_frames);
    for frame in &video.frames {
        match build_frame_representations(&mut tape, &ids, frame, cfg)? {
            None => {
                fs.push(None);
                s_rows.push(None);
                coarse_ids.push(None);
            }
            Some(x) => {
                let s = spatial_knowledge_rows(&mut tape, &ids, banks, frame, cfg)?;
                let f = skel_forward(&mut tape, &ids, x, s, cfg, &mut dropout)?;
                let coarse = ids.head_spatial.forward(&mut tape, f)?;
                fs.push(Some(f));
                s_rows.push(Some(s));
                coarse_ids.push(Some(coarse));
            }
        }
    }

    // temporal knowledge rows for frames that precede another frame
    let mut decisions = FrozenDecisions {
        temporal_rows: vec![Vec::new(); t_frames],
    };
    let mut t_rows: Vec<Option<ValueId>> = vec![None; t_frames];
    for t in 0..t_frames.saturating_sub(1) {
        let k = counts[t];
        if k == 0 {
            continue;
        }
        let coarse = rows_of(&tape, coarse_ids[t].expect("frame has rows"));
        let mut rows = Vec::with_capacity(k * c);
        for idx in 0..k {
            let row = if let Some(f) = frozen {
                f.temporal_rows[t][idx].clone()
            } else if cfg.knowledge_enabled {
                let (i, j) = video.frames[t].pair_classes(idx);
                match cfg.temporal_row_mode {
                    TemporalRowMode::Argmax => banks.temporal.row(i, j, argmax(&coarse[idx])),
                    TemporalRowMode::Expected => banks.temporal.row_expected(i, j, &coarse[idx]),
                }
            } else {
                vec![0.0; c]
            };
            decisions.temporal_rows[t].push(row.clone());
            rows.extend(row);
        }
        let id = if cfg.knowledge_enabled {
            let e = tape.constant(rows, &[k, c]);
            Some(ids.tem_embed.forward(&mut tape, e)?)
        } else {
            Some(tape.constant(vec![0.0; k * d], &[k, d]))
        };
        t_rows[t] = id;
    }

    // temporal pass: two-frame sliding windows, earliest-representation rule
    let mut ft: Vec<Option<ValueId>> = vec![None; t_frames];
    let mut temporal_phi: Vec<Option<ValueId>> = vec![None; t_frames];
    for t in 0..t_frames {
        let Some(curr) = fs[t] else { continue };
        let k_curr = counts[t];
        let s_bias = tape.add_bias(s_rows[t].expect("rows exist"), ids.e2)?;
        let window = if t == 0 {
            match cfg.tkel_first_frame {
                FirstFrameMode::Solo => TemporalWindow {
                    window: curr,
                    bias: s_bias,
                    k_prev: 0,
                    k_curr,
                },
                FirstFrameMode::Duplicate => {
                    let zero_t = tape.constant(vec![0.0; k_curr * d], &[k_curr, d]);
                    let t_bias = tape.add_bias(zero_t, ids.e1)?;
                    let window = tape.concat(&[curr, curr], 0)?;
                    let bias = tape.concat(&[t_bias, s_bias], 0)?;
                    TemporalWindow {
                        window,
                        bias,
                        k_prev: k_curr,
                        k_curr,
                    }
                }
            }
        } else {
            match fs[t - 1] {
                None => TemporalWindow {
                    window: curr,
                    bias: s_bias,
                    k_prev: 0,
                    k_curr,
                },
                Some(prev) => {
                    let t_prev = t_rows[t - 1].expect("temporal rows built for prev frame");
                    let t_bias = tape.add_bias(t_prev, ids.e1)?;
                    let window = tape.concat(&[prev, curr], 0)?;
                    let bias = tape.concat(&[t_bias, s_bias], 0)?;
                    TemporalWindow {
                        window,
                        bias,
                        k_prev: counts[t - 1],
                        k_curr,
                    }
                }
            }
        };
        let full = run_temporal_window(&mut tape, &ids, &window, cfg, &mut dropout)?;
        // earliest-appearance rule: each frame keeps the trailing block of
        // the window ending at it
        let out = if window.k_prev == 0 {
            full
        } else {
            tape.slice_rows(full, window.k_prev, window.k_curr)?
        };
        ft[t] = Some(out);
        temporal_phi[t] = Some(ids.head_temporal.forward(&mut tape, out)?);
    }

    // pair chains: maximal runs of tracked relationships over consecutive frames
    let links: Vec<Vec<Option<usize>>> = video
        .frames
        .windows(2)
        .map(|w| link_consecutive(&w[0], &w[1]))
        .collect();
    let mut chain_of: Vec<Vec<usize>> = counts.iter().map(|&k| vec![usize::MAX; k]).collect();
    let mut chains: Vec<Vec<(usize, usize)>> = Vec::new();
    for t in 0..t_frames {
        for k in 0..counts[t] {
            let prev = if t > 0 { links[t - 1][k] } else { None };
            match prev {
                Some(pk) => {
                    let cid = chain_of[t - 1][pk];
                    chains[cid].push((t, k));
                    chain_of[t][k] = cid;
                }
                None => {
                    chains.push(vec![(t, k)]);
                    chain_of[t][k] = chains.len() - 1;
                }
            }
        }
    }

    // aggregation: per-chain sliding windows of width τ
    let tau = cfg.window;
    let mut final_rep: Vec<Vec<Option<ValueId>>> =
        counts.iter().map(|&k| vec![None; k]).collect();
    for chain in &chains {
        let len = chain.len();
        let pair_row = |tape: &mut Tape, pos: usize| -> Result<ValueId> {
            let (t, k) = chain[pos];
            let s_row = tape.slice_rows(fs[t].expect("chain rows exist"), k, 1)?;
            let t_row = tape.slice_rows(ft[t].expect("chain rows exist"), k, 1)?;
            Ok(tape.concat(&[s_row, t_row], 1)?)
        };
        for w in aggregation_windows(len, tau) {
            let mut rows = Vec::with_capacity(w.end - w.start);
            for pos in w.start..w.end {
                rows.push(pair_row(&mut tape, pos)?);
            }
            let out = run_aggregation_window(&mut tape, &ids, &rows, cfg, &mut dropout)?;
            for &pos in &w.emit {
                let (t, k) = chain[pos];
                debug_assert!(final_rep[t][k].is_none(), "final representation computed twice");
                final_rep[t][k] = Some(tape.slice_rows(out, pos - w.start, 1)?);
            }
        }
    }

    // final head per frame
    let mut final_ids: Vec<Option<ValueId>> = vec![None; t_frames];
    for t in 0..t_frames {
        if counts[t] == 0 {
            continue;
        }
        let rows: Vec<ValueId> = (0..counts[t])
            .map(|k| final_rep[t][k].expect("every relationship aggregated exactly once"))
            .collect();
        let mat = tape.concat(&rows, 0)?;
        final_ids[t] = Some(ids.head_final.forward(&mut tape, mat)?);
    }

    // object classifier (SGCls path; SGGen consumes provided distributions)
    let need_obj = matches!(opts.task, TaskMode::SgCls);
    let mut obj_prob_ids: Vec<Option<ValueId>> = vec![None; t_frames];
    if need_obj || (opts.compute_loss && matches!(opts.task, TaskMode::SgCls | TaskMode::SgGen)) {
        for (t, frame) in video.frames.iter().enumerate() {
            if frame.proposals.is_empty() {
                continue;
            }
            let mut feats = Vec::with_capacity(frame.proposals.len() * cfg.visual_dim);
            for p in &frame.proposals {
                match &p.visual_feature {
                    Some(f) if f.numel() == cfg.visual_dim => feats.extend_from_slice(f.data()),
                    _ => {
                        return Err(CoreError::Data(format!(
                            "object classifier requires {}-d proposal features (video {}, frame {})",
                            cfg.visual_dim, video.video_id, frame.frame_index
                        )))
                    }
                }
            }
            let x = tape.constant(feats, &[frame.proposals.len(), cfg.visual_dim]);
            let logits = ids.obj_head.forward(&mut tape, x)?;
            obj_prob_ids[t] = Some(tape.softmax_rows(logits)?);
        }
    }

    // losses
    let mut loss_id = None;
    let mut loss = None;
    if opts.compute_loss {
        let mut terms = LossBreakdown::default();
        let mut acc: Option<ValueId> = None;
        let add_term = |tape: &mut Tape, acc: &mut Option<ValueId>, id: ValueId| -> Result<f64> {
            let v = tape.value(id)[0];
            *acc = Some(match acc.take() {
                None => id,
                Some(prev) => tape.add(prev, id)?,
            });
            Ok(v)
        };
        for t in 0..t_frames {
            if counts[t] == 0 {
                continue;
            }
            let y = labels_matrix(&video.frames[t], c);
            let l_s = bce_sum(&mut tape, coarse_ids[t].unwrap(), &y)?;
            terms.spatial += add_term(&mut tape, &mut acc, l_s)?;
            let l_t = bce_sum(&mut tape, temporal_phi[t].unwrap(), &y)?;
            terms.temporal += add_term(&mut tape, &mut acc, l_t)?;
            let l_c = bce_sum(&mut tape, final_ids[t].unwrap(), &y)?;
            terms.aggregated += add_term(&mut tape, &mut acc, l_c)?;

            // knowledge heads: spatial embeddings predict this frame's labels
            let s_logits = ids.spa_aux_head.forward(&mut tape, s_rows[t].unwrap())?;
            let s_phi = tape.sigmoid(s_logits);
            let l_spk = bce_sum(&mut tape, s_phi, &y)?;
            terms.spatial_knowledge += add_term(&mut tape, &mut acc, l_spk)?;

            // temporal embeddings predict the next frame's labels for pairs
            // with a tracked successor
            if t + 1 < t_frames && t_rows[t].is_some() {
                let mut next_labels = Vec::new();
                let mut row_ids = Vec::new();
                for (k_next, maybe_prev) in links[t].iter().enumerate() {
                    let Some(pk) = maybe_prev else { continue };
                    let row = tape.slice_rows(t_rows[t].unwrap(), *pk, 1)?;
                    row_ids.push(row);
                    let mut y_next = vec![0.0; c];
                    for &p in &video.frames[t + 1].relationships[k_next].predicates {
                        y_next[p] = 1.0;
                    }
                    next_labels.extend(y_next);
                }
                if !row_ids.is_empty() {
                    let mat = tape.concat(&row_ids, 0)?;
                    let logits = ids.tem_aux_head.forward(&mut tape, mat)?;
                    let phi = tape.sigmoid(logits);
                    let l_tpk = bce_sum(&mut tape, phi, &next_labels)?;
                    terms.temporal_knowledge += add_term(&mut tape, &mut acc, l_tpk)?;
                }
            }

            // object cross entropy for the class-prediction tasks
            if matches!(opts.task, TaskMode::SgCls | TaskMode::SgGen) {
                if let Some(probs) = obj_prob_ids[t] {
                    let frame = &video.frames[t];
                    let n = frame.proposals.len();
                    let mut onehot = vec![0.0; n * cfg.num_object_classes];
                    for (i, p) in frame.proposals.iter().enumerate() {
                        onehot[i * cfg.num_object_classes + p.predicted_class] = 1.0;
                    }
                    let oh = tape.constant(onehot, &[n, cfg.num_object_classes]);
                    let logp = tape.log_clamped(probs);
                    let picked = tape.mul(oh, logp)?;
                    let summed = tape.sum(picked);
                    let l_obj = tape.affine(summed, -1.0, 0.0);
                    terms.object += add_term(&mut tape, &mut acc, l_obj)?;
                }
            }
        }
        let total_id = match acc {
            Some(id) => id,
            None => tape.constant(vec![0.0], &[1]),
        };
        terms.total = tape.value(total_id)[0];
        if !terms.total.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite loss on video {}: {terms:?}",
                video.video_id
            )));
        }
        loss_id = Some(total_id);
        loss = Some(terms);
    }

    // extract numeric activations
    let mut frames = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        frames.push(FrameActivations {
            coarse: coarse_ids[t].map(|id| rows_of(&tape, id)).unwrap_or_default(),
            temporal: temporal_phi[t].map(|id| rows_of(&tape, id)).unwrap_or_default(),
            final_phi: final_ids[t].map(|id| rows_of(&tape, id)).unwrap_or_default(),
            object_probs: if need_obj {
                obj_prob_ids[t].map(|id| rows_of(&tape, id))
            } else {
                None
            },
        });
    }

    Ok(VideoForward {
        tape,
        param_ids,
        frames,
        loss_id,
        loss,
        decisions,
    })
}
