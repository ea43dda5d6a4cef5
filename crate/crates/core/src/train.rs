//! Optimization loop: AdamW with decoupled weight decay, global-norm
//! gradient clipping, deterministic per-(epoch, video) dropout streams, and
//! resumable optimizer-state checkpoints.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stket_autograd::io::{parse_ref, Dtype, TensorFileReader, TensorFileWriter};
use stket_autograd::Tensor;

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::knowledge::Banks;
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::{forward_video, ForwardOptions, LossBreakdown, ModelConfig, ModelParams, TaskMode, VideoForward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub task: TaskMode,
    /// Save a resumable checkpoint every N epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            epochs: 10,
            seed: 0,
            lr: 2e-5,
            clip_norm: 5.0,
            weight_decay: 1e-4,
            task: TaskMode::PredCls,
            checkpoint_every: 0,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(CoreError::Config(format!("lr {} must be >= 0", self.lr)));
        }
        if self.clip_norm <= 0.0 {
            return Err(CoreError::Config(format!(
                "clip_norm {} must be > 0",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// AdamW moments per parameter plus the shared step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: HashMap<String, Vec<f64>>,
    pub second: HashMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let mut first = HashMap::new();
        let mut second = HashMap::new();
        params.visit(&mut |name, t| {
            first.insert(name.clone(), vec![0.0; t.numel()]);
            second.insert(name, vec![0.0; t.numel()]);
        });
        OptimizerState {
            step: 0,
            first,
            second,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the applied factor (1.0 when no clipping happened). The norm is
/// accumulated in sorted name order so results are bit-reproducible.
pub fn clip_gradients(grads: &mut HashMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    let mut sq = 0.0;
    for name in &names {
        for g in &grads[*name] {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    for g in grads.values_mut().flat_map(|v| v.iter_mut()) {
        *g *= factor;
    }
    factor
}

/// One AdamW update over every parameter, reading `Tensor::grad`.
/// Weight decay is decoupled: `θ ← θ(1 − lr λ) − lr m̂ / (√v̂ + ε)`.
pub fn adamw_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let mut problem = None;
    params.visit_mut(&mut |name, tensor| {
        if problem.is_some() {
            return;
        }
        let Some(grad) = tensor.grad.take() else {
            problem = Some(format!("parameter {name} has no gradient"));
            return;
        };
        let m = state.first.get_mut(&name).expect("moment allocated");
        let v = state.second.get_mut(&name).expect("moment allocated");
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] = data[i] * (1.0 - lr * weight_decay) - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    });
    match problem {
        Some(p) => Err(CoreError::Numeric(p)),
        None => Ok(()),
    }
}

/// Extract per-parameter gradients from a finished forward/backward pass.
pub fn extract_gradients(fwd: &VideoForward) -> Result<HashMap<String, Vec<f64>>> {
    let loss = fwd
        .loss_id
        .ok_or_else(|| CoreError::Numeric("forward pass carried no loss".into()))?;
    let grads = fwd.tape.backward(loss)?;
    let mut out = HashMap::new();
    for (name, id) in &fwd.param_ids {
        let g = grads
            .get(*id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; fwd.tape.value(*id).len()]);
        out.insert(name.clone(), g);
    }
    Ok(out)
}

/// Stateless dropout stream id for (run seed, epoch, video index).
fn dropout_seed(seed: u64, epoch: usize, video_idx: usize) -> u64 {
    let mut h = seed ^ 0x243f_6a88_85a3_08d3;
    for x in [epoch as u64, video_idx as u64] {
        h ^= x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
    }
    h
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoProgress<'a> {
    pub epoch: usize,
    pub video: &'a str,
    pub loss: LossBreakdown,
    pub clip_factor: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: LossBreakdown,
}

/// One pass over the dataset: per video forward, backward, clip, step.
pub fn train_epoch(
    params: &mut ModelParams,
    banks: &Banks,
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    run: &TrainRunConfig,
    state: &mut OptimizerState,
    epoch: usize,
    on_video: &mut dyn FnMut(&VideoProgress),
) -> Result<EpochSummary> {
    let mut sum = LossBreakdown::default();
    for (vi, video) in dataset.videos.iter().enumerate() {
        let opts = ForwardOptions::train(run.task, dropout_seed(run.seed, epoch, vi));
        let fwd = forward_video(params, banks, video, model_cfg, &opts, None).map_err(|e| {
            CoreError::Numeric(format!("epoch {epoch} video {}: {e}", video.video_id))
        })?;
        let loss = fwd.loss.expect("training forward computes loss");
        if !loss.total.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite loss at epoch {epoch} video {}: {loss:?}",
                video.video_id
            )));
        }
        let mut grads = extract_gradients(&fwd)?;
        drop(fwd);
        let clip_factor = clip_gradients(&mut grads, run.clip_norm);
        params.set_grads(&grads)?;
        adamw_step(params, state, run.lr, run.weight_decay)?;

        sum.spatial += loss.spatial;
        sum.temporal += loss.temporal;
        sum.aggregated += loss.aggregated;
        sum.spatial_knowledge += loss.spatial_knowledge;
        sum.temporal_knowledge += loss.temporal_knowledge;
        sum.object += loss.object;
        sum.total += loss.total;
        on_video(&VideoProgress {
            epoch,
            video: &video.video_id,
            loss,
            clip_factor,
        });
    }
    let n = dataset.videos.len().max(1) as f64;
    Ok(EpochSummary {
        epoch,
        mean_loss: LossBreakdown {
            spatial: sum.spatial / n,
            temporal: sum.temporal / n,
            aggregated: sum.aggregated / n,
            spatial_knowledge: sum.spatial_knowledge / n,
            temporal_knowledge: sum.temporal_knowledge / n,
            object: sum.object / n,
            total: sum.total / n,
        },
    })
}

/// Train for `run.epochs`, starting at `start_epoch` (resume support).
pub fn train(
    params: &mut ModelParams,
    banks: &Banks,
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    run: &TrainRunConfig,
    state: &mut OptimizerState,
    start_epoch: usize,
    on_video: &mut dyn FnMut(&VideoProgress),
) -> Result<Vec<EpochSummary>> {
    run.validate()?;
    model_cfg.check_dataset(dataset.num_classes(), dataset.num_predicates())?;
    let mut summaries = Vec::new();
    for epoch in start_epoch..run.epochs {
        summaries.push(train_epoch(
            params, banks, dataset, model_cfg, run, state, epoch, on_video,
        )?);
    }
    Ok(summaries)
}

// ── resumable checkpoints ───────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct OptimManifest {
    step: u64,
    next_epoch: usize,
    run: TrainRunConfig,
    moments: Vec<MomentRef>,
}

#[derive(Serialize, Deserialize)]
struct MomentRef {
    name: String,
    first_ref: String,
    second_ref: String,
}

/// Model checkpoint plus optimizer state and epoch cursor.
pub fn save_train_state(
    dir: &Path,
    cfg: &ModelConfig,
    params: &ModelParams,
    banks: &Banks,
    state: &OptimizerState,
    run: &TrainRunConfig,
    next_epoch: usize,
) -> Result<()> {
    save_checkpoint(dir, cfg, params, banks)?;
    let mut writer = TensorFileWriter::create(&dir.join("optim.stkt"), "optim.stkt")?;
    let mut moments = Vec::new();
    let mut names: Vec<&String> = state.first.keys().collect();
    names.sort();
    for name in names {
        let m = Tensor::new(state.first[name].clone(), &[state.first[name].len()])?;
        let v = Tensor::new(state.second[name].clone(), &[state.second[name].len()])?;
        moments.push(MomentRef {
            name: name.clone(),
            first_ref: writer.append(&m, Dtype::F64)?,
            second_ref: writer.append(&v, Dtype::F64)?,
        });
    }
    writer.finish()?;
    let manifest = OptimManifest {
        step: state.step,
        next_epoch,
        run: run.clone(),
        moments,
    };
    fs::write(dir.join("optim.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub struct ResumedTrainState {
    pub cfg: ModelConfig,
    pub params: ModelParams,
    pub banks: Banks,
    pub state: OptimizerState,
    pub run: TrainRunConfig,
    pub next_epoch: usize,
}

pub fn load_train_state(dir: &Path) -> Result<ResumedTrainState> {
    let (cfg, params, banks) = load_checkpoint(dir)?;
    let text = fs::read_to_string(dir.join("optim.json"))
        .map_err(|e| CoreError::parse(dir.display().to_string(), format!("missing optimizer state: {e}")))?;
    let manifest: OptimManifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::parse(dir.display().to_string(), e.to_string()))?;
    let mut reader = TensorFileReader::open(&dir.join("optim.stkt"))?;
    let mut state = OptimizerState::new(&params);
    state.step = manifest.step;
    for m in &manifest.moments {
        let (_, off1) = parse_ref(&m.first_ref)?;
        let (_, off2) = parse_ref(&m.second_ref)?;
        let first = reader.read_at(off1)?;
        let second = reader.read_at(off2)?;
        let slot1 = state
            .first
            .get_mut(&m.name)
            .ok_or_else(|| CoreError::Config(format!("optimizer moment for unknown parameter {}", m.name)))?;
        if slot1.len() != first.numel() {
            return Err(CoreError::Config(format!(
                "optimizer moment {} has {} entries, expected {}",
                m.name,
                first.numel(),
                slot1.len()
            )));
        }
        *slot1 = first.data().to_vec();
        *state.second.get_mut(&m.name).unwrap() = second.data().to_vec();
    }
    Ok(ResumedTrainState {
        cfg,
        params,
        banks,
        state,
        run: manifest.run,
        next_epoch: manifest.next_epoch,
    })
}
