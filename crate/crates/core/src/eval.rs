//! Recall-based evaluation: scored triplet pools per frame under the
//! no-constraint protocol, greedy confidence-ordered matching against ground
//! truth per task, R@K / mR@K aggregation, and the frequency-prior baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{argmax, iou, Dataset, FrameAnnotation, RelationshipInstance, VideoAnnotation};
use crate::error::{CoreError, Result};
use crate::exec;
use crate::knowledge::{Banks, SpatialMatrixBank};
use crate::model::{forward_video, ForwardOptions, ModelConfig, ModelParams, TaskMode};

/// Box IoU required for a predicted box to count as locating a ground-truth
/// object in SGGen.
pub const SGGEN_IOU: f64 = 0.5;

/// One scored ⟨subject, predicate, object⟩ candidate within a frame.
#[derive(Debug, Clone, Copy)]
pub struct ScoredTriplet {
    /// Proposal index of the subject within the frame.
    pub subject: usize,
    /// Proposal index of the object within the frame.
    pub object: usize,
    pub predicate: usize,
    pub confidence: f64,
    /// Enumeration rank of the (subject, object) pair, for tie-breaking.
    pub pair_rank: usize,
}

/// All candidates for one frame plus per-proposal class decisions.
#[derive(Debug, Clone, Default)]
pub struct FramePredictions {
    pub triplets: Vec<ScoredTriplet>,
    /// Predicted class per proposal (argmax of the relevant distribution).
    pub classes: Vec<usize>,
    /// Confidence of the predicted class per proposal.
    pub class_confidence: Vec<f64>,
}

/// Frame-aligned predictions for a whole dataset.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub task: TaskMode,
    /// `videos[v][f]` aligns with `dataset.videos[v].frames[f]`.
    pub videos: Vec<Vec<FramePredictions>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPredicateReport {
    pub id: usize,
    pub name: String,
    pub gt_count: u64,
    pub r_at: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub ks: Vec<usize>,
    /// R@K percentages keyed by K.
    pub recall: BTreeMap<String, f64>,
    /// mR@K percentages keyed by K.
    pub mean_recall: BTreeMap<String, f64>,
    pub per_predicate: Vec<PerPredicateReport>,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall[&k.to_string()]
    }

    pub fn mean_recall_at(&self, k: usize) -> f64 {
        self.mean_recall[&k.to_string()]
    }
}

/// Sort triplets by confidence descending, ties broken by lower predicate id
/// then lower pair rank.
pub fn sort_triplets(triplets: &mut [ScoredTriplet]) {
    triplets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.predicate.cmp(&b.predicate))
            .then_with(|| a.pair_rank.cmp(&b.pair_rank))
    });
}

fn gt_triplets(frame: &FrameAnnotation) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for rel in &frame.relationships {
        for &p in &rel.predicates {
            out.push((rel.subject_index, rel.object_index, p));
        }
    }
    out
}

fn compatible(
    pred: &ScoredTriplet,
    preds: &FramePredictions,
    gt: (usize, usize, usize),
    frame: &FrameAnnotation,
    task: TaskMode,
) -> bool {
    let (gs, go, gp) = gt;
    if pred.predicate != gp {
        return false;
    }
    match task {
        TaskMode::PredCls => pred.subject == gs && pred.object == go,
        TaskMode::SgCls => {
            pred.subject == gs
                && pred.object == go
                && preds.classes[pred.subject] == frame.proposals[gs].predicted_class
                && preds.classes[pred.object] == frame.proposals[go].predicted_class
        }
        TaskMode::SgGen => {
            preds.classes[pred.subject] == frame.proposals[gs].predicted_class
                && preds.classes[pred.object] == frame.proposals[go].predicted_class
                && iou(&frame.proposals[pred.subject].bbox, &frame.proposals[gs].bbox) >= SGGEN_IOU
                && iou(&frame.proposals[pred.object].bbox, &frame.proposals[go].bbox) >= SGGEN_IOU
        }
    }
}

/// Greedy matching in confidence order: walk the sorted predictions, each
/// claiming the first still-unmatched compatible ground-truth triplet.
/// Returns, per GT triplet, the 0-based prediction rank that hit it (a GT
/// triplet counts as recalled at K when its rank is < K).
///
/// For SGGen the prediction's proposals locate a GT object when the class
/// matches and box IoU is at least 0.5.
pub fn match_triplets(
    preds: &FramePredictions,
    frame: &FrameAnnotation,
    task: TaskMode,
) -> Vec<Option<usize>> {
    let gts = gt_triplets(frame);
    let mut sorted = preds.triplets.clone();
    sort_triplets(&mut sorted);
    let mut ranks: Vec<Option<usize>> = vec![None; gts.len()];
    for (rank, pred) in sorted.iter().enumerate() {
        for (gi, &gt) in gts.iter().enumerate() {
            if ranks[gi].is_none() && compatible(pred, preds, gt, frame, task) {
                ranks[gi] = Some(rank);
                break;
            }
        }
    }
    ranks
}

/// How frame-level hits combine into dataset R@K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecallAggregation {
    /// Hits and GT counts summed dataset-wide.
    #[default]
    Micro,
    /// Mean over frames of the per-frame hit ratio.
    PerFrameMacro,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    total_gt: u64,
    hits_at: Vec<u64>,
    per_pred_gt: Vec<u64>,
    per_pred_hits: Vec<Vec<u64>>, // [k_idx][predicate]
    frames: u64,
    frame_ratio_sum: Vec<f64>, // per k: Σ hits_f / gt_f
}

impl Tally {
    fn new(num_predicates: usize, ks: &[usize]) -> Self {
        Tally {
            total_gt: 0,
            hits_at: vec![0; ks.len()],
            per_pred_gt: vec![0; num_predicates],
            per_pred_hits: vec![vec![0; num_predicates]; ks.len()],
            frames: 0,
            frame_ratio_sum: vec![0.0; ks.len()],
        }
    }

    fn merge(&mut self, other: &Tally) {
        self.total_gt += other.total_gt;
        for (a, b) in self.hits_at.iter_mut().zip(&other.hits_at) {
            *a += b;
        }
        for (a, b) in self.per_pred_gt.iter_mut().zip(&other.per_pred_gt) {
            *a += b;
        }
        for (av, bv) in self.per_pred_hits.iter_mut().zip(&other.per_pred_hits) {
            for (a, b) in av.iter_mut().zip(bv) {
                *a += b;
            }
        }
        self.frames += other.frames;
        for (a, b) in self.frame_ratio_sum.iter_mut().zip(&other.frame_ratio_sum) {
            *a += b;
        }
    }

    fn absorb_frame(
        &mut self,
        preds: &FramePredictions,
        frame: &FrameAnnotation,
        task: TaskMode,
        ks: &[usize],
    ) {
        // frames with no ground-truth relationships are skipped
        let gts = gt_triplets(frame);
        if gts.is_empty() {
            return;
        }
        self.frames += 1;
        let mut frame_hits = vec![0u64; ks.len()];
        let ranks = match_triplets(preds, frame, task);
        for (gi, &(_, _, p)) in gts.iter().enumerate() {
            self.total_gt += 1;
            self.per_pred_gt[p] += 1;
            if let Some(rank) = ranks[gi] {
                for (ki, &k) in ks.iter().enumerate() {
                    if rank < k {
                        self.hits_at[ki] += 1;
                        self.per_pred_hits[ki][p] += 1;
                        frame_hits[ki] += 1;
                    }
                }
            }
        }
        for (ki, &h) in frame_hits.iter().enumerate() {
            self.frame_ratio_sum[ki] += h as f64 / gts.len() as f64;
        }
    }
}

fn report_from_tally(
    dataset: &Dataset,
    task: TaskMode,
    ks: &[usize],
    tally: Tally,
    aggregation: RecallAggregation,
) -> Result<MetricsReport> {
    if tally.total_gt == 0 {
        return Err(CoreError::Data(
            "recall undefined: dataset has no ground-truth relationships".into(),
        ));
    }
    let mut recall = BTreeMap::new();
    let mut mean_recall = BTreeMap::new();
    for (ki, &k) in ks.iter().enumerate() {
        let r = match aggregation {
            RecallAggregation::Micro => 100.0 * tally.hits_at[ki] as f64 / tally.total_gt as f64,
            RecallAggregation::PerFrameMacro => {
                100.0 * tally.frame_ratio_sum[ki] / tally.frames as f64
            }
        };
        recall.insert(k.to_string(), r);
        // unweighted mean over predicates with at least one GT instance
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in 0..dataset.num_predicates() {
            if tally.per_pred_gt[p] > 0 {
                sum += 100.0 * tally.per_pred_hits[ki][p] as f64 / tally.per_pred_gt[p] as f64;
                n += 1;
            }
        }
        mean_recall.insert(k.to_string(), sum / n as f64);
    }
    let per_predicate = (0..dataset.num_predicates())
        .map(|p| {
            let mut r_at = BTreeMap::new();
            for (ki, &k) in ks.iter().enumerate() {
                let r = if tally.per_pred_gt[p] == 0 {
                    0.0
                } else {
                    100.0 * tally.per_pred_hits[ki][p] as f64 / tally.per_pred_gt[p] as f64
                };
                r_at.insert(k.to_string(), r);
            }
            PerPredicateReport {
                id: p,
                name: dataset.predicate_names[p].clone(),
                gt_count: tally.per_pred_gt[p],
                r_at,
            }
        })
        .collect();
    Ok(MetricsReport {
        task: format!("{task:?}").to_lowercase(),
        ks: ks.to_vec(),
        recall,
        mean_recall,
        per_predicate,
    })
}

/// Score an existing prediction set against the dataset's ground truth
/// (micro-averaged R@K).
pub fn score_predictions(
    preds: &PredictionSet,
    dataset: &Dataset,
    ks: &[usize],
) -> Result<MetricsReport> {
    score_predictions_with(preds, dataset, ks, RecallAggregation::Micro)
}

/// Score with an explicit R@K aggregation mode. Mean recall is always the
/// unweighted mean of dataset-wide per-predicate recalls.
pub fn score_predictions_with(
    preds: &PredictionSet,
    dataset: &Dataset,
    ks: &[usize],
    aggregation: RecallAggregation,
) -> Result<MetricsReport> {
    if preds.videos.len() != dataset.videos.len() {
        return Err(CoreError::Config(format!(
            "prediction set covers {} videos, dataset has {}",
            preds.videos.len(),
            dataset.videos.len()
        )));
    }
    let c = dataset.num_predicates();
    let partials = exec::map_indices(dataset.videos.len(), |vi| {
        let mut tally = Tally::new(c, ks);
        for (fi, frame) in dataset.videos[vi].frames.iter().enumerate() {
            tally.absorb_frame(&preds.videos[vi][fi], frame, preds.task, ks);
        }
        tally
    });
    let mut tally = Tally::new(c, ks);
    for p in &partials {
        tally.merge(p);
    }
    report_from_tally(dataset, preds.task, ks, tally, aggregation)
}

/// Candidate frame for SGGen: every ordered proposal pair becomes a
/// relationship slot (union feature absent, no labels).
fn candidate_frame(frame: &FrameAnnotation) -> FrameAnnotation {
    let n = frame.proposals.len();
    let mut relationships = Vec::new();
    for s in 0..n {
        for o in 0..n {
            if s != o {
                relationships.push(RelationshipInstance::new(s, o, vec![]));
            }
        }
    }
    FrameAnnotation {
        frame_index: frame.frame_index,
        proposals: frame.proposals.clone(),
        relationships,
    }
}

fn predictions_for_video(
    params: &ModelParams,
    banks: &Banks,
    cfg: &ModelConfig,
    video: &VideoAnnotation,
    task: TaskMode,
) -> Result<Vec<FramePredictions>> {
    let scored_video;
    let video_ref = match task {
        TaskMode::SgGen => {
            scored_video = VideoAnnotation {
                video_id: video.video_id.clone(),
                frames: video.frames.iter().map(candidate_frame).collect(),
            };
            &scored_video
        }
        _ => video,
    };
    let fwd = forward_video(params, banks, video_ref, cfg, &ForwardOptions::eval(task), None)?;
    let mut out = Vec::with_capacity(video.frames.len());
    for (fi, frame) in video_ref.frames.iter().enumerate() {
        let acts = &fwd.frames[fi];
        let (classes, class_confidence): (Vec<usize>, Vec<f64>) = match task {
            TaskMode::PredCls => (
                frame.proposals.iter().map(|p| p.predicted_class).collect(),
                vec![1.0; frame.proposals.len()],
            ),
            TaskMode::SgCls => {
                let probs = acts
                    .object_probs
                    .as_ref()
                    .ok_or_else(|| CoreError::Data("object probabilities missing for SGCls".into()))?;
                let classes: Vec<usize> = probs.iter().map(|row| argmax(row)).collect();
                let conf = probs.iter().map(|row| row[argmax(row)]).collect();
                (classes, conf)
            }
            TaskMode::SgGen => (
                frame.proposals.iter().map(|p| p.predicted_class).collect(),
                frame
                    .proposals
                    .iter()
                    .map(|p| p.class_distribution[p.predicted_class])
                    .collect(),
            ),
        };
        let mut triplets = Vec::new();
        for (k, rel) in frame.relationships.iter().enumerate() {
            let phi = &acts.final_phi[k];
            let class_factor = class_confidence[rel.subject_index] * class_confidence[rel.object_index];
            for (p, &conf) in phi.iter().enumerate() {
                triplets.push(ScoredTriplet {
                    subject: rel.subject_index,
                    object: rel.object_index,
                    predicate: p,
                    confidence: conf * class_factor,
                    pair_rank: k,
                });
            }
        }
        out.push(FramePredictions {
            triplets,
            classes,
            class_confidence,
        });
    }
    Ok(out)
}

/// Run the model over the dataset and collect scored triplet pools.
/// Per-video work runs in parallel (each video owns an independent tape).
pub fn model_predictions(
    params: &ModelParams,
    banks: &Banks,
    cfg: &ModelConfig,
    dataset: &Dataset,
    task: TaskMode,
) -> Result<PredictionSet> {
    cfg.check_dataset(dataset.num_classes(), dataset.num_predicates())?;
    let videos: Vec<Result<Vec<FramePredictions>>> = exec::map_collect(&dataset.videos, |v| {
        predictions_for_video(params, banks, cfg, v, task)
    });
    let videos = videos.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet { task, videos })
}

/// Full evaluation: forward, match, aggregate.
pub fn evaluate(
    params: &ModelParams,
    banks: &Banks,
    cfg: &ModelConfig,
    dataset: &Dataset,
    task: TaskMode,
    ks: &[usize],
) -> Result<MetricsReport> {
    let preds = model_predictions(params, banks, cfg, dataset, task)?;
    score_predictions(&preds, dataset, ks)
}

/// Reference predictor: each ground-truth pair's confidence vector is the
/// spatial co-occurrence vector of its class pair (uniform for unseen pairs).
pub fn frequency_prior_baseline(
    bank: &SpatialMatrixBank,
    dataset: &Dataset,
) -> PredictionSet {
    let c = dataset.num_predicates();
    let videos = dataset
        .videos
        .iter()
        .map(|video| {
            video
                .frames
                .iter()
                .map(|frame| {
                    let mut triplets = Vec::new();
                    for (k, rel) in frame.relationships.iter().enumerate() {
                        let (i, j) = frame.pair_classes(k);
                        let probs = if bank.pairs.contains_key(&(i, j)) {
                            bank.vector(i, j)
                        } else {
                            vec![1.0 / c as f64; c]
                        };
                        for (p, &conf) in probs.iter().enumerate() {
                            triplets.push(ScoredTriplet {
                                subject: rel.subject_index,
                                object: rel.object_index,
                                predicate: p,
                                confidence: conf,
                                pair_rank: k,
                            });
                        }
                    }
                    FramePredictions {
                        triplets,
                        classes: frame.proposals.iter().map(|p| p.predicted_class).collect(),
                        class_confidence: vec![1.0; frame.proposals.len()],
                    }
                })
                .collect()
        })
        .collect();
    PredictionSet {
        task: TaskMode::PredCls,
        videos,
    }
}
