//! Ground-truth scene-graph data model: boxes, proposals, relationship
//! instances, per-frame annotations, and subject-object pair tracking.

use stket_autograd::Tensor;

use crate::error::{CoreError, Result};

/// Minimum box IoU for two same-class objects to count as the same object
/// when tracking pairs across consecutive frames.
pub const TRACK_IOU_THRESHOLD: f64 = 0.8;

/// Axis-aligned pixel box, corners (x1, y1) top-left exclusive of (x2, y2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    /// Smallest box covering both.
    pub fn union_box(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union of two boxes, in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One detected or annotated object in a frame.
#[derive(Debug, Clone)]
pub struct ObjectProposal {
    pub bbox: BBox,
    /// Probability vector over object classes (person included).
    pub class_distribution: Vec<f64>,
    /// Argmax of the distribution, cached at construction.
    pub predicted_class: usize,
    /// Backbone feature vector; absent for annotation-only datasets.
    pub visual_feature: Option<Tensor>,
}

impl ObjectProposal {
    pub fn new(bbox: BBox, class_distribution: Vec<f64>, visual_feature: Option<Tensor>) -> Self {
        let predicted_class = argmax(&class_distribution);
        ObjectProposal {
            bbox,
            class_distribution,
            predicted_class,
            visual_feature,
        }
    }

    /// One-hot distribution for a ground-truth class.
    pub fn ground_truth(bbox: BBox, class: usize, num_classes: usize, visual_feature: Option<Tensor>) -> Self {
        let mut dist = vec![0.0; num_classes];
        dist[class] = 1.0;
        ObjectProposal {
            bbox,
            class_distribution: dist,
            predicted_class: class,
            visual_feature,
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// A subject-object pair with its annotated predicate set.
#[derive(Debug, Clone)]
pub struct RelationshipInstance {
    pub subject_index: usize,
    pub object_index: usize,
    /// Ground-truth predicate ids, sorted and unique.
    pub predicates: Vec<usize>,
    /// Union-box feature map, flattened row-major; absent when synthesized.
    pub union_feature: Option<Tensor>,
    /// Stable pair identity across frames, when the source provides one.
    pub pair_track_id: Option<u64>,
}

impl RelationshipInstance {
    pub fn new(subject_index: usize, object_index: usize, mut predicates: Vec<usize>) -> Self {
        predicates.sort_unstable();
        predicates.dedup();
        RelationshipInstance {
            subject_index,
            object_index,
            predicates,
            union_feature: None,
            pair_track_id: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FrameAnnotation {
    pub frame_index: i64,
    pub proposals: Vec<ObjectProposal>,
    pub relationships: Vec<RelationshipInstance>,
}

impl FrameAnnotation {
    /// (subject class, object class) of relationship `k`, by predicted class.
    pub fn pair_classes(&self, k: usize) -> (usize, usize) {
        let rel = &self.relationships[k];
        (
            self.proposals[rel.subject_index].predicted_class,
            self.proposals[rel.object_index].predicted_class,
        )
    }
}

#[derive(Debug, Clone)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub frames: Vec<FrameAnnotation>,
}

/// A full annotated dataset: shared label spaces plus videos.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub predicate_names: Vec<String>,
    /// Sizes of the predicate type groups (e.g. attention/spatial/contact
    /// 3/6/17); empty when the dataset has no partition.
    pub predicate_type_sizes: Vec<usize>,
    pub videos: Vec<VideoAnnotation>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicate_names.len()
    }

    /// Validate every type invariant; errors name the offending video/field.
    pub fn validate(&self) -> Result<()> {
        if !self.predicate_type_sizes.is_empty()
            && self.predicate_type_sizes.iter().sum::<usize>() != self.num_predicates()
        {
            return Err(CoreError::integrity(
                "dataset",
                format!(
                    "predicate_type_sizes {:?} do not sum to predicate count {}",
                    self.predicate_type_sizes,
                    self.num_predicates()
                ),
            ));
        }
        for video in &self.videos {
            let ctx = format!("video {}", video.video_id);
            let mut last_index: Option<i64> = None;
            for frame in &video.frames {
                if let Some(prev) = last_index {
                    if frame.frame_index <= prev {
                        return Err(CoreError::integrity(
                            &ctx,
                            format!(
                                "frame indices not strictly increasing ({prev} then {})",
                                frame.frame_index
                            ),
                        ));
                    }
                }
                last_index = Some(frame.frame_index);
                let fctx = format!("{ctx} frame {}", frame.frame_index);
                for (i, prop) in frame.proposals.iter().enumerate() {
                    if !prop.bbox.is_valid() {
                        return Err(CoreError::integrity(
                            &fctx,
                            format!("proposal {i} box {:?} invalid (requires x1 < x2, y1 < y2)", prop.bbox),
                        ));
                    }
                    if prop.class_distribution.len() != self.num_classes() {
                        return Err(CoreError::integrity(
                            &fctx,
                            format!(
                                "proposal {i} class_distribution length {} != {} classes",
                                prop.class_distribution.len(),
                                self.num_classes()
                            ),
                        ));
                    }
                    let sum: f64 = prop.class_distribution.iter().sum();
                    if prop.class_distribution.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                        return Err(CoreError::integrity(
                            &fctx,
                            format!("proposal {i} class_distribution is not a probability vector (sum {sum})"),
                        ));
                    }
                }
                for (k, rel) in frame.relationships.iter().enumerate() {
                    if rel.subject_index == rel.object_index {
                        return Err(CoreError::integrity(
                            &fctx,
                            format!("relationship {k} has subject_index == object_index ({})", rel.subject_index),
                        ));
                    }
                    if rel.subject_index >= frame.proposals.len() || rel.object_index >= frame.proposals.len() {
                        return Err(CoreError::integrity(
                            &fctx,
                            format!(
                                "relationship {k} references proposal {} of {}",
                                rel.subject_index.max(rel.object_index),
                                frame.proposals.len()
                            ),
                        ));
                    }
                    for &p in &rel.predicates {
                        if p >= self.num_predicates() {
                            return Err(CoreError::integrity(
                                &fctx,
                                format!("relationship {k} predicate id {p} out of range [0, {})", self.num_predicates()),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Match the relationships of `curr` against `prev`.
///
/// A current pair matches a previous pair when subject and object each have
/// the same predicted class and box IoU above [`TRACK_IOU_THRESHOLD`].
/// Candidates are ranked by summed endpoint IoU, ties broken by lower
/// indices; the result maps each current relationship to at most one
/// previous relationship and is injective.
pub fn track_pairs(prev: &FrameAnnotation, curr: &FrameAnnotation) -> Vec<Option<usize>> {
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for (ck, crel) in curr.relationships.iter().enumerate() {
        let cs = &curr.proposals[crel.subject_index];
        let co = &curr.proposals[crel.object_index];
        for (pk, prel) in prev.relationships.iter().enumerate() {
            let ps = &prev.proposals[prel.subject_index];
            let po = &prev.proposals[prel.object_index];
            if cs.predicted_class != ps.predicted_class || co.predicted_class != po.predicted_class {
                continue;
            }
            let iou_s = iou(&cs.bbox, &ps.bbox);
            let iou_o = iou(&co.bbox, &po.bbox);
            if iou_s > TRACK_IOU_THRESHOLD && iou_o > TRACK_IOU_THRESHOLD {
                candidates.push((ck, pk, iou_s + iou_o));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    let mut mapping = vec![None; curr.relationships.len()];
    let mut prev_used = vec![false; prev.relationships.len()];
    for (ck, pk, _) in candidates {
        if mapping[ck].is_none() && !prev_used[pk] {
            mapping[ck] = Some(pk);
            prev_used[pk] = true;
        }
    }
    mapping
}

/// Pair correspondence across consecutive frames: ground-truth track ids when
/// both relationships carry one, falling back to [`track_pairs`].
pub fn link_consecutive(prev: &FrameAnnotation, curr: &FrameAnnotation) -> Vec<Option<usize>> {
    let all_tracked = curr.relationships.iter().all(|r| r.pair_track_id.is_some())
        && prev.relationships.iter().all(|r| r.pair_track_id.is_some());
    if all_tracked {
        curr.relationships
            .iter()
            .map(|r| {
                prev.relationships
                    .iter()
                    .position(|p| p.pair_track_id == r.pair_track_id)
            })
            .collect()
    } else {
        track_pairs(prev, curr)
    }
}
