//! Statistical prior knowledge: per class-pair spatial co-occurrence vectors
//! and temporal transition matrices, counted from ground-truth annotations.
//!
//! Banks hold raw counts; probabilities are derived views, so every stored
//! entry stays in [0, 1] and `prob * count` recovers the raw tally exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stket_autograd::io::{parse_ref, Dtype, TensorFileReader, TensorFileWriter};
use stket_autograd::Tensor;

use crate::data::{link_consecutive, Dataset, VideoAnnotation};
use crate::error::{CoreError, Result};
use crate::exec;

/// (subject class, object class)
pub type PairKey = (usize, usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpatialEntry {
    /// Times this class pair co-occurred with an annotated relationship.
    pub pair_count: u64,
    /// Per-predicate occurrence counts, each ≤ pair_count.
    pub predicate_counts: Vec<u64>,
}

impl SpatialEntry {
    /// Co-occurrence probability vector: count / pair count.
    pub fn probabilities(&self) -> Vec<f64> {
        self.predicate_counts
            .iter()
            .map(|&c| {
                if self.pair_count == 0 {
                    0.0
                } else {
                    c as f64 / self.pair_count as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemporalEntry {
    /// Row-major `[from][to]` transition counts.
    pub transition_counts: Vec<u64>,
    /// Per source predicate: occurrences that had a tracked successor frame.
    pub source_counts: Vec<u64>,
}

impl TemporalEntry {
    /// Conditional transition matrix, rows divided by their source counts.
    /// Predicates never seen as a source yield all-zero rows.
    pub fn probabilities(&self, num_predicates: usize) -> Vec<f64> {
        let c = num_predicates;
        let mut out = vec![0.0; c * c];
        for x in 0..c {
            let n = self.source_counts[x];
            if n == 0 {
                continue;
            }
            for y in 0..c {
                out[x * c + y] = self.transition_counts[x * c + y] as f64 / n as f64;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMatrixBank {
    pub num_predicates: usize,
    pub pairs: BTreeMap<PairKey, SpatialEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMatrixBank {
    pub num_predicates: usize,
    pub pairs: BTreeMap<PairKey, TemporalEntry>,
}

impl SpatialMatrixBank {
    pub fn empty(num_predicates: usize) -> Self {
        SpatialMatrixBank {
            num_predicates,
            pairs: BTreeMap::new(),
        }
    }

    /// Co-occurrence vector for a class pair; zero vector for unseen pairs.
    pub fn vector(&self, subject_class: usize, object_class: usize) -> Vec<f64> {
        self.pairs
            .get(&(subject_class, object_class))
            .map(|e| e.probabilities())
            .unwrap_or_else(|| vec![0.0; self.num_predicates])
    }

    /// Drop pairs observed fewer than `min` times.
    pub fn filter_min_count(&mut self, min: u64) {
        self.pairs.retain(|_, e| e.pair_count >= min);
    }

    fn merge(&mut self, other: SpatialMatrixBank) {
        for (key, entry) in other.pairs {
            let slot = self.pairs.entry(key).or_insert_with(|| SpatialEntry {
                pair_count: 0,
                predicate_counts: vec![0; self.num_predicates],
            });
            slot.pair_count += entry.pair_count;
            for (a, b) in slot.predicate_counts.iter_mut().zip(&entry.predicate_counts) {
                *a += b;
            }
        }
    }
}

impl TemporalMatrixBank {
    pub fn empty(num_predicates: usize) -> Self {
        TemporalMatrixBank {
            num_predicates,
            pairs: BTreeMap::new(),
        }
    }

    /// Transition row for (pair, source predicate); zeros when unseen.
    pub fn row(&self, subject_class: usize, object_class: usize, from: usize) -> Vec<f64> {
        let c = self.num_predicates;
        match self.pairs.get(&(subject_class, object_class)) {
            Some(e) if e.source_counts[from] > 0 => {
                let n = e.source_counts[from] as f64;
                e.transition_counts[from * c..(from + 1) * c]
                    .iter()
                    .map(|&t| t as f64 / n)
                    .collect()
            }
            _ => vec![0.0; c],
        }
    }

    /// Mixture of transition rows weighted by a normalized confidence vector.
    /// An all-zero weight vector mixes uniformly.
    pub fn row_expected(&self, subject_class: usize, object_class: usize, weights: &[f64]) -> Vec<f64> {
        let c = self.num_predicates;
        let total: f64 = weights.iter().sum();
        let mut out = vec![0.0; c];
        for (x, &w) in weights.iter().enumerate() {
            let wn = if total > 0.0 { w / total } else { 1.0 / c as f64 };
            if wn == 0.0 {
                continue;
            }
            for (o, r) in out.iter_mut().zip(self.row(subject_class, object_class, x)) {
                *o += wn * r;
            }
        }
        out
    }

    /// Drop pairs with fewer than `min` transitions in total.
    pub fn filter_min_count(&mut self, min: u64) {
        self.pairs
            .retain(|_, e| e.source_counts.iter().sum::<u64>() >= min);
    }

    fn merge(&mut self, other: TemporalMatrixBank) {
        let c = self.num_predicates;
        for (key, entry) in other.pairs {
            let slot = self.pairs.entry(key).or_insert_with(|| TemporalEntry {
                transition_counts: vec![0; c * c],
                source_counts: vec![0; c],
            });
            for (a, b) in slot.transition_counts.iter_mut().zip(&entry.transition_counts) {
                *a += b;
            }
            for (a, b) in slot.source_counts.iter_mut().zip(&entry.source_counts) {
                *a += b;
            }
        }
    }
}

/// Both statistics banks, built together and persisted together.
#[derive(Debug, Clone, PartialEq)]
pub struct Banks {
    pub spatial: SpatialMatrixBank,
    pub temporal: TemporalMatrixBank,
}

impl Banks {
    pub fn build(dataset: &Dataset) -> Self {
        Banks {
            spatial: build_spatial_matrix(dataset),
            temporal: build_temporal_matrix(dataset),
        }
    }

    pub fn empty(num_predicates: usize) -> Self {
        Banks {
            spatial: SpatialMatrixBank::empty(num_predicates),
            temporal: TemporalMatrixBank::empty(num_predicates),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_banks(dir, &self.spatial, &self.temporal)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (spatial, temporal) = load_banks(dir)?;
        Ok(Banks { spatial, temporal })
    }
}

fn spatial_partial(video: &VideoAnnotation, num_predicates: usize) -> SpatialMatrixBank {
    let mut bank = SpatialMatrixBank::empty(num_predicates);
    for frame in &video.frames {
        for (k, rel) in frame.relationships.iter().enumerate() {
            let key = frame.pair_classes(k);
            let entry = bank.pairs.entry(key).or_insert_with(|| SpatialEntry {
                pair_count: 0,
                predicate_counts: vec![0; num_predicates],
            });
            entry.pair_count += 1;
            for &p in &rel.predicates {
                entry.predicate_counts[p] += 1;
            }
        }
    }
    bank
}

fn temporal_partial(video: &VideoAnnotation, num_predicates: usize) -> TemporalMatrixBank {
    let c = num_predicates;
    let mut bank = TemporalMatrixBank::empty(c);
    for w in video.frames.windows(2) {
        let (prev, curr) = (&w[0], &w[1]);
        let mapping = link_consecutive(prev, curr);
        for (k, maybe_prev) in mapping.iter().enumerate() {
            let Some(pk) = maybe_prev else { continue };
            let key = curr.pair_classes(k);
            let entry = bank.pairs.entry(key).or_insert_with(|| TemporalEntry {
                transition_counts: vec![0; c * c],
                source_counts: vec![0; c],
            });
            for &x in &prev.relationships[*pk].predicates {
                entry.source_counts[x] += 1;
                for &y in &curr.relationships[k].predicates {
                    entry.transition_counts[x * c + y] += 1;
                }
            }
        }
    }
    bank
}

/// Count per-class-pair predicate frequencies over the whole dataset.
/// Parallel over videos; the merge is pure count addition so the result is
/// order independent.
pub fn build_spatial_matrix(dataset: &Dataset) -> SpatialMatrixBank {
    let c = dataset.num_predicates();
    let partials = exec::map_collect(&dataset.videos, |v| spatial_partial(v, c));
    let mut bank = SpatialMatrixBank::empty(c);
    for p in partials {
        bank.merge(p);
    }
    bank
}

/// Sequential reference for [`build_spatial_matrix`] (benches, equality tests).
pub fn build_spatial_matrix_seq(dataset: &Dataset) -> SpatialMatrixBank {
    let c = dataset.num_predicates();
    let mut bank = SpatialMatrixBank::empty(c);
    for v in &dataset.videos {
        bank.merge(spatial_partial(v, c));
    }
    bank
}

/// Count predicate transitions for tracked pairs across consecutive frames.
pub fn build_temporal_matrix(dataset: &Dataset) -> TemporalMatrixBank {
    let c = dataset.num_predicates();
    let partials = exec::map_collect(&dataset.videos, |v| temporal_partial(v, c));
    let mut bank = TemporalMatrixBank::empty(c);
    for p in partials {
        bank.merge(p);
    }
    bank
}

/// Sequential reference for [`build_temporal_matrix`].
pub fn build_temporal_matrix_seq(dataset: &Dataset) -> TemporalMatrixBank {
    let c = dataset.num_predicates();
    let mut bank = TemporalMatrixBank::empty(c);
    for v in &dataset.videos {
        bank.merge(temporal_partial(v, c));
    }
    bank
}

/// Shannon entropy (nats) of each stored transition row, normalized to a
/// distribution first. Rows with zero source count are skipped.
pub fn transition_row_entropies(bank: &TemporalMatrixBank) -> Vec<(PairKey, usize, u64, f64)> {
    let c = bank.num_predicates;
    let mut out = Vec::new();
    for (&key, entry) in &bank.pairs {
        for x in 0..c {
            let n = entry.source_counts[x];
            if n == 0 {
                continue;
            }
            let row = &entry.transition_counts[x * c..(x + 1) * c];
            let total: u64 = row.iter().sum();
            let mut h = 0.0;
            if total > 0 {
                for &t in row {
                    if t > 0 {
                        let p = t as f64 / total as f64;
                        h -= p * p.ln();
                    }
                }
            }
            out.push((key, x, n, h));
        }
    }
    out
}

// ── serialization ───────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct SpatialEntryJson {
    subject_class: usize,
    object_class: usize,
    pair_count: u64,
    predicate_counts: Vec<u64>,
    #[serde(rename = "ref")]
    tensor_ref: String,
}

#[derive(Serialize, Deserialize)]
struct TemporalEntryJson {
    subject_class: usize,
    object_class: usize,
    source_counts: Vec<u64>,
    #[serde(rename = "ref")]
    tensor_ref: String,
}

#[derive(Serialize, Deserialize)]
struct BankIndexJson {
    num_predicates: usize,
    spatial: Vec<SpatialEntryJson>,
    temporal: Vec<TemporalEntryJson>,
}

/// Write both banks into `dir`: `index.json` with raw counts plus packed
/// probability tensors in `spatial.stkt` / `temporal.stkt`.
pub fn save_banks(dir: &Path, spatial: &SpatialMatrixBank, temporal: &TemporalMatrixBank) -> Result<()> {
    fs::create_dir_all(dir)?;
    let c = spatial.num_predicates;
    let mut sw = TensorFileWriter::create(&dir.join("spatial.stkt"), "spatial.stkt")?;
    let mut spatial_json = Vec::new();
    for (&(i, j), entry) in &spatial.pairs {
        let t = Tensor::new(entry.probabilities(), &[c])?;
        spatial_json.push(SpatialEntryJson {
            subject_class: i,
            object_class: j,
            pair_count: entry.pair_count,
            predicate_counts: entry.predicate_counts.clone(),
            tensor_ref: sw.append(&t, Dtype::F64)?,
        });
    }
    sw.finish()?;

    let mut tw = TensorFileWriter::create(&dir.join("temporal.stkt"), "temporal.stkt")?;
    let mut temporal_json = Vec::new();
    for (&(i, j), entry) in &temporal.pairs {
        let t = Tensor::new(entry.probabilities(c), &[c, c])?;
        temporal_json.push(TemporalEntryJson {
            subject_class: i,
            object_class: j,
            source_counts: entry.source_counts.clone(),
            tensor_ref: tw.append(&t, Dtype::F64)?,
        });
    }
    tw.finish()?;

    let index = BankIndexJson {
        num_predicates: c,
        spatial: spatial_json,
        temporal: temporal_json,
    };
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

/// Load banks written by [`save_banks`], cross-checking stored probabilities
/// against the raw counts.
pub fn load_banks(dir: &Path) -> Result<(SpatialMatrixBank, TemporalMatrixBank)> {
    let text = fs::read_to_string(dir.join("index.json"))
        .map_err(|e| CoreError::parse(dir.display().to_string(), format!("missing bank index: {e}")))?;
    let index: BankIndexJson = serde_json::from_str(&text)
        .map_err(|e| CoreError::parse(dir.display().to_string(), e.to_string()))?;
    let c = index.num_predicates;

    let mut spatial = SpatialMatrixBank::empty(c);
    for e in index.spatial {
        if e.predicate_counts.len() != c {
            return Err(CoreError::integrity(
                "bank index",
                format!("spatial entry ({}, {}) has {} counts, expected {}", e.subject_class, e.object_class, e.predicate_counts.len(), c),
            ));
        }
        let entry = SpatialEntry {
            pair_count: e.pair_count,
            predicate_counts: e.predicate_counts,
        };
        let (file, offset) = parse_ref(&e.tensor_ref)?;
        let stored = TensorFileReader::open(&dir.join(file))?.read_at(offset)?;
        if stored.data() != entry.probabilities().as_slice() {
            return Err(CoreError::integrity(
                "bank index",
                format!("spatial tensor for ({}, {}) disagrees with counts", e.subject_class, e.object_class),
            ));
        }
        spatial.pairs.insert((e.subject_class, e.object_class), entry);
    }

    let mut temporal = TemporalMatrixBank::empty(c);
    for e in index.temporal {
        if e.source_counts.len() != c {
            return Err(CoreError::integrity(
                "bank index",
                format!("temporal entry ({}, {}) has {} source counts, expected {}", e.subject_class, e.object_class, e.source_counts.len(), c),
            ));
        }
        let (file, offset) = parse_ref(&e.tensor_ref)?;
        let stored = TensorFileReader::open(&dir.join(file))?.read_at(offset)?;
        if stored.shape() != [c, c] {
            return Err(CoreError::integrity(
                "bank index",
                format!("temporal tensor for ({}, {}) has shape {:?}", e.subject_class, e.object_class, stored.shape()),
            ));
        }
        let mut transition_counts = vec![0u64; c * c];
        for x in 0..c {
            let n = e.source_counts[x] as f64;
            for y in 0..c {
                let p = stored.data()[x * c + y];
                let count = p * n;
                if (count - count.round()).abs() > 1e-6 {
                    return Err(CoreError::integrity(
                        "bank index",
                        format!("temporal tensor for ({}, {}) row {x} is not count-recoverable", e.subject_class, e.object_class),
                    ));
                }
                transition_counts[x * c + y] = count.round() as u64;
            }
        }
        temporal.pairs.insert(
            (e.subject_class, e.object_class),
            TemporalEntry {
                transition_counts,
                source_counts: e.source_counts,
            },
        );
    }
    Ok((spatial, temporal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BBox, FrameAnnotation, ObjectProposal, RelationshipInstance, VideoAnnotation};

    /// person-cup micro case: "hold" both frames, "drink" in the second.
    fn person_cup_dataset() -> Dataset {
        let make_frame = |idx: i64, predicates: Vec<usize>| FrameAnnotation {
            frame_index: idx,
            proposals: vec![
                ObjectProposal::ground_truth(BBox::new(0.0, 0.0, 4.0, 8.0), 0, 2, None),
                ObjectProposal::ground_truth(BBox::new(1.0, 1.0, 2.0, 2.0), 1, 2, None),
            ],
            relationships: vec![{
                let mut r = RelationshipInstance::new(0, 1, predicates);
                r.pair_track_id = Some(0);
                r
            }],
        };
        Dataset {
            class_names: vec!["person".into(), "cup".into()],
            predicate_names: vec!["hold".into(), "drink".into()],
            predicate_type_sizes: vec![],
            videos: vec![VideoAnnotation {
                video_id: "v0".into(),
                frames: vec![make_frame(0, vec![0]), make_frame(1, vec![0, 1])],
            }],
        }
    }

    #[test]
    fn person_cup_spatial_probabilities() {
        let bank = build_spatial_matrix(&person_cup_dataset());
        let e = bank.vector(0, 1);
        assert_eq!(e, vec![1.0, 0.5]);
    }

    #[test]
    fn person_cup_temporal_transition() {
        // frame 1 {hold}, frame 2 {hold, drink}: hold -> drink and hold -> hold both 1.0
        let bank = build_temporal_matrix(&person_cup_dataset());
        let row = bank.row(0, 1, 0);
        assert_eq!(row, vec![1.0, 1.0]);
        // drink never appears at t-1, so its row is all zeros
        assert_eq!(bank.row(0, 1, 1), vec![0.0, 0.0]);
    }

    #[test]
    fn unseen_pair_queries_fall_back_to_zero() {
        let sp = build_spatial_matrix(&person_cup_dataset());
        assert_eq!(sp.vector(1, 0), vec![0.0, 0.0]);
        let tm = build_temporal_matrix(&person_cup_dataset());
        assert_eq!(tm.row(1, 0, 0), vec![0.0, 0.0]);
    }

    #[test]
    fn empty_dataset_builds_empty_banks() {
        let ds = Dataset {
            class_names: vec!["a".into()],
            predicate_names: vec!["p".into(), "q".into()],
            predicate_type_sizes: vec![],
            videos: vec![],
        };
        assert!(build_spatial_matrix(&ds).pairs.is_empty());
        assert!(build_temporal_matrix(&ds).pairs.is_empty());
    }

    #[test]
    fn parallel_and_sequential_builds_agree() {
        let ds = person_cup_dataset();
        assert_eq!(build_spatial_matrix(&ds), build_spatial_matrix_seq(&ds));
        assert_eq!(build_temporal_matrix(&ds), build_temporal_matrix_seq(&ds));
    }

    #[test]
    fn video_order_does_not_change_banks() {
        let base = person_cup_dataset();
        let mut second = base.clone();
        second.videos[0].video_id = "v1".into();
        second.videos[0].frames[1].relationships[0].predicates = vec![1];
        let mut forward = base.clone();
        forward.videos.extend(second.videos.clone());
        let mut reversed = second.clone();
        reversed.videos.extend(base.videos.clone());
        assert_eq!(build_spatial_matrix(&forward), build_spatial_matrix(&reversed));
        assert_eq!(build_temporal_matrix(&forward), build_temporal_matrix(&reversed));
    }

    #[test]
    fn bank_round_trip() {
        let ds = person_cup_dataset();
        let spatial = build_spatial_matrix(&ds);
        let temporal = build_temporal_matrix(&ds);
        let dir = tempfile::tempdir().unwrap();
        save_banks(dir.path(), &spatial, &temporal).unwrap();
        let (s2, t2) = load_banks(dir.path()).unwrap();
        assert_eq!(spatial, s2);
        assert_eq!(temporal, t2);
    }

    #[test]
    fn entropy_rows_cover_only_observed_sources() {
        let bank = build_temporal_matrix(&person_cup_dataset());
        let rows = transition_row_entropies(&bank);
        assert_eq!(rows.len(), 1);
        let ((i, j), x, n, h) = rows[0];
        assert_eq!(((i, j), x, n), ((0, 1), 0, 1));
        // hold -> {hold, drink} equally: entropy ln 2
        assert!((h - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
