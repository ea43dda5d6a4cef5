//! Synthetic video generator with known relationship dynamics.
//!
//! Each persistent subject-object pair carries one Markov chain per
//! predicate group (or a single chain over all predicates). Chains are
//! Metropolis random walks on a cycle with an exact power-law stationary
//! distribution, so the generator can report the true co-occurrence vector
//! and the true expected transition matrix for every class pair, and the
//! knowledge builders can be checked against them by direct counting.
//!
//! Boxes follow smooth reflected random walks (consecutive-frame IoU stays
//! well above the tracking threshold) and features are class-conditioned
//! Gaussians; union features additionally carry the active predicates so the
//! prediction task is learnable from pixel-free inputs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use stket_autograd::Tensor;

use crate::data::{BBox, Dataset, FrameAnnotation, ObjectProposal, RelationshipInstance, VideoAnnotation};
use crate::error::{CoreError, Result};
use crate::exec;

const CANVAS_W: f64 = 640.0;
const CANVAS_H: f64 = 480.0;

/// How predicates evolve per pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainStructure {
    /// One chain over all predicates; exactly one predicate active per frame.
    Single,
    /// One independent chain per predicate type group; one active predicate
    /// per group per frame (multi-label sets).
    PerTypeGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Object classes including person (class 0).
    pub num_object_classes: usize,
    pub num_predicates: usize,
    /// Predicate groups; required for [`ChainStructure::PerTypeGroup`].
    pub predicate_type_sizes: Vec<usize>,
    pub chains: ChainStructure,
    /// Distinct object classes that appear as pair objects (subject is
    /// always class 0). Pairs cycle through `1..=distinct_object_classes`.
    pub distinct_object_classes: usize,

    pub videos: usize,
    pub frames_per_video: usize,
    pub pairs_per_video: usize,
    pub seed: u64,

    /// Power-law exponent of the stationary predicate distribution
    /// (0 = uniform).
    pub skew: f64,
    /// Extra self-transition mass blended into every chain, in [0, 1).
    pub stickiness: f64,
    /// Explicit single-chain transition matrices per class pair, overriding
    /// the generated walks. Row-major C×C, rows must be stochastic.
    pub explicit_transitions: Vec<ExplicitPairTransition>,

    /// Proposal feature width; 0 disables feature synthesis.
    pub feature_dim: usize,
    pub union_channels: usize,
    pub union_grid: usize,
    /// Gaussian noise added to every synthesized feature.
    pub feature_noise: f64,
    /// Strength of the active-predicate component in union features.
    pub predicate_signal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitPairTransition {
    pub subject_class: usize,
    pub object_class: usize,
    /// Row-major C×C.
    pub transition: Vec<f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_object_classes: 9,
            num_predicates: 18,
            predicate_type_sizes: vec![2, 5, 11],
            chains: ChainStructure::PerTypeGroup,
            distinct_object_classes: 8,
            videos: 12,
            frames_per_video: 16,
            pairs_per_video: 3,
            seed: 0,
            skew: 2.2,
            stickiness: 0.7,
            explicit_transitions: Vec::new(),
            feature_dim: 64,
            union_channels: 4,
            union_grid: 7,
            feature_noise: 0.5,
            predicate_signal: 1.0,
        }
    }
}

impl GenConfig {
    /// Skewed multi-label benchmark used by the learning-signal comparison.
    pub fn preset_benchmark(seed: u64) -> Self {
        GenConfig {
            seed,
            ..GenConfig::default()
        }
    }

    /// Five short memorizable videos for the overfit sanity check.
    pub fn preset_overfit(seed: u64) -> Self {
        GenConfig {
            num_object_classes: 4,
            num_predicates: 26,
            predicate_type_sizes: vec![3, 6, 17],
            distinct_object_classes: 3,
            videos: 5,
            frames_per_video: 6,
            pairs_per_video: 3,
            seed,
            skew: 0.8,
            stickiness: 0.6,
            feature_noise: 0.15,
            predicate_signal: 1.2,
            ..GenConfig::default()
        }
    }

    /// Large annotation-only dataset for dynamics recovery (no features).
    pub fn preset_recovery(seed: u64) -> Self {
        GenConfig {
            num_object_classes: 3,
            num_predicates: 8,
            predicate_type_sizes: vec![],
            chains: ChainStructure::Single,
            distinct_object_classes: 2,
            videos: 200,
            frames_per_video: 80,
            pairs_per_video: 8,
            seed,
            skew: 0.0,
            stickiness: 0.4,
            explicit_transitions: Vec::new(),
            feature_dim: 0,
            union_channels: 0,
            union_grid: 0,
            feature_noise: 0.0,
            predicate_signal: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_object_classes < 2 {
            return Err(CoreError::Config("need at least person plus one object class".into()));
        }
        if self.distinct_object_classes == 0
            || self.distinct_object_classes >= self.num_object_classes
        {
            return Err(CoreError::Config(format!(
                "distinct_object_classes {} must be in [1, {})",
                self.distinct_object_classes, self.num_object_classes
            )));
        }
        if self.videos == 0 || self.frames_per_video == 0 || self.pairs_per_video == 0 {
            return Err(CoreError::Config("videos, frames, and pairs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.stickiness) {
            return Err(CoreError::Config(format!("stickiness {} outside [0, 1)", self.stickiness)));
        }
        if self.chains == ChainStructure::PerTypeGroup
            && (self.predicate_type_sizes.is_empty()
                || self.predicate_type_sizes.iter().sum::<usize>() != self.num_predicates)
        {
            return Err(CoreError::Config(format!(
                "per-type-group chains need predicate_type_sizes summing to {}",
                self.num_predicates
            )));
        }
        for e in &self.explicit_transitions {
            let c = self.num_predicates;
            if e.transition.len() != c * c {
                return Err(CoreError::Config(format!(
                    "explicit transition for ({}, {}) has {} entries, expected {}",
                    e.subject_class,
                    e.object_class,
                    e.transition.len(),
                    c * c
                )));
            }
            for row in 0..c {
                let r = &e.transition[row * c..(row + 1) * c];
                if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(CoreError::Config(format!(
                        "explicit transition for ({}, {}) row {row} has entries outside [0, 1]",
                        e.subject_class, e.object_class
                    )));
                }
                let sum: f64 = r.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(CoreError::Config(format!(
                        "explicit transition for ({}, {}) row {row} sums to {sum}, expected 1",
                        e.subject_class, e.object_class
                    )));
                }
            }
            if self.chains != ChainStructure::Single {
                return Err(CoreError::Config(
                    "explicit transitions require single-chain structure".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One Markov chain over a subset of predicate ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGroup {
    /// Predicate ids covered by this chain.
    pub ids: Vec<usize>,
    /// Row-major n×n transition matrix over `ids`.
    pub transition: Vec<f64>,
    /// Stationary distribution over `ids` (also the initial distribution).
    pub stationary: Vec<f64>,
}

/// True dynamics of one class pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDynamics {
    pub subject_class: usize,
    pub object_class: usize,
    pub groups: Vec<ChainGroup>,
    /// Per-predicate activity rate (the true co-occurrence vector).
    pub cooccurrence: Vec<f64>,
    /// Expected conditional transition matrix over all C predicates:
    /// within-group entries follow the chain, cross-group entries equal the
    /// target group's stationary rate.
    pub transition: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDynamics {
    pub num_predicates: usize,
    pub pairs: Vec<PairDynamics>,
}

impl GroundTruthDynamics {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn pair(&self, subject_class: usize, object_class: usize) -> Option<&PairDynamics> {
        self.pairs
            .iter()
            .find(|p| p.subject_class == subject_class && p.object_class == object_class)
    }
}

/// Stationary distribution by damped power iteration. The damping keeps the
/// fixed point while converging even for periodic chains.
fn stationary(transition: &[f64], n: usize) -> Vec<f64> {
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..50_000 {
        let mut next = vec![0.0; n];
        for (i, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for j in 0..n {
                next[j] += p * transition[i * n + j];
            }
        }
        let mut diff = 0.0;
        for (nx, px) in next.iter_mut().zip(&pi) {
            *nx = 0.5 * *nx + 0.5 * px;
            diff += (*nx - px).abs();
        }
        pi = next;
        if diff < 1e-14 {
            break;
        }
    }
    pi
}

/// Metropolis random walk on a cycle of `n` states with stationary `target`,
/// blended with `stickiness` self-transition mass.
fn metropolis_cycle(target: &[f64], stickiness: f64) -> Vec<f64> {
    let n = target.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut t = vec![0.0; n * n];
    for k in 0..n {
        let mut stay = 1.0;
        for step in [n - 1, 1] {
            let j = (k + step) % n;
            let accept = (target[j] / target[k]).min(1.0);
            let p = 0.5 * accept * (1.0 - stickiness);
            t[k * n + j] += p;
            stay -= p;
        }
        t[k * n + k] += stay;
    }
    t
}

fn power_law(n: usize, skew: f64, rotation: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|i| {
            let rank = (i + rotation) % n;
            1.0 / ((rank + 1) as f64).powf(skew)
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

fn build_pair_dynamics(cfg: &GenConfig, subject_class: usize, object_class: usize) -> Result<PairDynamics> {
    let c = cfg.num_predicates;
    let explicit = cfg
        .explicit_transitions
        .iter()
        .find(|e| e.subject_class == subject_class && e.object_class == object_class);
    let groups: Vec<ChainGroup> = if let Some(e) = explicit {
        vec![ChainGroup {
            ids: (0..c).collect(),
            stationary: stationary(&e.transition, c),
            transition: e.transition.clone(),
        }]
    } else {
        let id_groups: Vec<Vec<usize>> = match cfg.chains {
            ChainStructure::Single => vec![(0..c).collect()],
            ChainStructure::PerTypeGroup => {
                let mut out = Vec::new();
                let mut start = 0;
                for &sz in &cfg.predicate_type_sizes {
                    out.push((start..start + sz).collect());
                    start += sz;
                }
                out
            }
        };
        id_groups
            .into_iter()
            .map(|ids| {
                // rotate the power law per class pair so different pairs
                // favor different predicates
                let target = power_law(ids.len(), cfg.skew, object_class.saturating_sub(1));
                let transition = metropolis_cycle(&target, cfg.stickiness);
                ChainGroup {
                    stationary: stationary(&transition, ids.len()),
                    ids,
                    transition,
                }
            })
            .collect()
    };

    // assemble the full-C truth from the group chains
    let mut cooccurrence = vec![0.0; c];
    for g in &groups {
        for (local, &id) in g.ids.iter().enumerate() {
            cooccurrence[id] = g.stationary[local];
        }
    }
    let mut transition = vec![0.0; c * c];
    for gx in &groups {
        let n = gx.ids.len();
        for (lx, &x) in gx.ids.iter().enumerate() {
            for gy in &groups {
                for (ly, &y) in gy.ids.iter().enumerate() {
                    transition[x * c + y] = if std::ptr::eq(gx, gy) {
                        gx.transition[lx * n + ly]
                    } else {
                        gy.stationary[ly]
                    };
                }
            }
        }
    }
    Ok(PairDynamics {
        subject_class,
        object_class,
        groups,
        cooccurrence,
        transition,
    })
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Round to f32 precision so f32 sidecar files round-trip exactly.
fn f32_normal(mean: f64, std: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = Normal::new(mean, std).expect("valid std");
    n.sample(rng) as f32 as f64
}

struct BoxWalk {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoxWalk {
    fn new(rng: &mut ChaCha8Rng, w_range: (f64, f64), h_range: (f64, f64)) -> Self {
        let w = rng.gen_range(w_range.0..w_range.1);
        let h = rng.gen_range(h_range.0..h_range.1);
        BoxWalk {
            cx: rng.gen_range(w / 2.0..CANVAS_W - w / 2.0),
            cy: rng.gen_range(h / 2.0..CANVAS_H - h / 2.0),
            w,
            h,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, step: f64) {
        self.cx = reflect(self.cx + rng.gen_range(-step..step), self.w / 2.0, CANVAS_W - self.w / 2.0);
        self.cy = reflect(self.cy + rng.gen_range(-step..step), self.h / 2.0, CANVAS_H - self.h / 2.0);
    }

    fn bbox(&self) -> BBox {
        // corners rounded to f32 so annotation JSON stays compact-precision
        BBox::new(
            (self.cx - self.w / 2.0) as f32 as f64,
            (self.cy - self.h / 2.0) as f32 as f64,
            (self.cx + self.w / 2.0) as f32 as f64,
            (self.cy + self.h / 2.0) as f32 as f64,
        )
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo + (lo - v)
    } else if v > hi {
        hi - (v - hi)
    } else {
        v
    }
}

struct FeatureSpace {
    class_means: Vec<Vec<f64>>,
    predicate_dirs: Vec<Vec<f64>>,
}

impl FeatureSpace {
    fn new(cfg: &GenConfig) -> Self {
        // seeded independently of the per-video streams so dynamics and
        // feature geometry are shared across splits with different seeds
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
        let class_means = (0..cfg.num_object_classes)
            .map(|_| (0..cfg.feature_dim).map(|_| f32_normal(0.0, 1.0, &mut rng)).collect())
            .collect();
        let union_flat = cfg.union_channels * cfg.union_grid * cfg.union_grid;
        let predicate_dirs = (0..cfg.num_predicates)
            .map(|_| (0..union_flat).map(|_| f32_normal(0.0, 1.0, &mut rng)).collect())
            .collect();
        FeatureSpace {
            class_means,
            predicate_dirs,
        }
    }
}

fn generate_video(
    cfg: &GenConfig,
    dynamics: &[PairDynamics],
    space: &FeatureSpace,
    video_idx: usize,
) -> VideoAnnotation {
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(video_idx as u64),
    );
    let union_flat = cfg.union_channels * cfg.union_grid * cfg.union_grid;

    // persistent pairs: shared person subject + one object per pair; the
    // class assignment rotates per video so every configured pair appears
    let pair_dyn: Vec<&PairDynamics> = (0..cfg.pairs_per_video)
        .map(|p| &dynamics[(p + video_idx) % dynamics.len()])
        .collect();
    let mut person = BoxWalk::new(&mut rng, (120.0, 200.0), (200.0, 320.0));
    let mut objects: Vec<BoxWalk> = (0..cfg.pairs_per_video)
        .map(|_| BoxWalk::new(&mut rng, (30.0, 80.0), (30.0, 80.0)))
        .collect();
    // chain states per pair per group, drawn from the stationary distribution
    let mut states: Vec<Vec<usize>> = pair_dyn
        .iter()
        .map(|d| {
            d.groups
                .iter()
                .map(|g| sample_index(&g.stationary, &mut rng))
                .collect()
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames_per_video);
    for frame_index in 0..cfg.frames_per_video {
        if frame_index > 0 {
            person.step(&mut rng, 1.0);
            for o in &mut objects {
                o.step(&mut rng, 1.0);
            }
            for (p, d) in pair_dyn.iter().enumerate() {
                for (gi, g) in d.groups.iter().enumerate() {
                    let n = g.ids.len();
                    let from = states[p][gi];
                    states[p][gi] = sample_index(&g.transition[from * n..(from + 1) * n], &mut rng);
                }
            }
        }

        let feature = |class: usize, rng: &mut ChaCha8Rng| -> Option<Tensor> {
            if cfg.feature_dim == 0 {
                return None;
            }
            let mean = &space.class_means[class];
            Some(Tensor::from_fn(&[cfg.feature_dim], |i| {
                (mean[i] + f32_normal(0.0, cfg.feature_noise, rng)) as f32 as f64
            }))
        };

        let mut proposals = vec![ObjectProposal::ground_truth(
            person.bbox(),
            0,
            cfg.num_object_classes,
            feature(0, &mut rng),
        )];
        let mut relationships = Vec::with_capacity(cfg.pairs_per_video);
        for (p, d) in pair_dyn.iter().enumerate() {
            proposals.push(ObjectProposal::ground_truth(
                objects[p].bbox(),
                d.object_class,
                cfg.num_object_classes,
                feature(d.object_class, &mut rng),
            ));
            let active: Vec<usize> = d
                .groups
                .iter()
                .enumerate()
                .map(|(gi, g)| g.ids[states[p][gi]])
                .collect();
            let mut rel = RelationshipInstance::new(0, p + 1, active.clone());
            rel.pair_track_id = Some(p as u64);
            if cfg.feature_dim > 0 && union_flat > 0 {
                let mut u = vec![0.0; union_flat];
                for &pid in &active {
                    for (ui, d) in u.iter_mut().zip(&space.predicate_dirs[pid]) {
                        *ui += cfg.predicate_signal * d;
                    }
                }
                for v in u.iter_mut() {
                    *v = (*v + f32_normal(0.0, cfg.feature_noise, &mut rng)) as f32 as f64;
                }
                rel.union_feature = Some(Tensor::new(u, &[union_flat]).expect("length matches"));
            }
            relationships.push(rel);
        }
        frames.push(FrameAnnotation {
            frame_index: frame_index as i64,
            proposals,
            relationships,
        });
    }
    VideoAnnotation {
        video_id: format!("synth-{video_idx:04}"),
        frames,
    }
}

/// Generate a dataset plus the exact dynamics it was sampled from.
pub fn generate_synthetic_dataset(cfg: &GenConfig) -> Result<(Dataset, GroundTruthDynamics)> {
    cfg.validate()?;
    let dynamics: Vec<PairDynamics> = (0..cfg.distinct_object_classes)
        .map(|i| build_pair_dynamics(cfg, 0, 1 + i))
        .collect::<Result<_>>()?;
    let space = FeatureSpace::new(cfg);

    let videos = exec::map_indices(cfg.videos, |i| generate_video(cfg, &dynamics, &space, i));

    let class_names: Vec<String> = (0..cfg.num_object_classes)
        .map(|i| if i == 0 { "person".into() } else { format!("object_{i}") })
        .collect();
    let predicate_names: Vec<String> = (0..cfg.num_predicates).map(|i| format!("predicate_{i}")).collect();
    let dataset = Dataset {
        class_names,
        predicate_names,
        predicate_type_sizes: cfg.predicate_type_sizes.clone(),
        videos,
    };
    dataset.validate()?;
    Ok((
        dataset,
        GroundTruthDynamics {
            num_predicates: cfg.num_predicates,
            pairs: dynamics,
        },
    ))
}

/// Sequential reference for [`generate_synthetic_dataset`] (benches).
pub fn generate_synthetic_dataset_seq(cfg: &GenConfig) -> Result<(Dataset, GroundTruthDynamics)> {
    cfg.validate()?;
    let dynamics: Vec<PairDynamics> = (0..cfg.distinct_object_classes)
        .map(|i| build_pair_dynamics(cfg, 0, 1 + i))
        .collect::<Result<_>>()?;
    let space = FeatureSpace::new(cfg);
    let videos = exec::map_indices_seq(cfg.videos, |i| generate_video(cfg, &dynamics, &space, i));
    let class_names: Vec<String> = (0..cfg.num_object_classes)
        .map(|i| if i == 0 { "person".into() } else { format!("object_{i}") })
        .collect();
    let predicate_names: Vec<String> = (0..cfg.num_predicates).map(|i| format!("predicate_{i}")).collect();
    let dataset = Dataset {
        class_names,
        predicate_names,
        predicate_type_sizes: cfg.predicate_type_sizes.clone(),
        videos,
    };
    Ok((
        dataset,
        GroundTruthDynamics {
            num_predicates: cfg.num_predicates,
            pairs: dynamics,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig {
            videos: 3,
            frames_per_video: 5,
            ..GenConfig::preset_benchmark(7)
        };
        let (a, da) = generate_synthetic_dataset(&cfg).unwrap();
        let (b, db) = generate_synthetic_dataset(&cfg).unwrap();
        assert_eq!(da, db);
        assert_eq!(a.videos.len(), b.videos.len());
        for (va, vb) in a.videos.iter().zip(&b.videos) {
            for (fa, fb) in va.frames.iter().zip(&vb.frames) {
                for (pa, pb) in fa.proposals.iter().zip(&fb.proposals) {
                    assert_eq!(pa.bbox, pb.bbox);
                    assert_eq!(
                        pa.visual_feature.as_ref().map(|t| t.data().to_vec()),
                        pb.visual_feature.as_ref().map(|t| t.data().to_vec())
                    );
                }
                for (ra, rb) in fa.relationships.iter().zip(&fb.relationships) {
                    assert_eq!(ra.predicates, rb.predicates);
                }
            }
        }
    }

    #[test]
    fn parallel_and_sequential_generation_agree() {
        let cfg = GenConfig {
            videos: 4,
            frames_per_video: 4,
            ..GenConfig::preset_benchmark(3)
        };
        let (a, _) = generate_synthetic_dataset(&cfg).unwrap();
        let (b, _) = generate_synthetic_dataset_seq(&cfg).unwrap();
        for (va, vb) in a.videos.iter().zip(&b.videos) {
            for (fa, fb) in va.frames.iter().zip(&vb.frames) {
                for (ra, rb) in fa.relationships.iter().zip(&fb.relationships) {
                    assert_eq!(ra.predicates, rb.predicates);
                }
            }
        }
    }

    #[test]
    fn deterministic_chain_follows_exactly() {
        // one-hot rows: 0 -> 1 -> 2 -> 0 cycle
        let c = 3;
        let mut transition = vec![0.0; c * c];
        transition[1] = 1.0; // 0 -> 1
        transition[c + 2] = 1.0; // 1 -> 2
        transition[2 * c] = 1.0; // 2 -> 0
        let cfg = GenConfig {
            num_object_classes: 2,
            num_predicates: c,
            predicate_type_sizes: vec![],
            chains: ChainStructure::Single,
            distinct_object_classes: 1,
            videos: 2,
            frames_per_video: 9,
            pairs_per_video: 1,
            seed: 5,
            feature_dim: 0,
            union_channels: 0,
            union_grid: 0,
            explicit_transitions: vec![ExplicitPairTransition {
                subject_class: 0,
                object_class: 1,
                transition,
            }],
            ..GenConfig::preset_recovery(5)
        };
        let (ds, _) = generate_synthetic_dataset(&cfg).unwrap();
        for v in &ds.videos {
            for w in v.frames.windows(2) {
                let a = w[0].relationships[0].predicates[0];
                let b = w[1].relationships[0].predicates[0];
                assert_eq!(b, (a + 1) % c);
            }
        }
    }

    #[test]
    fn invalid_transition_matrix_is_config_error() {
        let mut transition = vec![0.0; 4];
        transition[0] = 0.7;
        transition[1] = 0.7; // row sums to 1.4
        transition[2] = 0.5;
        transition[3] = 0.5;
        let cfg = GenConfig {
            num_predicates: 2,
            explicit_transitions: vec![ExplicitPairTransition {
                subject_class: 0,
                object_class: 1,
                transition,
            }],
            chains: ChainStructure::Single,
            predicate_type_sizes: vec![],
            ..GenConfig::preset_recovery(0)
        };
        let err = generate_synthetic_dataset(&cfg).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)), "{err}");
    }

    #[test]
    fn metropolis_stationary_matches_target() {
        let target = power_law(6, 1.3, 0);
        let t = metropolis_cycle(&target, 0.3);
        let pi = stationary(&t, 6);
        for (a, b) in pi.iter().zip(&target) {
            assert!((a - b).abs() < 1e-9, "{pi:?} vs {target:?}");
        }
    }

    #[test]
    fn boxes_track_smoothly() {
        let cfg = GenConfig {
            videos: 2,
            frames_per_video: 10,
            ..GenConfig::preset_benchmark(11)
        };
        let (ds, _) = generate_synthetic_dataset(&cfg).unwrap();
        for v in &ds.videos {
            for w in v.frames.windows(2) {
                let mapping = crate::data::track_pairs(&w[0], &w[1]);
                assert!(mapping.iter().all(|m| m.is_some()), "pairs should track across frames");
            }
        }
    }

    #[test]
    fn multi_label_sets_have_one_predicate_per_group() {
        let cfg = GenConfig {
            videos: 2,
            frames_per_video: 4,
            ..GenConfig::preset_benchmark(2)
        };
        let (ds, _) = generate_synthetic_dataset(&cfg).unwrap();
        let mut bound = 0;
        let groups: Vec<std::ops::Range<usize>> = cfg
            .predicate_type_sizes
            .iter()
            .map(|&sz| {
                let r = bound..bound + sz;
                bound += sz;
                r
            })
            .collect();
        for v in &ds.videos {
            for f in &v.frames {
                for r in &f.relationships {
                    assert_eq!(r.predicates.len(), groups.len());
                    for (p, g) in r.predicates.iter().zip(&groups) {
                        assert!(g.contains(p), "{p} outside {g:?}");
                    }
                }
            }
        }
    }
}
