//! Matching and recall verified against a brute-force re-implementation on
//! random micro-instances, plus metric monotonicity and the frequency-prior
//! baseline behaviour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stket_core::data::{BBox, Dataset, FrameAnnotation, ObjectProposal, RelationshipInstance, VideoAnnotation};
use stket_core::eval::{
    frequency_prior_baseline, match_triplets, score_predictions, FramePredictions, PredictionSet,
    ScoredTriplet,
};
use stket_core::knowledge::build_spatial_matrix;
use stket_core::model::TaskMode;
use stket_core::synth::{generate_synthetic_dataset, ChainStructure, GenConfig};

/// Independent IoU (computed through corners rather than widths).
fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let x1 = a.x1.max(b.x1);
    let y1 = a.y1.max(b.y1);
    let x2 = a.x2.min(b.x2);
    let y2 = a.y2.min(b.y2);
    let inter = if x2 > x1 && y2 > y1 { (x2 - x1) * (y2 - y1) } else { 0.0 };
    let area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    let area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    let union = area_a + area_b - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Brute-force greedy matcher: explicit sort, explicit compatibility checks,
/// explicit (prediction, GT) pairing scan. No shared code with the library
/// matcher beyond the data types.
fn oracle_match(
    preds: &FramePredictions,
    frame: &FrameAnnotation,
    task: TaskMode,
) -> Vec<Option<usize>> {
    let mut gts: Vec<(usize, usize, usize)> = Vec::new();
    for rel in &frame.relationships {
        for &p in &rel.predicates {
            gts.push((rel.subject_index, rel.object_index, p));
        }
    }
    let mut order: Vec<usize> = (0..preds.triplets.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&preds.triplets[a], &preds.triplets[b]);
        tb.confidence
            .total_cmp(&ta.confidence)
            .then(ta.predicate.cmp(&tb.predicate))
            .then(ta.pair_rank.cmp(&tb.pair_rank))
    });
    let mut hit: Vec<Option<usize>> = vec![None; gts.len()];
    for (rank, &pi) in order.iter().enumerate() {
        let pred = &preds.triplets[pi];
        'gt: for (gi, &(gs, go, gp)) in gts.iter().enumerate() {
            if hit[gi].is_some() || pred.predicate != gp {
                continue;
            }
            let ok = match task {
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
                        && oracle_iou(&frame.proposals[pred.subject].bbox, &frame.proposals[gs].bbox) >= 0.5
                        && oracle_iou(&frame.proposals[pred.object].bbox, &frame.proposals[go].bbox) >= 0.5
                }
            };
            if ok {
                hit[gi] = Some(rank);
                break 'gt;
            }
        }
    }
    hit
}

fn random_micro_instance(rng: &mut ChaCha8Rng) -> (FrameAnnotation, FramePredictions) {
    let c = 5;
    let n_props = rng.gen_range(2..=5);
    let proposals: Vec<ObjectProposal> = (0..n_props)
        .map(|_| {
            let x = rng.gen_range(0.0..50.0);
            let y = rng.gen_range(0.0..50.0);
            let w = rng.gen_range(5.0..25.0);
            let h = rng.gen_range(5.0..25.0);
            ObjectProposal::ground_truth(BBox::new(x, y, x + w, y + h), rng.gen_range(0..3), 3, None)
        })
        .collect();
    let n_gt = rng.gen_range(1..=4);
    let relationships = (0..n_gt)
        .map(|_| {
            let s = rng.gen_range(0..n_props);
            let mut o = rng.gen_range(0..n_props);
            while o == s {
                o = rng.gen_range(0..n_props);
            }
            let n_preds = rng.gen_range(1..=2);
            RelationshipInstance::new(s, o, (0..n_preds).map(|_| rng.gen_range(0..c)).collect())
        })
        .collect();
    let frame = FrameAnnotation {
        frame_index: 0,
        proposals,
        relationships,
    };
    let n_preds = rng.gen_range(0..=8);
    let triplets = (0..n_preds)
        .map(|i| {
            let s = rng.gen_range(0..n_props);
            let mut o = rng.gen_range(0..n_props);
            while o == s {
                o = rng.gen_range(0..n_props);
            }
            ScoredTriplet {
                subject: s,
                object: o,
                predicate: rng.gen_range(0..c),
                // quantized confidences force tie-breaking
                confidence: f64::from(rng.gen_range(0..4)) / 4.0,
                pair_rank: i,
            }
        })
        .collect();
    let preds = FramePredictions {
        triplets,
        classes: frame.proposals.iter().map(|p| p.predicted_class).collect(),
        class_confidence: vec![1.0; n_props],
    };
    (frame, preds)
}

#[test]
fn matcher_agrees_with_brute_force_on_1000_micro_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let (frame, preds) = random_micro_instance(&mut rng);
        for task in [TaskMode::PredCls, TaskMode::SgCls, TaskMode::SgGen] {
            let got = match_triplets(&preds, &frame, task);
            let want = oracle_match(&preds, &frame, task);
            assert_eq!(got, want, "case {case} task {task:?}");
        }
    }
}

fn micro_dataset(seed: u64) -> (Dataset, PredictionSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::new();
    let mut pred_frames = Vec::new();
    for i in 0..12 {
        let (mut frame, preds) = random_micro_instance(&mut rng);
        frame.frame_index = i;
        frames.push(frame);
        pred_frames.push(preds);
    }
    let ds = Dataset {
        class_names: vec!["a".into(), "b".into(), "c".into()],
        predicate_names: (0..5).map(|i| format!("p{i}")).collect(),
        predicate_type_sizes: vec![],
        videos: vec![VideoAnnotation {
            video_id: "v".into(),
            frames,
        }],
    };
    let preds = PredictionSet {
        task: TaskMode::PredCls,
        videos: vec![pred_frames],
    };
    (ds, preds)
}

#[test]
fn recall_is_monotone_in_k() {
    for seed in 0..30 {
        let (ds, preds) = micro_dataset(seed);
        let report = score_predictions(&preds, &ds, &[1, 2, 3, 5, 10, 20, 50]).unwrap();
        let mut prev = 0.0;
        for k in [1, 2, 3, 5, 10, 20, 50] {
            let r = report.recall_at(k);
            assert!(r >= prev, "seed {seed}: R@{k} = {r} < {prev}");
            prev = r;
        }
    }
}

#[test]
fn mean_recall_equals_recall_for_uniform_hits() {
    // one GT per predicate, all hit: mR == R == 100
    let frame = FrameAnnotation {
        frame_index: 0,
        proposals: (0..3)
            .map(|i| ObjectProposal::ground_truth(BBox::new(10.0 * i as f64, 0.0, 10.0 * i as f64 + 5.0, 5.0), i, 3, None))
            .collect(),
        relationships: vec![
            RelationshipInstance::new(0, 1, vec![0]),
            RelationshipInstance::new(0, 2, vec![1]),
        ],
    };
    let ds = Dataset {
        class_names: vec!["a".into(), "b".into(), "c".into()],
        predicate_names: vec!["p0".into(), "p1".into()],
        predicate_type_sizes: vec![],
        videos: vec![VideoAnnotation { video_id: "v".into(), frames: vec![frame] }],
    };
    let preds = PredictionSet {
        task: TaskMode::PredCls,
        videos: vec![vec![FramePredictions {
            triplets: vec![
                ScoredTriplet { subject: 0, object: 1, predicate: 0, confidence: 0.9, pair_rank: 0 },
                ScoredTriplet { subject: 0, object: 2, predicate: 1, confidence: 0.8, pair_rank: 1 },
            ],
            classes: vec![0, 1, 2],
            class_confidence: vec![1.0; 3],
        }]],
    };
    let report = score_predictions(&preds, &ds, &[10]).unwrap();
    assert_eq!(report.recall_at(10), report.mean_recall_at(10));
    assert_eq!(report.recall_at(10), 100.0);
}

#[test]
fn deterministic_pairs_give_baseline_full_recall() {
    // absorbing chains: every row of the (0, j) pair jumps to predicate j,
    // so each class pair always shows exactly one predicate and ranking by
    // co-occurrence recalls everything at K ≥ pairs-per-frame
    let c = 4;
    let absorbing = |target: usize| {
        let mut t = vec![0.0; c * c];
        for row in 0..c {
            t[row * c + target] = 1.0;
        }
        t
    };
    let cfg = GenConfig {
        num_object_classes: 3,
        num_predicates: c,
        predicate_type_sizes: vec![],
        chains: ChainStructure::Single,
        distinct_object_classes: 2,
        videos: 4,
        frames_per_video: 6,
        pairs_per_video: 2,
        seed: 5,
        feature_dim: 0,
        union_channels: 0,
        union_grid: 0,
        explicit_transitions: vec![
            stket_core::synth::ExplicitPairTransition {
                subject_class: 0,
                object_class: 1,
                transition: absorbing(1),
            },
            stket_core::synth::ExplicitPairTransition {
                subject_class: 0,
                object_class: 2,
                transition: absorbing(2),
            },
        ],
        ..GenConfig::preset_recovery(5)
    };
    let (ds, _) = generate_synthetic_dataset(&cfg).unwrap();
    let bank = build_spatial_matrix(&ds);
    let preds = frequency_prior_baseline(&bank, &ds);
    let report = score_predictions(&preds, &ds, &[2, 10]).unwrap();
    assert_eq!(report.recall_at(2), 100.0);
    assert_eq!(report.recall_at(10), 100.0);
}

#[test]
fn unseen_pair_baseline_ties_break_by_predicate_id() {
    let frame = FrameAnnotation {
        frame_index: 0,
        proposals: vec![
            ObjectProposal::ground_truth(BBox::new(0.0, 0.0, 5.0, 5.0), 0, 3, None),
            ObjectProposal::ground_truth(BBox::new(9.0, 0.0, 15.0, 5.0), 2, 3, None),
        ],
        relationships: vec![RelationshipInstance::new(0, 1, vec![3])],
    };
    let ds = Dataset {
        class_names: vec!["a".into(), "b".into(), "c".into()],
        predicate_names: (0..4).map(|i| format!("p{i}")).collect(),
        predicate_type_sizes: vec![],
        videos: vec![VideoAnnotation { video_id: "v".into(), frames: vec![frame] }],
    };
    // bank built from an unrelated dataset: the (0, 2) pair is unseen
    let empty_bank = build_spatial_matrix(&Dataset {
        class_names: ds.class_names.clone(),
        predicate_names: ds.predicate_names.clone(),
        predicate_type_sizes: vec![],
        videos: vec![],
    });
    let preds = frequency_prior_baseline(&empty_bank, &ds);
    let triplets = &preds.videos[0][0].triplets;
    assert!(triplets.iter().all(|t| (t.confidence - 0.25).abs() < 1e-12));
    let mut sorted = triplets.clone();
    stket_core::eval::sort_triplets(&mut sorted);
    let order: Vec<usize> = sorted.iter().map(|t| t.predicate).collect();
    assert_eq!(order, vec![0, 1, 2, 3]);
}
