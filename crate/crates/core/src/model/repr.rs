//! Relationship representation construction: each subject-object pair in a
//! frame becomes one d-dimensional row combining projected subject/object
//! features, a projected union-map slot, and the two semantic embeddings.

use stket_autograd::{Tape, ValueId};

use crate::data::{BBox, FrameAnnotation};
use crate::error::{CoreError, Result};
use crate::model::config::ModelConfig;
use crate::model::params::ModelIds;

/// Binary occupancy mask of `b` over a `grid × grid` partition of `union`.
/// A cell counts as occupied when its center lies inside `b` (half-open on
/// the max edges), so disjoint boxes always produce disjoint masks.
pub fn occupancy_mask(b: &BBox, union: &BBox, grid: usize) -> Vec<f64> {
    let mut mask = vec![0.0; grid * grid];
    let w = union.x2 - union.x1;
    let h = union.y2 - union.y1;
    for r in 0..grid {
        let cy = union.y1 + (r as f64 + 0.5) * h / grid as f64;
        for c in 0..grid {
            let cx = union.x1 + (c as f64 + 0.5) * w / grid as f64;
            if cx >= b.x1 && cx < b.x2 && cy >= b.y1 && cy < b.y2 {
                mask[r * grid + c] = 1.0;
            }
        }
    }
    mask
}

/// Encode a subject/object box pair as a `[1 × channels·grid²]` row
/// (channel-major), by projecting the two stacked occupancy masks through
/// the learned 2 → channels map.
pub fn box_to_spatial_map(
    tape: &mut Tape,
    ids: &ModelIds,
    b_subj: &BBox,
    b_obj: &BBox,
    cfg: &ModelConfig,
) -> Result<ValueId> {
    let union = b_subj.union_box(b_obj);
    if union.area() <= 0.0 || !union.is_valid() {
        return Err(CoreError::Data(format!(
            "degenerate union box {union:?} for boxes {b_subj:?}, {b_obj:?}"
        )));
    }
    let grid = cfg.union_grid;
    let cells = grid * grid;
    let mask_s = occupancy_mask(b_subj, &union, grid);
    let mask_o = occupancy_mask(b_obj, &union, grid);
    // rows = cells, cols = (subject, object)
    let mut stacked = vec![0.0; cells * 2];
    for i in 0..cells {
        stacked[i * 2] = mask_s[i];
        stacked[i * 2 + 1] = mask_o[i];
    }
    let masks = tape.constant(stacked, &[cells, 2]);
    let per_cell = ids.f_box.forward(tape, masks)?; // [cells × channels]
    let channel_major = tape.transpose(per_cell)?; // [channels × cells]
    Ok(tape.reshape(channel_major, &[1, cfg.union_flat()])?)
}

/// Build the `[1 × d]` representation of relationship `k` in `frame`.
pub fn build_relationship_representation(
    tape: &mut Tape,
    ids: &ModelIds,
    frame: &FrameAnnotation,
    k: usize,
    cfg: &ModelConfig,
) -> Result<ValueId> {
    let rel = &frame.relationships[k];
    let subj = &frame.proposals[rel.subject_index];
    let obj = &frame.proposals[rel.object_index];

    let feature_of = |p: &crate::data::ObjectProposal, role: &str| -> Result<Vec<f64>> {
        match &p.visual_feature {
            Some(t) if t.numel() == cfg.visual_dim => Ok(t.data().to_vec()),
            Some(t) => Err(CoreError::Data(format!(
                "{role} feature has {} elements, expected {}",
                t.numel(),
                cfg.visual_dim
            ))),
            None => Err(CoreError::Data(format!(
                "missing {role} visual feature for relationship {k} in frame {}",
                frame.frame_index
            ))),
        }
    };
    let v_s = feature_of(subj, "subject")?;
    let v_o = feature_of(obj, "object")?;
    let v_s = tape.constant(v_s, &[1, cfg.visual_dim]);
    let v_o = tape.constant(v_o, &[1, cfg.visual_dim]);
    let subj_slot = ids.f_s.forward(tape, v_s)?;
    let obj_slot = ids.f_o.forward(tape, v_o)?;

    // union feature map ⊕ box encoding, flattened then projected
    let union_flat = cfg.union_flat();
    let u = match &rel.union_feature {
        Some(t) if t.numel() == union_flat => t.data().to_vec(),
        Some(t) => {
            return Err(CoreError::Data(format!(
                "union feature has {} elements, expected {union_flat}",
                t.numel()
            )))
        }
        None => vec![0.0; union_flat],
    };
    let u = tape.constant(u, &[1, union_flat]);
    let box_map = box_to_spatial_map(tape, ids, &subj.bbox, &obj.bbox, cfg)?;
    let fused = tape.add(u, box_map)?;
    let union_slot = ids.f_u.forward(tape, fused)?;

    // semantic embeddings: distribution-weighted rows of the table
    let dist_s = tape.constant(subj.class_distribution.clone(), &[1, cfg.num_object_classes]);
    let dist_o = tape.constant(obj.class_distribution.clone(), &[1, cfg.num_object_classes]);
    let sem_s = tape.matmul(dist_s, ids.sem_table)?;
    let sem_o = tape.matmul(dist_o, ids.sem_table)?;

    Ok(tape.concat(&[subj_slot, obj_slot, union_slot, sem_s, sem_o], 1)?)
}

/// Stack the representations of every relationship in a frame, `[K × d]`.
/// Frames with no relationships return `None`.
pub fn build_frame_representations(
    tape: &mut Tape,
    ids: &ModelIds,
    frame: &FrameAnnotation,
    cfg: &ModelConfig,
) -> Result<Option<ValueId>> {
    if frame.relationships.is_empty() {
        return Ok(None);
    }
    let mut rows = Vec::with_capacity(frame.relationships.len());
    for k in 0..frame.relationships.len() {
        rows.push(build_relationship_representation(tape, ids, frame, k, cfg)?);
    }
    Ok(Some(tape.concat(&rows, 0)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ObjectProposal, RelationshipInstance};
    use crate::model::params::ModelParams;
    use crate::nn::Binder;
    use stket_autograd::Tensor;

    fn toy_setup() -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig::toy(3, 4);
        let params = ModelParams::init(&cfg, 11);
        (cfg, params)
    }

    fn frame_with_features(cfg: &ModelConfig, zero_features: bool) -> FrameAnnotation {
        let feat = |scale: f64| {
            let v = if zero_features { 0.0 } else { scale };
            Some(Tensor::from_fn(&[cfg.visual_dim], |i| v * (i as f64 + 1.0)))
        };
        let mut rel = RelationshipInstance::new(0, 1, vec![0]);
        rel.union_feature = if zero_features {
            None
        } else {
            Some(Tensor::from_fn(&[cfg.union_flat()], |i| 0.01 * i as f64))
        };
        FrameAnnotation {
            frame_index: 0,
            proposals: vec![
                ObjectProposal::ground_truth(BBox::new(0.0, 0.0, 4.0, 4.0), 0, cfg.num_object_classes, feat(0.1)),
                ObjectProposal::ground_truth(BBox::new(1.0, 1.0, 3.0, 3.0), 1, cfg.num_object_classes, feat(0.2)),
            ],
            relationships: vec![rel],
        }
    }

    #[test]
    fn representation_width_is_d() {
        let (cfg, params) = toy_setup();
        let frame = frame_with_features(&cfg, false);
        let mut tape = Tape::new();
        let mut binder = Binder::new(&mut tape);
        let ids = params.bind(&mut binder);
        let x = build_relationship_representation(&mut tape, &ids, &frame, 0, &cfg).unwrap();
        assert_eq!(tape.shape(x), &[1, cfg.d()]);
    }

    #[test]
    fn full_width_arithmetic() {
        // 512 + 512 + 512 + 200 + 200 = 1936; the live check at full width
        // runs in the acceptance suite
        let cfg = ModelConfig::default();
        assert_eq!(3 * cfg.proj_dim + 2 * cfg.semantic_dim, 1936);
    }

    #[test]
    fn zero_inputs_yield_biases_and_semantics() {
        let (cfg, mut params) = toy_setup();
        // zero the box projection so the union slot sees a zero input
        for v in params.f_box.w.data_mut() {
            *v = 0.0;
        }
        for v in params.f_box.b.data_mut() {
            *v = 0.0;
        }
        let frame = frame_with_features(&cfg, true);
        let mut tape = Tape::new();
        let mut binder = Binder::new(&mut tape);
        let ids = params.bind(&mut binder);
        let x = build_relationship_representation(&mut tape, &ids, &frame, 0, &cfg).unwrap();
        let got = tape.value(x).to_vec();

        let p = cfg.proj_dim;
        let mut expect = Vec::new();
        expect.extend_from_slice(params.f_s.b.data());
        expect.extend_from_slice(params.f_o.b.data());
        expect.extend_from_slice(params.f_u.b.data());
        // one-hot class distributions select table rows exactly
        expect.extend_from_slice(&params.sem_table.data()[0..cfg.semantic_dim]);
        expect.extend_from_slice(&params.sem_table.data()[cfg.semantic_dim..2 * cfg.semantic_dim]);
        assert_eq!(got.len(), expect.len());
        for (i, (g, e)) in got.iter().zip(&expect).enumerate() {
            assert!((g - e).abs() < 1e-12, "slot {i}: {g} vs {e} (p = {p})");
        }
    }

    #[test]
    fn identical_boxes_have_identical_masks() {
        let b = BBox::new(1.0, 1.0, 6.0, 4.0);
        let union = b;
        assert_eq!(occupancy_mask(&b, &union, 7), occupancy_mask(&b, &union, 7));
    }

    #[test]
    fn disjoint_boxes_have_disjoint_masks() {
        let a = BBox::new(0.0, 0.0, 3.0, 6.0);
        let b = BBox::new(4.0, 0.0, 7.0, 6.0);
        let union = a.union_box(&b);
        let ma = occupancy_mask(&a, &union, 7);
        let mb = occupancy_mask(&b, &union, 7);
        assert!(ma.iter().zip(&mb).all(|(x, y)| x * y == 0.0));
        assert!(ma.iter().sum::<f64>() > 0.0);
        assert!(mb.iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn box_map_has_full_channel_grid_shape() {
        // full-sized union map (256 × 7 × 7) on an otherwise tiny model
        let cfg = ModelConfig {
            union_channels: 256,
            union_grid: 7,
            ..ModelConfig::toy(3, 4)
        };
        let params = ModelParams::init(&cfg, 2);
        let mut tape = Tape::new();
        let mut binder = Binder::new(&mut tape);
        let ids = params.bind(&mut binder);
        let m = box_to_spatial_map(
            &mut tape,
            &ids,
            &BBox::new(0.0, 0.0, 10.0, 10.0),
            &BBox::new(5.0, 5.0, 20.0, 15.0),
            &cfg,
        )
        .unwrap();
        assert_eq!(tape.shape(m), &[1, 256 * 7 * 7]);
    }

    #[test]
    fn degenerate_union_box_is_rejected() {
        let (cfg, params) = toy_setup();
        let mut tape = Tape::new();
        let mut binder = Binder::new(&mut tape);
        let ids = params.bind(&mut binder);
        let bad = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert!(box_to_spatial_map(&mut tape, &ids, &bad, &bad, &cfg).is_err());
    }
}
