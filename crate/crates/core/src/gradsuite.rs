//! The full gradient-checking suite: per-op finite-difference checks and an
//! exhaustive end-to-end sweep of every model parameter on a two-frame,
//! three-pair toy instance. Used by the `gradcheck` command and the
//! acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stket_autograd::gradcheck::{finite_diff_check, relative_error, DEFAULT_EPS};
use stket_autograd::{Tape, Tensor, ValueId};

use crate::data::{BBox, Dataset, FrameAnnotation, ObjectProposal, RelationshipInstance, VideoAnnotation};
use crate::error::Result;
use crate::knowledge::Banks;
use crate::model::{forward_video, ForwardOptions, FrozenDecisions, ModelConfig, ModelParams, TaskMode};
use crate::train::extract_gradients;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0))
}

fn project_sum(tape: &mut Tape, y: ValueId, seed: u64) -> ValueId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = tape.value(y).len();
    let shape = tape.shape(y).to_vec();
    let w = tape.constant((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), &shape);
    let p = tape.mul(y, w).expect("same shape");
    tape.sum(p)
}

/// Per-op finite-difference checks over `seeds` random seeds each.
pub fn op_checks(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let mut record = |name: &str, tolerance: f64, f: &mut dyn FnMut(u64) -> Result<f64>| -> Result<()> {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            worst = worst.max(f(seed)?);
        }
        results.push(CheckResult {
            name: name.to_string(),
            max_rel_err: worst,
            tolerance,
        });
        Ok(())
    };

    record("matmul", 1e-6, &mut |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[3, 4]);
        let b = random_tensor(&mut rng, &[4, 2]);
        let ea = finite_diff_check(
            |tape, id| {
                let bid = tape.leaf(&b);
                let c = tape.matmul(id, bid)?;
                Ok(tape.sum(c))
            },
            &a,
            DEFAULT_EPS,
        )?;
        let eb = finite_diff_check(
            |tape, id| {
                let aid = tape.leaf(&a);
                let c = tape.matmul(aid, id)?;
                Ok(tape.sum(c))
            },
            &b,
            DEFAULT_EPS,
        )?;
        Ok(ea.max(eb))
    })?;

    record("softmax_rows", 1e-6, &mut |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = random_tensor(&mut rng, &[3, 5]);
        finite_diff_check(
            |tape, id| {
                let s = tape.softmax_rows(id)?;
                Ok(project_sum(tape, s, seed))
            },
            &x,
            DEFAULT_EPS,
        )
        .map_err(Into::into)
    })?;

    record("layer_norm", 1e-4, &mut |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let x = random_tensor(&mut rng, &[2, 4]);
        let gamma = random_tensor(&mut rng, &[4]);
        let beta = random_tensor(&mut rng, &[4]);
        finite_diff_check(
            |tape, id| {
                let g = tape.leaf(&gamma);
                let b = tape.leaf(&beta);
                let y = tape.layer_norm(id, g, b)?;
                Ok(project_sum(tape, y, seed))
            },
            &x,
            DEFAULT_EPS,
        )
        .map_err(Into::into)
    })?;

    record("concat_slice_transpose", 1e-6, &mut |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let a = random_tensor(&mut rng, &[2, 3]);
        let b = random_tensor(&mut rng, &[2, 3]);
        finite_diff_check(
            |tape, id| {
                let bid = tape.leaf(&b);
                let c = tape.concat(&[id, bid], 1)?;
                let s = tape.slice_cols(c, 1, 4)?;
                let t = tape.transpose(s)?;
                Ok(project_sum(tape, t, seed))
            },
            &a,
            DEFAULT_EPS,
        )
        .map_err(Into::into)
    })?;

    record("elementwise_chain", 1e-6, &mut |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let x = random_tensor(&mut rng, &[3, 3]);
        let bias = random_tensor(&mut rng, &[3]);
        finite_diff_check(
            |tape, id| {
                let b = tape.leaf(&bias);
                let y = tape.add_bias(id, b)?;
                let y = tape.relu(y);
                let y = tape.affine(y, 0.5, 0.1);
                let y = tape.sigmoid(y);
                Ok(project_sum(tape, y, seed))
            },
            &x,
            DEFAULT_EPS,
        )
        .map_err(Into::into)
    })?;

    record("bce_pipeline", 1e-4, &mut |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let logits = random_tensor(&mut rng, &[2, 5]);
        let labels: Vec<f64> = (0..10).map(|_| f64::from(rng.gen_bool(0.4))).collect();
        finite_diff_check(
            |tape, id| {
                let phi = tape.sigmoid(id);
                crate::nn::bce_sum(tape, phi, &labels).map_err(|e| match e {
                    crate::CoreError::Tensor(t) => t,
                    other => stket_autograd::TensorError::Contract(other.to_string()),
                })
            },
            &logits,
            DEFAULT_EPS,
        )
        .map_err(Into::into)
    })?;

    Ok(results)
}

/// The toy video used by the end-to-end sweep: two frames, three tracked
/// pairs, multi-label predicate sets.
pub fn toy_instance(seed: u64) -> (ModelConfig, Dataset) {
    let cfg = ModelConfig::toy(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = |idx: i64, preds: [Vec<usize>; 3]| -> FrameAnnotation {
        let proposals = (0..4)
            .map(|i| {
                let x = 5.0 + 50.0 * i as f64 + rng.gen_range(-0.3..0.3);
                ObjectProposal::ground_truth(
                    BBox::new(x, 5.0, x + 28.0, 40.0),
                    i % 3,
                    3,
                    Some(Tensor::from_fn(&[cfg.visual_dim], |_| rng.gen_range(-1.0..1.0))),
                )
            })
            .collect();
        let relationships = [(0usize, 1usize), (0, 2), (1, 3)]
            .iter()
            .zip(preds)
            .map(|(&(s, o), ps)| {
                let mut r = RelationshipInstance::new(s, o, ps);
                r.union_feature =
                    Some(Tensor::from_fn(&[cfg.union_flat()], |_| rng.gen_range(-1.0..1.0)));
                r
            })
            .collect();
        FrameAnnotation {
            frame_index: idx,
            proposals,
            relationships,
        }
    };
    let video = VideoAnnotation {
        video_id: format!("grad-toy-{seed}"),
        frames: vec![
            frame(0, [vec![0], vec![1, 2], vec![3]]),
            frame(1, [vec![1], vec![2], vec![0, 3]]),
        ],
    };
    let dataset = Dataset {
        class_names: vec!["person".into(), "a".into(), "b".into()],
        predicate_names: (0..4).map(|i| format!("p{i}")).collect(),
        predicate_type_sizes: vec![],
        videos: vec![video],
    };
    (cfg, dataset)
}

fn loss_with_frozen(
    params: &ModelParams,
    banks: &Banks,
    dataset: &Dataset,
    cfg: &ModelConfig,
    task: TaskMode,
    frozen: &FrozenDecisions,
) -> Result<f64> {
    let opts = ForwardOptions {
        train: false,
        dropout_seed: 0,
        compute_loss: true,
        task,
    };
    Ok(forward_video(params, banks, &dataset.videos[0], cfg, &opts, Some(frozen))?
        .loss
        .expect("loss requested")
        .total)
}

/// Sweep every coordinate of every parameter with central differences on the
/// toy instance. Returns (worst parameter name, worst relative error).
/// The coarse-prediction row selections are frozen from the base forward,
/// matching the analytic gradient's detachment of that discrete choice.
pub fn end_to_end_check(seed: u64, task: TaskMode) -> Result<(String, f64)> {
    let (cfg, dataset) = toy_instance(seed);
    let banks = Banks::build(&dataset);
    let params = ModelParams::init(&cfg, seed.wrapping_add(77));

    let opts = ForwardOptions {
        train: false,
        dropout_seed: 0,
        compute_loss: true,
        task,
    };
    let fwd = forward_video(&params, &banks, &dataset.videos[0], &cfg, &opts, None)?;
    let frozen = fwd.decisions.clone();
    let analytic = extract_gradients(&fwd)?;
    drop(fwd);

    let eps = DEFAULT_EPS;
    let mut worst = (String::new(), 0.0f64);
    let mut names = Vec::new();
    params.visit(&mut |name, _| names.push(name));
    for name in names {
        let n = params.get(&name).expect("visited name").numel();
        let mut numeric = vec![0.0; n];
        for i in 0..n {
            let mut probe = params.clone();
            probe.visit_mut(&mut |pn, t| {
                if pn == name {
                    t.data_mut()[i] += eps;
                }
            });
            let plus = loss_with_frozen(&probe, &banks, &dataset, &cfg, task, &frozen)?;
            probe.visit_mut(&mut |pn, t| {
                if pn == name {
                    t.data_mut()[i] -= 2.0 * eps;
                }
            });
            let minus = loss_with_frozen(&probe, &banks, &dataset, &cfg, task, &frozen)?;
            numeric[i] = (plus - minus) / (2.0 * eps);
        }
        let err = relative_error(&analytic[&name], &numeric);
        if err > worst.1 {
            worst = (name.clone(), err);
        }
    }
    Ok(worst)
}

/// The full suite: op checks plus end-to-end sweeps across `seeds` seeds.
pub fn run_gradient_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut results = op_checks(seeds)?;
    let mut worst = (String::new(), 0.0f64);
    for seed in 0..seeds {
        let (name, err) = end_to_end_check(seed, TaskMode::PredCls)?;
        if err > worst.1 {
            worst = (format!("end_to_end[{seed}]:{name}"), err);
        }
    }
    results.push(CheckResult {
        name: format!("end_to_end ({})", if worst.0.is_empty() { "-" } else { &worst.0 }),
        max_rel_err: worst.1,
        tolerance: 1e-4,
    });
    Ok(results)
}
