//! Shared helpers for the gradient and acceptance suites.

#![allow(dead_code)]

pub mod gradsuite;
pub mod oracle;

use mehpan_core::data::{build_vocab, generate_synthetic, make_batch, Batch, SynthConfig, Vocabs};
use mehpan_core::model::{multi_task_loss, Architecture, MehpanModel, ModelConfig};
use mehpan_core::layers::ParamVisitor;
use mehpan_core::{ReduceMode, Tape};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central finite differences of a scalar function, step 1e-3 by default.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, at: &[f64], step: f64) -> Vec<f64> {
    let mut point = at.to_vec();
    let mut grad = vec![0.0; at.len()];
    for i in 0..at.len() {
        let saved = point[i];
        point[i] = saved + step;
        let plus = f(&point);
        point[i] = saved - step;
        let minus = f(&point);
        point[i] = saved;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Relative comparison with an absolute floor:
/// |ad − fd| must not exceed max(rel · max(|ad|, |fd|), floor).
pub fn assert_grad_close(name: &str, ad: &[f32], fd: &[f64], rel: f64, floor: f64) {
    assert_eq!(ad.len(), fd.len(), "{name}: gradient length mismatch");
    for (i, (&a, &d)) in ad.iter().zip(fd).enumerate() {
        let a = a as f64;
        let tol = (rel * a.abs().max(d.abs())).max(floor);
        assert!(
            (a - d).abs() <= tol,
            "{name}[{i}]: tape {a} vs finite differences {d} (tol {tol})"
        );
    }
}

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-6;

/// Uniform random data in [-1, 1], seeded.
pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn to32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// A small synthetic world shared by the end-to-end checks.
pub fn tiny_world(seed: u64) -> (Vec<mehpan_core::PatientHistory>, Vocabs) {
    let data = generate_synthetic(&SynthConfig {
        n_patients: 6,
        diag_vocab_size: 40,
        med_vocab_size: 20,
        max_diag_len: 5,
        max_med_len: 4,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let vocabs = build_vocab(&data).unwrap();
    (data, vocabs)
}

pub fn tiny_model_config(arch: Architecture, vocabs: &Vocabs, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::defaults(arch).for_vocabs(vocabs);
    cfg.diag_code_embed = 4;
    cfg.diag_kind_embed = 2;
    cfg.med_code_embed = 4;
    cfg.med_type_embed = 2;
    cfg.hidden = 5;
    cfg.aux_hidden = 3;
    cfg.attn_hidden = 4;
    cfg.dense1 = 8;
    cfg.dense2 = 6;
    cfg.max_diag_len = 5;
    cfg.max_med_len = 4;
    cfg.seed = seed;
    cfg
}

pub fn tiny_model_and_batch(arch: Architecture, seed: u64) -> (MehpanModel, Batch) {
    let (data, vocabs) = tiny_world(seed);
    let cfg = tiny_model_config(arch, &vocabs, seed ^ 0xABCD);
    let model = MehpanModel::new(cfg).unwrap();
    let refs: Vec<&_> = data.iter().collect();
    let batch = make_batch(&refs, &vocabs, 5, 4).unwrap();
    (model, batch)
}

/// Scalar training loss of the f32 model on a batch.
pub fn model_loss(model: &MehpanModel, batch: &Batch) -> f64 {
    let mut tape = Tape::new();
    let (pb, pm) = model.forward(&mut tape, batch).unwrap();
    let loss = multi_task_loss(&mut tape, &pb, &pm, &batch.y_binary, &batch.y_multi, (1.0, 1.0)).unwrap();
    loss.item() as f64
}

/// Tape gradient of the training loss for every parameter, by name.
pub fn model_loss_grads(model: &MehpanModel, batch: &Batch) -> std::collections::HashMap<String, Vec<f32>> {
    let mut tape = Tape::new();
    let (pb, pm) = model.forward(&mut tape, batch).unwrap();
    let loss = multi_task_loss(&mut tape, &pb, &pm, &batch.y_binary, &batch.y_multi, (1.0, 1.0)).unwrap();
    tape.backward(&loss).unwrap();
    let mut grads = std::collections::HashMap::new();
    model.visit(&mut |name, param| {
        if let Some(g) = tape.grad_by_name(name) {
            grads.insert(name.to_string(), g.to_vec());
        } else {
            grads.insert(name.to_string(), vec![0.0; param.len()]);
        }
    });
    grads
}

/// Adds `delta` to one element of one named parameter.
pub fn nudge_param(model: &mut MehpanModel, target: &str, index: usize, delta: f32) {
    let mut found = false;
    model.visit_mut(&mut |name, param| {
        if name == target {
            let mut data = param.data().to_vec();
            data[index] += delta;
            *param = mehpan_core::Tensor::new(param.shape().to_vec(), data).unwrap();
            found = true;
        }
    });
    assert!(found, "parameter {target} not found");
}

/// Stable list of (name, element count) pairs.
pub fn param_sizes(model: &MehpanModel) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    model.visit(&mut |name, t| out.push((name.to_string(), t.len())));
    out
}

pub fn all_reduce_modes() -> [ReduceMode; 3] {
    [ReduceMode::Sum, ReduceMode::WeightedSum, ReduceMode::LastStep]
}

/// O(n²) pairwise reference AUC: positives above negatives, ties half.
pub fn auc_brute_force(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for (i, &yi) in labels.iter().enumerate() {
        if !yi {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
