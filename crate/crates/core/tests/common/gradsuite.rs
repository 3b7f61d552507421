//! Finite-difference checks for every primitive and layer, against the
//! independent f64 oracle. Shared by the gradient tests and the
//! acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mehpan_core::autodiff::EmptyRowPolicy;
use mehpan_core::layers::{
    Activation, BiGru, Dense, EmbeddingTable, GluConvBlock, StreamAttention,
};
use mehpan_core::model::Architecture;
use mehpan_core::{Tape, Tensor};

use super::oracle;
use super::{
    assert_grad_close, central_diff, model_loss, model_loss_grads, nudge_param, param_sizes,
    random_vec, tiny_model_and_batch, to64, ABS_FLOOR, FD_STEP, REL_TOL,
};

/// Weighted-sum objective weights, fixed per call site.
fn objective_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    random_vec(rng, n)
}

fn dot64(w: &[f32], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(&a, &b)| a as f64 * b).sum()
}

/// Runs `sum(weights ⊙ out)` on the tape and backpropagates.
fn tape_objective(tape: &mut Tape, out: &Tensor, weights: &[f32]) {
    let w = tape.constant(&Tensor::new(out.shape().to_vec(), weights.to_vec()).unwrap());
    let prod = tape.mul(&w, out).unwrap();
    let obj = tape.sum_all(&prod).unwrap();
    tape.backward(&obj).unwrap();
}

pub fn check_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let a_data = random_vec(&mut rng, 9);
    let b_data = random_vec(&mut rng, 9);

    let mut tape = Tape::new();
    let a = tape.watch("a", &Tensor::new(vec![3, 3], a_data.clone()).unwrap());
    let b = tape.watch("b", &Tensor::new(vec![3, 3], b_data.clone()).unwrap());
    let out = tape.matmul(&a, &b).unwrap();
    let s = tape.sum_all(&out).unwrap();
    tape.backward(&s).unwrap();

    let fd_a = central_diff(
        &mut |p| oracle::matmul(p, &to64(&b_data), 3, 3, 3).iter().sum(),
        &to64(&a_data),
        FD_STEP,
    );
    let fd_b = central_diff(
        &mut |p| oracle::matmul(&to64(&a_data), p, 3, 3, 3).iter().sum(),
        &to64(&b_data),
        FD_STEP,
    );
    assert_grad_close("matmul dA", tape.grad(&a).unwrap(), &fd_a, REL_TOL, ABS_FLOOR);
    assert_grad_close("matmul dB", tape.grad(&b).unwrap(), &fd_b, REL_TOL, ABS_FLOOR);
}

pub fn check_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let n = 12;
    let x_data: Vec<f32> = random_vec(&mut rng, n);
    let y_data: Vec<f32> = random_vec(&mut rng, n);
    let pos_data: Vec<f32> = x_data.iter().map(|v| v.abs() + 0.2).collect();
    let w = objective_weights(&mut rng, n);

    type Fwd64 = fn(&[f64], &[f64]) -> Vec<f64>;
    let binary_cases: Vec<(&str, Fwd64)> = vec![
        ("add", |a, b| a.iter().zip(b).map(|(x, y)| x + y).collect()),
        ("sub", |a, b| a.iter().zip(b).map(|(x, y)| x - y).collect()),
        ("mul", |a, b| a.iter().zip(b).map(|(x, y)| x * y).collect()),
    ];
    for (name, fwd) in binary_cases {
        let mut tape = Tape::new();
        let a = tape.watch("a", &Tensor::from_slice(&x_data));
        let b = tape.watch("b", &Tensor::from_slice(&y_data));
        let out = match name {
            "add" => tape.add(&a, &b).unwrap(),
            "sub" => tape.sub(&a, &b).unwrap(),
            _ => tape.mul(&a, &b).unwrap(),
        };
        tape_objective(&mut tape, &out, &w);
        let fd_a = central_diff(&mut |p| dot64(&w, &fwd(p, &to64(&y_data))), &to64(&x_data), FD_STEP);
        let fd_b = central_diff(&mut |p| dot64(&w, &fwd(&to64(&x_data), p)), &to64(&y_data), FD_STEP);
        assert_grad_close(&format!("{name} dA"), tape.grad(&a).unwrap(), &fd_a, REL_TOL, ABS_FLOOR);
        assert_grad_close(&format!("{name} dB"), tape.grad(&b).unwrap(), &fd_b, REL_TOL, ABS_FLOOR);
    }

    type Unary64 = fn(f64) -> f64;
    let unary_cases: Vec<(&str, bool, Unary64)> = vec![
        ("sigmoid", false, oracle::sigmoid),
        ("tanh", false, f64::tanh),
        ("exp", false, f64::exp),
        ("log", true, f64::ln),
    ];
    for (name, needs_positive, f64fn) in unary_cases {
        let input = if needs_positive { &pos_data } else { &x_data };
        let mut tape = Tape::new();
        let x = tape.watch("x", &Tensor::from_slice(input));
        let out = match name {
            "sigmoid" => tape.sigmoid(&x).unwrap(),
            "tanh" => tape.tanh(&x).unwrap(),
            "exp" => tape.exp(&x).unwrap(),
            _ => tape.log(&x).unwrap(),
        };
        tape_objective(&mut tape, &out, &w);
        let fd = central_diff(
            &mut |p| dot64(&w, &p.iter().map(|&v| f64fn(v)).collect::<Vec<_>>()),
            &to64(input),
            FD_STEP,
        );
        assert_grad_close(name, tape.grad(&x).unwrap(), &fd, REL_TOL, ABS_FLOOR);
    }

    // Clamp ops: keep FD away from the nondifferentiable threshold.
    let clamped: Vec<f32> = x_data
        .iter()
        .map(|&v| if v.abs() < 0.05 { v + 0.1 } else { v })
        .collect();
    let mut tape = Tape::new();
    let x = tape.watch("x", &Tensor::from_slice(&clamped));
    let out = tape.max_scalar(&x, 0.0).unwrap();
    tape_objective(&mut tape, &out, &w);
    let fd = central_diff(
        &mut |p| dot64(&w, &p.iter().map(|v| v.max(0.0)).collect::<Vec<_>>()),
        &to64(&clamped),
        FD_STEP,
    );
    assert_grad_close("max_scalar", tape.grad(&x).unwrap(), &fd, REL_TOL, ABS_FLOOR);
}

pub fn check_tanh_at_fixed_point() {
    let mut tape = Tape::new();
    let x = tape.watch("x", &Tensor::from_slice(&[0.7]));
    let y = tape.tanh(&x).unwrap();
    let s = tape.sum_all(&y).unwrap();
    tape.backward(&s).unwrap();
    let fd = central_diff(&mut |p| p[0].tanh(), &[0.7], FD_STEP);
    let g = tape.grad(&x).unwrap()[0] as f64;
    assert!((g - fd[0]).abs() < 1e-4, "tanh'(0.7): {g} vs {}", fd[0]);
}

pub fn check_softmax_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let x_data = random_vec(&mut rng, 5);
    // Full Jacobian row by row: objective = out[j].
    for j in 0..5 {
        let mut tape = Tape::new();
        let x = tape.watch("x", &Tensor::from_slice(&x_data));
        let out = tape.softmax(&x, 0).unwrap();
        let mut pick = vec![0.0f32; 5];
        pick[j] = 1.0;
        tape_objective(&mut tape, &out, &pick);
        let fd = central_diff(
            &mut |p| oracle::softmax(p, &[5], 0)[j],
            &to64(&x_data),
            FD_STEP,
        );
        assert_grad_close(&format!("softmax row {j}"), tape.grad(&x).unwrap(), &fd, REL_TOL, ABS_FLOOR);
    }
}

pub fn check_conv1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (b, t, ci, co, width) = (2usize, 4usize, 3usize, 2usize, 3usize);
    let x_data = random_vec(&mut rng, b * t * ci);
    let k_data = random_vec(&mut rng, width * ci * co);
    let b_data = random_vec(&mut rng, co);
    let w = objective_weights(&mut rng, b * t * co);

    let mut tape = Tape::new();
    let x = tape.watch("x", &Tensor::new(vec![b, t, ci], x_data.clone()).unwrap());
    let k = tape.watch("k", &Tensor::new(vec![width, ci, co], k_data.clone()).unwrap());
    let bias = tape.watch("b", &Tensor::from_slice(&b_data));
    let out = tape.conv1d(&x, &k, &bias).unwrap();
    tape_objective(&mut tape, &out, &w);

    let obj = |x64: &[f64], k64: &[f64], b64: &[f64]| {
        dot64(&w, &oracle::conv1d(x64, k64, b64, b, t, ci, co, width))
    };
    let fd_x = central_diff(&mut |p| obj(p, &to64(&k_data), &to64(&b_data)), &to64(&x_data), FD_STEP);
    let fd_k = central_diff(&mut |p| obj(&to64(&x_data), p, &to64(&b_data)), &to64(&k_data), FD_STEP);
    let fd_b = central_diff(&mut |p| obj(&to64(&x_data), &to64(&k_data), p), &to64(&b_data), FD_STEP);
    assert_grad_close("conv1d dX", tape.grad(&x).unwrap(), &fd_x, REL_TOL, ABS_FLOOR);
    assert_grad_close("conv1d dK", tape.grad(&k).unwrap(), &fd_k, REL_TOL, ABS_FLOOR);
    assert_grad_close("conv1d dBias", tape.grad(&bias).unwrap(), &fd_b, REL_TOL, ABS_FLOOR);
}

pub fn check_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (vocab, dim) = (6usize, 3usize);
    let table = EmbeddingTable::new("emb", vocab, dim, &mut rng);
    let indices: Vec<u32> = vec![2, 4, 2, 0, 5, 2];
    let w = objective_weights(&mut rng, indices.len() * dim);

    let mut tape = Tape::new();
    let out = table.forward(&mut tape, &indices, 2, 3).unwrap();
    tape_objective(&mut tape, &out, &w);
    let grad = tape.grad_by_name("emb").unwrap().to_vec();

    // Padding row never receives gradient.
    assert!(grad[..dim].iter().all(|&g| g == 0.0), "padding row got gradient");

    let table64 = to64(table.weights.data());
    let fd = central_diff(
        &mut |p| dot64(&w, &oracle::embed_lookup(p, dim, &indices)),
        &table64,
        FD_STEP,
    );
    assert_grad_close("embedding rows 1..", &grad[dim..], &fd[dim..], REL_TOL, ABS_FLOOR);

    // Row gradient equals the summed upstream slices of its occurrences.
    let mut expect_row2 = vec![0.0f32; dim];
    for (pos, &idx) in indices.iter().enumerate() {
        if idx == 2 {
            for f in 0..dim {
                expect_row2[f] += w[pos * dim + f];
            }
        }
    }
    for f in 0..dim {
        assert!((grad[2 * dim + f] - expect_row2[f]).abs() < 1e-6);
    }
}

pub fn check_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for activation in [Activation::None, Activation::Relu, Activation::Tanh] {
        let layer = Dense::new("d", 4, 3, activation, &mut rng);
        let x_data = random_vec(&mut rng, 2 * 4);
        let w = objective_weights(&mut rng, 2 * 3);

        let mut tape = Tape::new();
        let x = tape.watch("x", &Tensor::new(vec![2, 4], x_data.clone()).unwrap());
        let out = layer.forward(&mut tape, &x).unwrap();
        tape_objective(&mut tape, &out, &w);

        let act64 = move |v: f64| match activation {
            Activation::None => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        };
        let obj = |x64: &[f64], w64: &[f64], b64: &[f64]| {
            let lin = oracle::dense(x64, w64, b64, 2, 4, 3);
            dot64(&w, &lin.iter().map(|&v| act64(v)).collect::<Vec<_>>())
        };
        let w_data = layer.w.data().to_vec();
        let b_data = layer.b.data().to_vec();
        let fd_w = central_diff(&mut |p| obj(&to64(&x_data), p, &to64(&b_data)), &to64(&w_data), FD_STEP);
        let fd_b = central_diff(&mut |p| obj(&to64(&x_data), &to64(&w_data), p), &to64(&b_data), FD_STEP);
        let fd_x = central_diff(&mut |p| obj(p, &to64(&w_data), &to64(&b_data)), &to64(&x_data), FD_STEP);
        let tag = format!("dense/{activation:?}");
        assert_grad_close(&format!("{tag} dW"), tape.grad_by_name("d.w").unwrap(), &fd_w, REL_TOL, ABS_FLOOR);
        assert_grad_close(&format!("{tag} dB"), tape.grad_by_name("d.b").unwrap(), &fd_b, REL_TOL, ABS_FLOOR);
        assert_grad_close(&format!("{tag} dX"), tape.grad(&x).unwrap(), &fd_x, REL_TOL, ABS_FLOOR);
    }
}

fn gru_params_from_cell(cell: &mehpan_core::layers::GruCell) -> oracle::GruParams {
    oracle::GruParams {
        w_z: to64(cell.w_z.data()),
        w_r: to64(cell.w_r.data()),
        w_h: to64(cell.w_h.data()),
        u_z: to64(cell.u_z.data()),
        u_r: to64(cell.u_r.data()),
        u_h: to64(cell.u_h.data()),
        b_z: to64(cell.b_z.data()),
        b_r: to64(cell.b_r.data()),
        b_h: to64(cell.b_h.data()),
        in_dim: cell.w_z.shape()[0],
        hidden: cell.hidden(),
    }
}

pub fn check_gru_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let (batch, in_dim, hidden) = (2usize, 3usize, 4usize);
    let cell = mehpan_core::layers::GruCell::new("g", in_dim, hidden, &mut rng);
    let x_data = random_vec(&mut rng, batch * in_dim);
    let h_data = random_vec(&mut rng, batch * hidden);
    let w = objective_weights(&mut rng, batch * hidden);

    let mut tape = Tape::new();
    let x = tape.watch("x", &Tensor::new(vec![batch, in_dim], x_data.clone()).unwrap());
    let h = tape.watch("h", &Tensor::new(vec![batch, hidden], h_data.clone()).unwrap());
    let out = cell.step(&mut tape, &x, &h).unwrap();
    tape_objective(&mut tape, &out, &w);

    let base = gru_params_from_cell(&cell);
    for field in oracle::GruParams::FIELDS {
        let at = base.clone().field_mut(field).clone();
        let fd = central_diff(
            &mut |p| {
                let mut params = base.clone();
                *params.field_mut(field) = p.to_vec();
                dot64(&w, &oracle::gru_step(&params, &to64(&x_data), &to64(&h_data), batch))
            },
            &at,
            FD_STEP,
        );
        let grad = tape.grad_by_name(&format!("g.{field}")).unwrap();
        assert_grad_close(&format!("gru {field}"), grad, &fd, REL_TOL, ABS_FLOOR);
    }
    let fd_x = central_diff(
        &mut |p| dot64(&w, &oracle::gru_step(&base, p, &to64(&h_data), batch)),
        &to64(&x_data),
        FD_STEP,
    );
    assert_grad_close("gru dX", tape.grad(&x).unwrap(), &fd_x, REL_TOL, ABS_FLOOR);
    let fd_h = central_diff(
        &mut |p| dot64(&w, &oracle::gru_step(&base, &to64(&x_data), p, batch)),
        &to64(&h_data),
        FD_STEP,
    );
    assert_grad_close("gru dH", tape.grad(&h).unwrap(), &fd_h, REL_TOL, ABS_FLOOR);
}

pub fn check_bigru() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let (batch, steps, in_dim, hidden) = (2usize, 3usize, 3usize, 3usize);
    let gru = BiGru::new("bg", in_dim, hidden, &mut rng);
    let x_data = random_vec(&mut rng, batch * steps * in_dim);
    let mask_data = vec![1.0f32, 1.0, 1.0, 1.0, 1.0, 0.0];
    let mask = Tensor::new(vec![batch, steps], mask_data.clone()).unwrap();
    let w = objective_weights(&mut rng, batch * steps * 2 * hidden);

    let mut tape = Tape::new();
    let x = tape.watch("x", &Tensor::new(vec![batch, steps, in_dim], x_data.clone()).unwrap());
    let out = gru.forward(&mut tape, &x, &mask).unwrap();
    tape_objective(&mut tape, &out, &w);

    let fwd64 = gru_params_from_cell(&gru.fwd);
    let bwd64 = gru_params_from_cell(&gru.bwd);
    let mask64 = to64(&mask_data);

    for (prefix, base) in [("bg.fwd", &fwd64), ("bg.bwd", &bwd64)] {
        for field in oracle::GruParams::FIELDS {
            let at = base.clone().field_mut(field).clone();
            let fd = central_diff(
                &mut |p| {
                    let mut params = base.clone();
                    *params.field_mut(field) = p.to_vec();
                    let (f, b) = if prefix.ends_with("fwd") {
                        (&params, &bwd64)
                    } else {
                        (&fwd64, &params)
                    };
                    dot64(&w, &oracle::bigru(f, b, &to64(&x_data), &mask64, batch, steps))
                },
                &at,
                FD_STEP,
            );
            let grad = tape.grad_by_name(&format!("{prefix}.{field}")).unwrap();
            assert_grad_close(&format!("bigru {prefix}.{field}"), grad, &fd, REL_TOL, ABS_FLOOR);
        }
    }
    let fd_x = central_diff(
        &mut |p| dot64(&w, &oracle::bigru(&fwd64, &bwd64, p, &mask64, batch, steps)),
        &to64(&x_data),
        FD_STEP,
    );
    assert_grad_close("bigru dX", tape.grad(&x).unwrap(), &fd_x, REL_TOL, ABS_FLOOR);
}

pub fn check_glu_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let (batch, steps, ci, co, width) = (2usize, 4usize, 3usize, 2usize, 3usize);
    let block = GluConvBlock::new("glu", width, ci, co, &mut rng);
    let x_data = random_vec(&mut rng, batch * steps * ci);
    let w = objective_weights(&mut rng, batch * steps * co);

    let mut tape = Tape::new();
    let x = tape.watch("x", &Tensor::new(vec![batch, steps, ci], x_data.clone()).unwrap());
    let out = block.forward(&mut tape, &x).unwrap();
    tape_objective(&mut tape, &out, &w);

    let ka = to64(block.kernel_a.data());
    let kb = to64(block.kernel_b.data());
    let ba = to64(block.bias_a.data());
    let bb = to64(block.bias_b.data());
    let x64 = to64(&x_data);
    let obj = |x: &[f64], ka: &[f64], ba: &[f64], kb: &[f64], bb: &[f64]| {
        dot64(&w, &oracle::glu_conv(x, ka, ba, kb, bb, batch, steps, ci, co, width))
    };

    let cases: Vec<(&str, Vec<f64>)> = vec![
        ("kernel_a", ka.clone()),
        ("bias_a", ba.clone()),
        ("kernel_b", kb.clone()),
        ("bias_b", bb.clone()),
    ];
    for (field, at) in cases {
        let fd = central_diff(
            &mut |p| match field {
                "kernel_a" => obj(&x64, p, &ba, &kb, &bb),
                "bias_a" => obj(&x64, &ka, p, &kb, &bb),
                "kernel_b" => obj(&x64, &ka, &ba, p, &bb),
                _ => obj(&x64, &ka, &ba, &kb, p),
            },
            &at,
            FD_STEP,
        );
        let grad = tape.grad_by_name(&format!("glu.{field}")).unwrap();
        assert_grad_close(&format!("glu {field}"), grad, &fd, REL_TOL, ABS_FLOOR);
    }
    let fd_x = central_diff(&mut |p| obj(p, &ka, &ba, &kb, &bb), &x64, FD_STEP);
    assert_grad_close("glu dX", tape.grad(&x).unwrap(), &fd_x, REL_TOL, ABS_FLOOR);
}

pub fn check_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let (batch, steps, e, h, a) = (2usize, 3usize, 3usize, 4usize, 3usize);
    let attn = StreamAttention::new("att", e, h, a, &mut rng);
    let emb_data = random_vec(&mut rng, batch * steps * e);
    let st_data = random_vec(&mut rng, batch * steps * h);
    let mask_data = vec![1.0f32, 1.0, 0.0, 1.0, 1.0, 1.0];
    let mask = Tensor::new(vec![batch, steps], mask_data.clone()).unwrap();
    let w = objective_weights(&mut rng, batch * h);

    let mut tape = Tape::new();
    let emb = tape.watch("emb", &Tensor::new(vec![batch, steps, e], emb_data.clone()).unwrap());
    let st = tape.watch("st", &Tensor::new(vec![batch, steps, h], st_data.clone()).unwrap());
    let (context, weights) = attn
        .context(&mut tape, &emb, &st, &mask, EmptyRowPolicy::Reject)
        .unwrap();
    for b in 0..batch {
        let s: f32 = (0..steps).map(|t| weights.at2(b, t)).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    tape_objective(&mut tape, &context, &w);

    let base = oracle::AttentionParams {
        proj_w: to64(attn.proj.w.data()),
        proj_b: to64(attn.proj.b.data()),
        w1: to64(attn.ffn.w1.data()),
        b1: to64(attn.ffn.b1.data()),
        w2: to64(attn.ffn.w2.data()),
        b2: to64(attn.ffn.b2.data()),
        embed_dim: e,
        state_dim: h,
        attn_hidden: a,
    };
    let mask64 = to64(&mask_data);
    for field in oracle::AttentionParams::FIELDS {
        let at = base.clone().field_mut(field).clone();
        let fd = central_diff(
            &mut |p| {
                let mut params = base.clone();
                *params.field_mut(field) = p.to_vec();
                dot64(
                    &w,
                    &oracle::attention_context(&params, &to64(&emb_data), &to64(&st_data), &mask64, batch, steps),
                )
            },
            &at,
            FD_STEP,
        );
        let grad = tape.grad_by_name(&format!("att.{field}")).unwrap();
        assert_grad_close(&format!("attention {field}"), grad, &fd, REL_TOL, ABS_FLOOR);
    }
    let fd_emb = central_diff(
        &mut |p| dot64(&w, &oracle::attention_context(&base, p, &to64(&st_data), &mask64, batch, steps)),
        &to64(&emb_data),
        FD_STEP,
    );
    assert_grad_close("attention dEmb", tape.grad(&emb).unwrap(), &fd_emb, REL_TOL, ABS_FLOOR);
    let fd_st = central_diff(
        &mut |p| dot64(&w, &oracle::attention_context(&base, &to64(&emb_data), p, &mask64, batch, steps)),
        &to64(&st_data),
        FD_STEP,
    );
    assert_grad_close("attention dStates", tape.grad(&st).unwrap(), &fd_st, REL_TOL, ABS_FLOOR);
}

pub fn check_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let n = 4;
    // Probabilities kept away from the clamp boundaries.
    let pb_data: Vec<f32> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0.15..0.85)).collect();
    let pm_data: Vec<f32> = (0..n * 3).map(|_| rand::Rng::gen_range(&mut rng, 0.1..0.8)).collect();
    let y_binary = [1.0f32, 0.0, 1.0, 0.0];
    let y_multi = [2u8, 0, 1, 0];

    let mut tape = Tape::new();
    let pb = tape.watch("pb", &Tensor::from_slice(&pb_data));
    let pm = tape.watch("pm", &Tensor::new(vec![n, 3], pm_data.clone()).unwrap());
    let loss = mehpan_core::model::multi_task_loss(&mut tape, &pb, &pm, &y_binary, &y_multi, (1.0, 1.0)).unwrap();
    tape.backward(&loss).unwrap();

    let y64: Vec<f64> = y_binary.iter().map(|&v| v as f64).collect();
    let fd_pb = central_diff(
        &mut |p| oracle::multi_task_loss(p, &to64(&pm_data), &y64, &y_multi, (1.0, 1.0)),
        &to64(&pb_data),
        FD_STEP,
    );
    assert_grad_close("loss dPb", tape.grad(&pb).unwrap(), &fd_pb, REL_TOL, ABS_FLOOR);
    let fd_pm = central_diff(
        &mut |p| oracle::multi_task_loss(&to64(&pb_data), p, &y64, &y_multi, (1.0, 1.0)),
        &to64(&pm_data),
        FD_STEP,
    );
    assert_grad_close("loss dPm", tape.grad(&pm).unwrap(), &fd_pm, REL_TOL, ABS_FLOOR);
}

/// End-to-end spot check: finite differences of the f32 training loss at 20
/// randomly chosen parameters. The f32 forward bounds resolution, hence the
/// looser relative tolerance and a floor matching single-precision noise at
/// step 1e-3.
pub fn check_end_to_end(arch: Architecture) {
    let (mut model, batch) = tiny_model_and_batch(arch, 500 + arch as u64);
    let grads = model_loss_grads(&model, &batch);
    let sizes = param_sizes(&model);
    let total: usize = sizes.iter().map(|(_, n)| n).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(600 + arch as u64);
    let h = FD_STEP as f32;
    for _ in 0..20 {
        let mut flat = rand::Rng::gen_range(&mut rng, 0..total);
        let (name, index) = sizes
            .iter()
            .find_map(|(name, n)| {
                if flat < *n {
                    Some((name.clone(), flat))
                } else {
                    flat -= n;
                    None
                }
            })
            .unwrap();

        nudge_param(&mut model, &name, index, h);
        let plus = model_loss(&model, &batch);
        nudge_param(&mut model, &name, index, -2.0 * h);
        let minus = model_loss(&model, &batch);
        nudge_param(&mut model, &name, index, h);
        let fd = (plus - minus) / (2.0 * h as f64);

        let ad = grads[&name][index] as f64;
        let tol = (1e-2 * ad.abs().max(fd.abs())).max(2e-4);
        assert!(
            (ad - fd).abs() <= tol,
            "{arch:?} {name}[{index}]: tape {ad} vs finite differences {fd} (tol {tol})"
        );
    }
}

/// The whole suite, in one call, for the acceptance gate.
pub fn run_all() {
    check_matmul();
    check_elementwise();
    check_tanh_at_fixed_point();
    check_softmax_jacobian();
    check_conv1d();
    check_embedding();
    check_dense();
    check_gru_step();
    check_bigru();
    check_glu_conv();
    check_attention();
    check_loss();
    check_end_to_end(Architecture::Rnn);
    check_end_to_end(Architecture::Conv);
}
