//! Independent 64-bit reference forwards used by the finite-difference
//! gradient checks. Everything here is reimplemented from the layer
//! definitions, sharing no code with the library's f32 path.

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out[m,n] = a[m,k] · b[k,n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub fn add_bias(x: &[f64], bias: &[f64]) -> Vec<f64> {
    let w = bias.len();
    x.chunks_exact(w)
        .flat_map(|row| row.iter().zip(bias).map(|(v, b)| v + b))
        .collect()
}

pub fn dense(x: &[f64], w: &[f64], b: &[f64], rows: usize, in_dim: usize, out_dim: usize) -> Vec<f64> {
    add_bias(&matmul(x, w, rows, in_dim, out_dim), b)
}

/// Softmax along `axis` of a tensor with the given dims, max-subtracted.
pub fn softmax(x: &[f64], dims: &[usize], axis: usize) -> Vec<f64> {
    let outer: usize = dims[..axis].iter().product();
    let lane = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| o * lane * inner + l * inner + i;
            let hi = (0..lane).map(|l| x[at(l)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for l in 0..lane {
                let e = (x[at(l)] - hi).exp();
                out[at(l)] = e;
                sum += e;
            }
            for l in 0..lane {
                out[at(l)] /= sum;
            }
        }
    }
    out
}

/// Row-wise softmax over unmasked steps; masked weights are exactly zero.
pub fn masked_softmax(x: &[f64], mask: &[f64], batch: usize, steps: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let base = b * steps;
        let mut hi = f64::NEG_INFINITY;
        for t in 0..steps {
            if mask[base + t] != 0.0 {
                hi = hi.max(x[base + t]);
            }
        }
        if hi == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for t in 0..steps {
            if mask[base + t] != 0.0 {
                let e = (x[base + t] - hi).exp();
                out[base + t] = e;
                sum += e;
            }
        }
        for t in 0..steps {
            out[base + t] /= sum;
        }
    }
    out
}

/// Cross-correlation along time with symmetric zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv1d(
    x: &[f64],
    kernel: &[f64],
    bias: &[f64],
    batch: usize,
    steps: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
) -> Vec<f64> {
    let pad = (width - 1) / 2;
    let mut out = vec![0.0; batch * steps * c_out];
    for b in 0..batch {
        for t in 0..steps {
            for co in 0..c_out {
                let mut acc = bias[co];
                for dw in 0..width {
                    let s = t as isize + dw as isize - pad as isize;
                    if s < 0 || s >= steps as isize {
                        continue;
                    }
                    for ci in 0..c_in {
                        acc += x[(b * steps + s as usize) * c_in + ci]
                            * kernel[(dw * c_in + ci) * c_out + co];
                    }
                }
                out[(b * steps + t) * c_out + co] = acc;
            }
        }
    }
    out
}

/// GLU block: conv branch A times the sigmoid of conv branch B.
#[allow(clippy::too_many_arguments)]
pub fn glu_conv(
    x: &[f64],
    kernel_a: &[f64],
    bias_a: &[f64],
    kernel_b: &[f64],
    bias_b: &[f64],
    batch: usize,
    steps: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
) -> Vec<f64> {
    let a = conv1d(x, kernel_a, bias_a, batch, steps, c_in, c_out, width);
    let b = conv1d(x, kernel_b, bias_b, batch, steps, c_in, c_out, width);
    a.iter().zip(&b).map(|(av, bv)| av * sigmoid(*bv)).collect()
}

/// One cell's parameters in f64, keyed by field name for the FD driver.
#[derive(Clone)]
pub struct GruParams {
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn field_mut(&mut self, name: &str) -> &mut Vec<f64> {
        match name {
            "w_z" => &mut self.w_z,
            "w_r" => &mut self.w_r,
            "w_h" => &mut self.w_h,
            "u_z" => &mut self.u_z,
            "u_r" => &mut self.u_r,
            "u_h" => &mut self.u_h,
            "b_z" => &mut self.b_z,
            "b_r" => &mut self.b_r,
            "b_h" => &mut self.b_h,
            other => panic!("unknown GRU field {other}"),
        }
    }

    pub const FIELDS: [&'static str; 9] = [
        "w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h",
    ];
}

/// z = σ(xW_z + hU_z + b_z); r = σ(xW_r + hU_r + b_r);
/// cand = tanh(xW_h + (r⊙h)U_h + b_h); h' = (1−z)⊙h + z⊙cand.
pub fn gru_step(p: &GruParams, x: &[f64], h: &[f64], batch: usize) -> Vec<f64> {
    let (di, dh) = (p.in_dim, p.hidden);
    let gate = |w: &[f64], u: &[f64], b: &[f64], hh: &[f64]| -> Vec<f64> {
        let xw = matmul(x, w, batch, di, dh);
        let hu = matmul(hh, u, batch, dh, dh);
        let summed: Vec<f64> = xw.iter().zip(&hu).map(|(a, c)| a + c).collect();
        add_bias(&summed, b)
    };
    let z: Vec<f64> = gate(&p.w_z, &p.u_z, &p.b_z, h).iter().map(|&v| sigmoid(v)).collect();
    let r: Vec<f64> = gate(&p.w_r, &p.u_r, &p.b_r, h).iter().map(|&v| sigmoid(v)).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate(&p.w_h, &p.u_h, &p.b_h, &rh).iter().map(|v| v.tanh()).collect();
    (0..batch * dh)
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
        .collect()
}

/// Bidirectional scan with hidden-state freezing on masked steps; outputs
/// concatenated per step and zeroed where masked.
pub fn bigru(
    fwd: &GruParams,
    bwd: &GruParams,
    x: &[f64],
    mask: &[f64],
    batch: usize,
    steps: usize,
) -> Vec<f64> {
    let dh = fwd.hidden;
    let di = fwd.in_dim;
    let scan = |p: &GruParams, order: Vec<usize>| -> Vec<Vec<f64>> {
        let mut h = vec![0.0; batch * dh];
        let mut states = vec![vec![0.0; batch * dh]; steps];
        for &t in &order {
            let x_t: Vec<f64> = (0..batch)
                .flat_map(|b| x[(b * steps + t) * di..(b * steps + t + 1) * di].to_vec())
                .collect();
            let cand = gru_step(p, &x_t, &h, batch);
            for b in 0..batch {
                let m = mask[b * steps + t];
                for f in 0..dh {
                    let i = b * dh + f;
                    h[i] += m * (cand[i] - h[i]);
                }
            }
            states[t] = h.clone();
        }
        states
    };
    let fwd_states = scan(fwd, (0..steps).collect());
    let bwd_states = scan(bwd, (0..steps).rev().collect());
    let mut out = vec![0.0; batch * steps * 2 * dh];
    for b in 0..batch {
        for t in 0..steps {
            let m = mask[b * steps + t];
            for f in 0..dh {
                out[(b * steps + t) * 2 * dh + f] = m * fwd_states[t][b * dh + f];
                out[(b * steps + t) * 2 * dh + dh + f] = m * bwd_states[t][b * dh + f];
            }
        }
    }
    out
}

/// Attention parameters in f64, keyed by field name.
#[derive(Clone)]
pub struct AttentionParams {
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub embed_dim: usize,
    pub state_dim: usize,
    pub attn_hidden: usize,
}

impl AttentionParams {
    pub fn field_mut(&mut self, name: &str) -> &mut Vec<f64> {
        match name {
            "proj.w" => &mut self.proj_w,
            "proj.b" => &mut self.proj_b,
            "ffn.w1" => &mut self.w1,
            "ffn.b1" => &mut self.b1,
            "ffn.w2" => &mut self.w2,
            "ffn.b2" => &mut self.b2,
            other => panic!("unknown attention field {other}"),
        }
    }

    pub const FIELDS: [&'static str; 6] = ["proj.w", "proj.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"];
}

/// Context vectors: project the embedding, gate the states elementwise,
/// score each step with the two-layer net, softmax over unmasked steps,
/// combine the states.
pub fn attention_context(
    p: &AttentionParams,
    embedded: &[f64],
    states: &[f64],
    mask: &[f64],
    batch: usize,
    steps: usize,
) -> Vec<f64> {
    let (e, h, a) = (p.embed_dim, p.state_dim, p.attn_hidden);
    let projected = dense(embedded, &p.proj_w, &p.proj_b, batch * steps, e, h);
    let u: Vec<f64> = projected.iter().zip(states).map(|(x, s)| x * s).collect();
    let hid = dense(&u, &p.w1, &p.b1, batch * steps, h, a);
    let hid: Vec<f64> = hid.iter().map(|v| v.tanh()).collect();
    let logits = dense(&hid, &p.w2, &p.b2, batch * steps, a, 1);
    let weights = masked_softmax(&logits, mask, batch, steps);
    let mut out = vec![0.0; batch * h];
    for b in 0..batch {
        for t in 0..steps {
            let w = weights[b * steps + t];
            for f in 0..h {
                out[b * h + f] += w * states[(b * steps + t) * h + f];
            }
        }
    }
    out
}

/// Row gather; index 0 embeds to the stored (zero) padding row.
pub fn embed_lookup(table: &[f64], dim: usize, indices: &[u32]) -> Vec<f64> {
    let mut out = vec![0.0; indices.len() * dim];
    for (pos, &idx) in indices.iter().enumerate() {
        out[pos * dim..(pos + 1) * dim]
            .copy_from_slice(&table[idx as usize * dim..(idx as usize + 1) * dim]);
    }
    out
}

/// Weighted binary plus three-class cross-entropy, means over the batch,
/// probabilities clamped into [1e-7, 1−1e-7].
pub fn multi_task_loss(
    p_binary: &[f64],
    p_multi: &[f64],
    y_binary: &[f64],
    y_multi: &[u8],
    weights: (f64, f64),
) -> f64 {
    let n = p_binary.len() as f64;
    let clamp = |p: f64| p.clamp(1e-7, 1.0 - 1e-7);
    let mut bce = 0.0;
    for (&p, &y) in p_binary.iter().zip(y_binary) {
        let p = clamp(p);
        bce -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    let mut cce = 0.0;
    for (row, &y) in y_multi.iter().enumerate() {
        cce -= clamp(p_multi[row * 3 + y as usize]).ln();
    }
    weights.0 * bce / n + weights.1 * cce / n
}
