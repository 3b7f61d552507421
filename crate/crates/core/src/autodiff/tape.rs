//! Reverse-mode gradient tape.
//!
//! Operations record themselves in insertion order; `backward` replays the
//! recording once, in reverse, accumulating vector-Jacobian products into
//! per-node gradient buffers. Inputs always precede their consumers, so
//! insertion order is already topological.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{NodeRef, Tensor, TensorError};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// What to do when a masked reduction meets a row with no real steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmptyRowPolicy {
    /// Fail with `AllStepsMasked`.
    Reject,
    /// Emit an all-zero row.
    Zeros,
}

#[derive(Clone, Debug)]
enum Rule {
    Leaf,
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Log { x: usize },
    Exp { x: usize },
    /// Gradient passes where input >= threshold (ties pass).
    MaxScalar { x: usize, threshold: f32 },
    /// Gradient passes where input <= threshold (ties pass).
    MinScalar { x: usize, threshold: f32 },
    Scale { x: usize, factor: f32 },
    Softmax { x: usize, outer: usize, lane: usize, inner: usize },
    /// Row-wise softmax over unmasked steps of a [batch, steps] tensor.
    MaskedSoftmaxTime { x: usize, mask: Vec<f32> },
    Conv1d {
        x: usize,
        kernel: usize,
        bias: usize,
        batch: usize,
        steps: usize,
        c_in: usize,
        c_out: usize,
        width: usize,
    },
    /// Fused gated convolution pair: out = A ⊙ σ(B) where A and B are the
    /// two conv branches over the same windows. Saves the branch values and
    /// the unrolled windows for the backward pass.
    GluConv1d {
        x: usize,
        kernel_a: usize,
        bias_a: usize,
        kernel_b: usize,
        bias_b: usize,
        batch: usize,
        steps: usize,
        c_in: usize,
        c_out: usize,
        width: usize,
        branch_a: Vec<f32>,
        branch_b: Vec<f32>,
        cols: Vec<f32>,
    },
    /// Row gather; backward scatter-adds, skipping the padding row 0.
    EmbedLookup { table: usize, indices: Vec<u32>, dim: usize },
    ConcatLast { inputs: Vec<usize>, widths: Vec<usize>, lead: usize },
    Reshape { x: usize },
    SelectTime { x: usize, step: usize, steps: usize, feat: usize },
    StackTime { inputs: Vec<usize>, feat: usize },
    /// out[b,t,f] = coeff[b,t] * x[b,t,f] with constant coefficients.
    ScaleSteps { x: usize, coeff: Vec<f32>, feat: usize },
    /// out[b,f] = sum_t coeff[b,t] * x[b,t,f] with constant coefficients.
    CombineTime { x: usize, coeff: Vec<f32>, steps: usize, feat: usize },
    /// out[b,f] = sum_t w[b,t] * s[b,t,f]; both operands receive gradients.
    AttendTime { weights: usize, states: usize, steps: usize, feat: usize },
    /// Broadcast bias over leading dimensions.
    AddBias { x: usize, bias: usize, width: usize },
    /// out[b,f] = scale[b] * x[b,f]; both operands receive gradients.
    ScaleRows { x: usize, scale: usize, feat: usize },
    SumAll { x: usize },
    /// Row sums of a [rows, cols] tensor.
    SumLast { x: usize, cols: usize },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    rule: Rule,
    requires_grad: bool,
}

/// Append-only recording of one forward pass. One tape per training step;
/// not shared across threads.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    leaves: HashMap<String, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            leaves: HashMap::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, rule: Rule, requires_grad: bool) -> Tensor {
        let index = self.nodes.len();
        let mut out = Tensor::new(shape.clone(), value.clone()).expect("internal shape error");
        self.nodes.push(Node {
            shape,
            value,
            rule,
            requires_grad,
        });
        self.grads.push(None);
        out.node = Some(NodeRef {
            tape: self.id,
            index,
        });
        out
    }

    fn id_of(&self, t: &Tensor, op: &'static str) -> Result<usize, TensorError> {
        match t.node() {
            Some(NodeRef { tape, index }) if tape == self.id && index < self.nodes.len() => {
                Ok(index)
            }
            _ => Err(TensorError::NotOnTape { op }),
        }
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn val(&self, idx: usize) -> &[f32] {
        &self.nodes[idx].value
    }

    // ── Leaves ──────────────────────────────────────────────────────

    /// Record a constant input. No gradient flows into it.
    pub fn constant(&mut self, t: &Tensor) -> Tensor {
        self.push(t.shape().to_vec(), t.data().to_vec(), Rule::Leaf, false)
    }

    /// Record a named differentiable leaf, typically a model parameter.
    /// Watching the same name again returns the original node.
    pub fn watch(&mut self, name: &str, t: &Tensor) -> Tensor {
        if let Some(&index) = self.leaves.get(name) {
            debug_assert_eq!(self.nodes[index].shape, t.shape());
            let mut out = t.detached();
            out.node = Some(NodeRef {
                tape: self.id,
                index,
            });
            return out;
        }
        let out = self.push(t.shape().to_vec(), t.data().to_vec(), Rule::Leaf, true);
        self.leaves
            .insert(name.to_string(), out.node().unwrap().index);
        out
    }

    // ── Linear algebra ──────────────────────────────────────────────

    /// Matrix product of rank-2 operands: [m,k] x [k,n] -> [m,n].
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let ai = self.id_of(a, "matmul")?;
        let bi = self.id_of(b, "matmul")?;
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let value = matmul_nn(self.val(ai), self.val(bi), m, k, n);
        let rg = self.needs(ai) || self.needs(bi);
        Ok(self.push(vec![m, n], value, Rule::Matmul { a: ai, b: bi, m, k, n }, rg))
    }

    // ── Elementwise ─────────────────────────────────────────────────

    fn binary(
        &mut self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
    ) -> Result<(usize, usize), TensorError> {
        let ai = self.id_of(a, op)?;
        let bi = self.id_of(b, op)?;
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        Ok((ai, bi))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (ai, bi) = self.binary("add", a, b)?;
        let value: Vec<f32> = self
            .val(ai)
            .iter()
            .zip(self.val(bi))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.needs(ai) || self.needs(bi);
        Ok(self.push(a.shape().to_vec(), value, Rule::Add { a: ai, b: bi }, rg))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (ai, bi) = self.binary("sub", a, b)?;
        let value: Vec<f32> = self
            .val(ai)
            .iter()
            .zip(self.val(bi))
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.needs(ai) || self.needs(bi);
        Ok(self.push(a.shape().to_vec(), value, Rule::Sub { a: ai, b: bi }, rg))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (ai, bi) = self.binary("mul", a, b)?;
        let value: Vec<f32> = self
            .val(ai)
            .iter()
            .zip(self.val(bi))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.needs(ai) || self.needs(bi);
        Ok(self.push(a.shape().to_vec(), value, Rule::Mul { a: ai, b: bi }, rg))
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "sigmoid")?;
        let value: Vec<f32> = self.val(xi).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.needs(xi);
        Ok(self.push(x.shape().to_vec(), value, Rule::Sigmoid { x: xi }, rg))
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "tanh")?;
        let value: Vec<f32> = self.val(xi).iter().map(|&v| v.tanh()).collect();
        let rg = self.needs(xi);
        Ok(self.push(x.shape().to_vec(), value, Rule::Tanh { x: xi }, rg))
    }

    /// Natural log; every element must be strictly positive.
    pub fn log(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "log")?;
        if let Some((index, &value)) = self.val(xi).iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(TensorError::LogDomain { index, value });
        }
        let value: Vec<f32> = self.val(xi).iter().map(|&v| v.ln()).collect();
        let rg = self.needs(xi);
        Ok(self.push(x.shape().to_vec(), value, Rule::Log { x: xi }, rg))
    }

    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "exp")?;
        let value: Vec<f32> = self.val(xi).iter().map(|&v| v.exp()).collect();
        let rg = self.needs(xi);
        Ok(self.push(x.shape().to_vec(), value, Rule::Exp { x: xi }, rg))
    }

    /// Elementwise max with a scalar floor. On ties the gradient passes.
    pub fn max_scalar(&mut self, x: &Tensor, threshold: f32) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "max_scalar")?;
        let value: Vec<f32> = self.val(xi).iter().map(|&v| v.max(threshold)).collect();
        let rg = self.needs(xi);
        Ok(self.push(x.shape().to_vec(), value, Rule::MaxScalar { x: xi, threshold }, rg))
    }

    /// Elementwise min with a scalar ceiling. On ties the gradient passes.
    pub fn min_scalar(&mut self, x: &Tensor, threshold: f32) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "min_scalar")?;
        let value: Vec<f32> = self.val(xi).iter().map(|&v| v.min(threshold)).collect();
        let rg = self.needs(xi);
        Ok(self.push(x.shape().to_vec(), value, Rule::MinScalar { x: xi, threshold }, rg))
    }

    pub fn scale(&mut self, x: &Tensor, factor: f32) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "scale")?;
        let value: Vec<f32> = self.val(xi).iter().map(|&v| v * factor).collect();
        let rg = self.needs(xi);
        Ok(self.push(x.shape().to_vec(), value, Rule::Scale { x: xi, factor }, rg))
    }

    /// ReLU, implemented as max with zero.
    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        self.max_scalar(x, 0.0)
    }

    // ── Softmax ─────────────────────────────────────────────────────

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "softmax")?;
        if axis >= x.rank() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: x.rank(),
            });
        }
        let dims = x.shape();
        let outer: usize = dims[..axis].iter().product();
        let lane = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let src = self.val(xi);
        let mut value = vec![0.0f32; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lane * inner + i;
                let mut hi = f32::NEG_INFINITY;
                for l in 0..lane {
                    hi = hi.max(src[base + l * inner]);
                }
                let mut sum = 0.0f32;
                for l in 0..lane {
                    let e = (src[base + l * inner] - hi).exp();
                    value[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..lane {
                    value[base + l * inner] /= sum;
                }
            }
        }
        let rg = self.needs(xi);
        Ok(self.push(
            dims.to_vec(),
            value,
            Rule::Softmax { x: xi, outer, lane, inner },
            rg,
        ))
    }

    /// Softmax per row of a [batch, steps] tensor restricted to steps where
    /// `mask` is 1; masked steps get weight exactly 0. Rows with no real
    /// steps follow `policy`.
    pub fn masked_softmax_time(
        &mut self,
        x: &Tensor,
        mask: &Tensor,
        policy: EmptyRowPolicy,
    ) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "masked_softmax_time")?;
        if x.rank() != 2 || mask.shape() != x.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax_time",
                left: x.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        let (batch, steps) = (x.shape()[0], x.shape()[1]);
        let src = self.val(xi);
        let m = mask.data();
        let mut value = vec![0.0f32; src.len()];
        for b in 0..batch {
            let base = b * steps;
            let mut hi = f32::NEG_INFINITY;
            let mut any = false;
            for t in 0..steps {
                if m[base + t] != 0.0 {
                    any = true;
                    hi = hi.max(src[base + t]);
                }
            }
            if !any {
                if policy == EmptyRowPolicy::Reject {
                    return Err(TensorError::AllStepsMasked { row: b });
                }
                continue;
            }
            let mut sum = 0.0f32;
            for t in 0..steps {
                if m[base + t] != 0.0 {
                    let e = (src[base + t] - hi).exp();
                    value[base + t] = e;
                    sum += e;
                }
            }
            for t in 0..steps {
                value[base + t] /= sum;
            }
        }
        let rg = self.needs(xi);
        Ok(self.push(
            vec![batch, steps],
            value,
            Rule::MaskedSoftmaxTime {
                x: xi,
                mask: m.to_vec(),
            },
            rg,
        ))
    }

    // ── Convolution ─────────────────────────────────────────────────

    /// Cross-correlation along the time axis with symmetric zero padding,
    /// so the output keeps the input's time length.
    /// x: [batch, steps, c_in], kernel: [width, c_in, c_out], bias: [c_out].
    pub fn conv1d(
        &mut self,
        x: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "conv1d")?;
        let ki = self.id_of(kernel, "conv1d")?;
        let bi = self.id_of(bias, "conv1d")?;
        if x.rank() != 3 || kernel.rank() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: x.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        let (batch, steps, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (width, k_in, c_out) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
        if width % 2 == 0 {
            return Err(TensorError::EvenKernelWidth { width });
        }
        if k_in != c_in || bias.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: x.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        let value = conv1d_forward(
            self.val(xi),
            self.val(ki),
            self.val(bi),
            batch,
            steps,
            c_in,
            c_out,
            width,
        );
        let rg = self.needs(xi) || self.needs(ki) || self.needs(bi);
        Ok(self.push(
            vec![batch, steps, c_out],
            value,
            Rule::Conv1d {
                x: xi,
                kernel: ki,
                bias: bi,
                batch,
                steps,
                c_in,
                c_out,
                width,
            },
            rg,
        ))
    }

    /// Fused gated convolution: A ⊙ σ(B) with both branches sharing one
    /// window unroll and one matrix product. Bitwise-identical to running
    /// `conv1d` twice, `sigmoid`, and `mul`.
    #[allow(clippy::too_many_arguments)]
    pub fn glu_conv1d(
        &mut self,
        x: &Tensor,
        kernel_a: &Tensor,
        bias_a: &Tensor,
        kernel_b: &Tensor,
        bias_b: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "glu_conv1d")?;
        let kai = self.id_of(kernel_a, "glu_conv1d")?;
        let bai = self.id_of(bias_a, "glu_conv1d")?;
        let kbi = self.id_of(kernel_b, "glu_conv1d")?;
        let bbi = self.id_of(bias_b, "glu_conv1d")?;
        if x.rank() != 3 || kernel_a.rank() != 3 || kernel_a.shape() != kernel_b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "glu_conv1d",
                left: kernel_a.shape().to_vec(),
                right: kernel_b.shape().to_vec(),
            });
        }
        let (batch, steps, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (width, k_in, c_out) = (
            kernel_a.shape()[0],
            kernel_a.shape()[1],
            kernel_a.shape()[2],
        );
        if width % 2 == 0 {
            return Err(TensorError::EvenKernelWidth { width });
        }
        if k_in != c_in || bias_a.shape() != [c_out] || bias_b.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "glu_conv1d",
                left: x.shape().to_vec(),
                right: kernel_a.shape().to_vec(),
            });
        }
        let rows = batch * steps;
        let row_w = width * c_in;
        let cols = im2col(self.val(xi), batch, steps, c_in, width);
        let k_ab = interleave_kernels(self.val(kai), self.val(kbi), row_w, c_out);
        let ab = matmul_nn(&cols, &k_ab, rows, row_w, 2 * c_out);
        let ba = self.val(bai).to_vec();
        let bb = self.val(bbi).to_vec();
        let mut branch_a = vec![0.0f32; rows * c_out];
        let mut branch_b = vec![0.0f32; rows * c_out];
        let mut value = vec![0.0f32; rows * c_out];
        for r in 0..rows {
            for j in 0..c_out {
                let a = ab[r * 2 * c_out + j] + ba[j];
                let b = ab[r * 2 * c_out + c_out + j] + bb[j];
                branch_a[r * c_out + j] = a;
                branch_b[r * c_out + j] = b;
                value[r * c_out + j] = a * sigmoid(b);
            }
        }
        let rg = [xi, kai, bai, kbi, bbi].iter().any(|&i| self.needs(i));
        Ok(self.push(
            vec![batch, steps, c_out],
            value,
            Rule::GluConv1d {
                x: xi,
                kernel_a: kai,
                bias_a: bai,
                kernel_b: kbi,
                bias_b: bbi,
                batch,
                steps,
                c_in,
                c_out,
                width,
                branch_a,
                branch_b,
                cols,
            },
            rg,
        ))
    }

    // ── Gather / structure ──────────────────────────────────────────

    /// Row gather from an embedding table: indices [batch, steps] against
    /// table [vocab, dim] -> [batch, steps, dim]. The padding row 0 never
    /// receives gradient.
    pub fn embed_lookup(
        &mut self,
        table: &Tensor,
        indices: &[u32],
        batch: usize,
        steps: usize,
    ) -> Result<Tensor, TensorError> {
        let ti = self.id_of(table, "embed_lookup")?;
        if table.rank() != 2 || indices.len() != batch * steps {
            return Err(TensorError::BadOperand {
                op: "embed_lookup",
                expected: format!("table rank 2 and {} indices", batch * steps),
                got: table.shape().to_vec(),
            });
        }
        let vocab = table.shape()[0];
        let dim = table.shape()[1];
        for (pos, &idx) in indices.iter().enumerate() {
            if idx as usize >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    index: idx,
                    vocab_size: vocab,
                    row: pos / steps,
                    step: pos % steps,
                });
            }
        }
        let tab = self.val(ti);
        let mut value = vec![0.0f32; batch * steps * dim];
        for (pos, &idx) in indices.iter().enumerate() {
            let src = &tab[idx as usize * dim..(idx as usize + 1) * dim];
            value[pos * dim..(pos + 1) * dim].copy_from_slice(src);
        }
        let rg = self.needs(ti);
        Ok(self.push(
            vec![batch, steps, dim],
            value,
            Rule::EmbedLookup {
                table: ti,
                indices: indices.to_vec(),
                dim,
            },
            rg,
        ))
    }

    /// Concatenate along the last axis. All leading extents must agree.
    pub fn concat_last(&mut self, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        assert!(!parts.is_empty(), "concat_last: no operands");
        let first = parts[0];
        let rank = first.rank();
        let mut ids = Vec::with_capacity(parts.len());
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let pi = self.id_of(p, "concat_last")?;
            if p.rank() != rank || p.shape()[..rank - 1] != first.shape()[..rank - 1] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            ids.push(pi);
            widths.push(p.shape()[rank - 1]);
        }
        let lead: usize = first.shape()[..rank - 1].iter().product();
        let total: usize = widths.iter().sum();
        let mut value = vec![0.0f32; lead * total];
        let mut offset = 0;
        for (&pi, &w) in ids.iter().zip(&widths) {
            let src = self.val(pi);
            for row in 0..lead {
                value[row * total + offset..row * total + offset + w]
                    .copy_from_slice(&src[row * w..(row + 1) * w]);
            }
            offset += w;
        }
        let mut shape = first.shape()[..rank - 1].to_vec();
        shape.push(total);
        let rg = ids.iter().any(|&i| self.needs(i));
        Ok(self.push(
            shape,
            value,
            Rule::ConcatLast {
                inputs: ids,
                widths,
                lead,
            },
            rg,
        ))
    }

    /// Reinterpret the data with a new shape of the same element count.
    pub fn reshape(&mut self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "reshape")?;
        let numel: usize = shape.iter().product();
        if numel != x.len() || shape.is_empty() || shape.len() > 3 {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                len: x.len(),
            });
        }
        let value = self.val(xi).to_vec();
        let rg = self.needs(xi);
        Ok(self.push(shape, value, Rule::Reshape { x: xi }, rg))
    }

    /// Slice one time step out of [batch, steps, feat] -> [batch, feat].
    pub fn select_time(&mut self, x: &Tensor, step: usize) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "select_time")?;
        if x.rank() != 3 || step >= x.shape()[1] {
            return Err(TensorError::BadOperand {
                op: "select_time",
                expected: format!("rank 3 with step < {}", x.shape().get(1).unwrap_or(&0)),
                got: x.shape().to_vec(),
            });
        }
        let (batch, steps, feat) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let src = self.val(xi);
        let mut value = vec![0.0f32; batch * feat];
        for b in 0..batch {
            let base = (b * steps + step) * feat;
            value[b * feat..(b + 1) * feat].copy_from_slice(&src[base..base + feat]);
        }
        let rg = self.needs(xi);
        Ok(self.push(
            vec![batch, feat],
            value,
            Rule::SelectTime {
                x: xi,
                step,
                steps,
                feat,
            },
            rg,
        ))
    }

    /// Stack per-step [batch, feat] tensors into [batch, steps, feat].
    pub fn stack_time(&mut self, steps: &[&Tensor]) -> Result<Tensor, TensorError> {
        assert!(!steps.is_empty(), "stack_time: no operands");
        let first = steps[0];
        if first.rank() != 2 {
            return Err(TensorError::BadOperand {
                op: "stack_time",
                expected: "rank-2 step tensors".to_string(),
                got: first.shape().to_vec(),
            });
        }
        let (batch, feat) = (first.shape()[0], first.shape()[1]);
        let mut ids = Vec::with_capacity(steps.len());
        for s in steps {
            let si = self.id_of(s, "stack_time")?;
            if s.shape() != [batch, feat] {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_time",
                    left: first.shape().to_vec(),
                    right: s.shape().to_vec(),
                });
            }
            ids.push(si);
        }
        let t = ids.len();
        let mut value = vec![0.0f32; batch * t * feat];
        for (step, &si) in ids.iter().enumerate() {
            let src = self.val(si);
            for b in 0..batch {
                let dst = (b * t + step) * feat;
                value[dst..dst + feat].copy_from_slice(&src[b * feat..(b + 1) * feat]);
            }
        }
        let rg = ids.iter().any(|&i| self.needs(i));
        Ok(self.push(
            vec![batch, t, feat],
            value,
            Rule::StackTime { inputs: ids, feat },
            rg,
        ))
    }

    /// Multiply each time slice of [batch, steps, feat] by a constant
    /// per-(batch, step) coefficient, e.g. a padding mask.
    pub fn scale_steps(&mut self, x: &Tensor, coeff: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "scale_steps")?;
        if x.rank() != 3 || coeff.shape() != &x.shape()[..2] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_steps",
                left: x.shape().to_vec(),
                right: coeff.shape().to_vec(),
            });
        }
        let feat = x.shape()[2];
        let src = self.val(xi);
        let c = coeff.data();
        let mut value = vec![0.0f32; src.len()];
        for (slot, chunk) in src.chunks_exact(feat).enumerate() {
            let cv = c[slot];
            for (o, &v) in value[slot * feat..(slot + 1) * feat].iter_mut().zip(chunk) {
                *o = cv * v;
            }
        }
        let rg = self.needs(xi);
        Ok(self.push(
            x.shape().to_vec(),
            value,
            Rule::ScaleSteps {
                x: xi,
                coeff: c.to_vec(),
                feat,
            },
            rg,
        ))
    }

    /// Constant-coefficient combination over the time axis:
    /// out[b,f] = sum_t coeff[b,t] * x[b,t,f].
    pub fn combine_time(&mut self, x: &Tensor, coeff: &[f32]) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "combine_time")?;
        if x.rank() != 3 || coeff.len() != x.shape()[0] * x.shape()[1] {
            return Err(TensorError::BadOperand {
                op: "combine_time",
                expected: format!("rank 3 with {} coefficients", coeff.len()),
                got: x.shape().to_vec(),
            });
        }
        let (batch, steps, feat) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let src = self.val(xi);
        let mut value = vec![0.0f32; batch * feat];
        for b in 0..batch {
            let out = &mut value[b * feat..(b + 1) * feat];
            for t in 0..steps {
                let cv = coeff[b * steps + t];
                let row = &src[(b * steps + t) * feat..(b * steps + t + 1) * feat];
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += cv * v;
                }
            }
        }
        let rg = self.needs(xi);
        Ok(self.push(
            vec![batch, feat],
            value,
            Rule::CombineTime {
                x: xi,
                coeff: coeff.to_vec(),
                steps,
                feat,
            },
            rg,
        ))
    }

    /// Attention combination: out[b,f] = sum_t w[b,t] * s[b,t,f], with
    /// gradients flowing to both the weights and the states.
    pub fn attend_time(&mut self, weights: &Tensor, states: &Tensor) -> Result<Tensor, TensorError> {
        let wi = self.id_of(weights, "attend_time")?;
        let si = self.id_of(states, "attend_time")?;
        if states.rank() != 3 || weights.shape() != &states.shape()[..2] {
            return Err(TensorError::ShapeMismatch {
                op: "attend_time",
                left: weights.shape().to_vec(),
                right: states.shape().to_vec(),
            });
        }
        let (batch, steps, feat) = (states.shape()[0], states.shape()[1], states.shape()[2]);
        let w = self.val(wi);
        let s = self.val(si);
        let mut value = vec![0.0f32; batch * feat];
        for b in 0..batch {
            let out = &mut value[b * feat..(b + 1) * feat];
            for t in 0..steps {
                let wv = w[b * steps + t];
                let row = &s[(b * steps + t) * feat..(b * steps + t + 1) * feat];
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += wv * v;
                }
            }
        }
        let rg = self.needs(wi) || self.needs(si);
        Ok(self.push(
            vec![batch, feat],
            value,
            Rule::AttendTime {
                weights: wi,
                states: si,
                steps,
                feat,
            },
            rg,
        ))
    }

    /// Add a rank-1 bias, broadcast over all leading dimensions.
    pub fn add_bias(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "add_bias")?;
        let bi = self.id_of(bias, "add_bias")?;
        let width = *x.shape().last().unwrap();
        if bias.shape() != [width] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: x.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let b = self.val(bi).to_vec();
        let mut value = self.val(xi).to_vec();
        for chunk in value.chunks_exact_mut(width) {
            for (o, &bv) in chunk.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.needs(xi) || self.needs(bi);
        Ok(self.push(
            x.shape().to_vec(),
            value,
            Rule::AddBias {
                x: xi,
                bias: bi,
                width,
            },
            rg,
        ))
    }

    /// Multiply each row of [batch, feat] by a per-row scalar from a
    /// rank-1 [batch] tensor; gradients flow to both operands.
    pub fn scale_rows(&mut self, x: &Tensor, scale: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "scale_rows")?;
        let si = self.id_of(scale, "scale_rows")?;
        if x.rank() != 2 || scale.shape() != [x.shape()[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: x.shape().to_vec(),
                right: scale.shape().to_vec(),
            });
        }
        let feat = x.shape()[1];
        let s = self.val(si).to_vec();
        let src = self.val(xi);
        let mut value = vec![0.0f32; src.len()];
        for (b, chunk) in src.chunks_exact(feat).enumerate() {
            for (o, &v) in value[b * feat..(b + 1) * feat].iter_mut().zip(chunk) {
                *o = s[b] * v;
            }
        }
        let rg = self.needs(xi) || self.needs(si);
        Ok(self.push(
            x.shape().to_vec(),
            value,
            Rule::ScaleRows {
                x: xi,
                scale: si,
                feat,
            },
            rg,
        ))
    }

    // ── Reductions ──────────────────────────────────────────────────

    /// Sum of every element, as a scalar tensor.
    pub fn sum_all(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "sum_all")?;
        let value = vec![self.val(xi).iter().sum::<f32>()];
        let rg = self.needs(xi);
        Ok(self.push(vec![1], value, Rule::SumAll { x: xi }, rg))
    }

    /// Row sums of a [rows, cols] tensor -> [rows].
    pub fn sum_last(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let xi = self.id_of(x, "sum_last")?;
        if x.rank() != 2 {
            return Err(TensorError::BadOperand {
                op: "sum_last",
                expected: "rank 2".to_string(),
                got: x.shape().to_vec(),
            });
        }
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        let src = self.val(xi);
        let value: Vec<f32> = (0..rows)
            .map(|r| src[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let rg = self.needs(xi);
        Ok(self.push(vec![rows], value, Rule::SumLast { x: xi, cols }, rg))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients accumulate additively
    /// across fan-out; query them with `grad` or `grad_by_name`.
    pub fn backward(&mut self, loss: &Tensor) -> Result<(), TensorError> {
        let lid = self.id_of(loss, "backward")?;
        if self.nodes[lid].value.len() != 1 {
            return Err(TensorError::NotAScalar {
                shape: self.nodes[lid].shape.clone(),
            });
        }
        self.grads[lid] = Some(vec![1.0]);
        for idx in (0..=lid).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let dout = self.grads[idx].clone().unwrap();
            let rule = self.nodes[idx].rule.clone();
            self.apply_rule(idx, &rule, &dout);
        }
        Ok(())
    }

    /// Gradient accumulated at a tensor's node, if any flowed there.
    pub fn grad(&self, t: &Tensor) -> Option<&[f32]> {
        let idx = self.id_of(t, "grad").ok()?;
        self.grads[idx].as_deref()
    }

    /// Gradient of a watched leaf by name.
    pub fn grad_by_name(&self, name: &str) -> Option<&[f32]> {
        let &idx = self.leaves.get(name)?;
        self.grads[idx].as_deref()
    }

    /// Moves a leaf's gradient buffer out of the tape, leaving None behind.
    pub fn take_grad_by_name(&mut self, name: &str) -> Option<Vec<f32>> {
        let &idx = self.leaves.get(name)?;
        self.grads[idx].take()
    }

    fn accumulate(&mut self, idx: usize, delta: &[f32]) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut self.grads[idx] {
            Some(g) => {
                for (o, &d) in g.iter_mut().zip(delta) {
                    *o += d;
                }
            }
            None => self.grads[idx] = Some(delta.to_vec()),
        }
    }

    fn apply_rule(&mut self, idx: usize, rule: &Rule, dout: &[f32]) {
        match rule {
            Rule::Leaf => {}
            Rule::Matmul { a, b, m, k, n } => {
                if self.needs(*a) {
                    let da = matmul_nt(dout, self.val(*b), *m, *n, *k);
                    self.accumulate(*a, &da);
                }
                if self.needs(*b) {
                    let db = matmul_tn(self.val(*a), dout, *m, *k, *n);
                    self.accumulate(*b, &db);
                }
            }
            Rule::Add { a, b } => {
                self.accumulate(*a, dout);
                self.accumulate(*b, dout);
            }
            Rule::Sub { a, b } => {
                self.accumulate(*a, dout);
                if self.needs(*b) {
                    let neg: Vec<f32> = dout.iter().map(|d| -d).collect();
                    self.accumulate(*b, &neg);
                }
            }
            Rule::Mul { a, b } => {
                if self.needs(*a) {
                    let da: Vec<f32> = dout.iter().zip(self.val(*b)).map(|(d, v)| d * v).collect();
                    self.accumulate(*a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f32> = dout.iter().zip(self.val(*a)).map(|(d, v)| d * v).collect();
                    self.accumulate(*b, &db);
                }
            }
            Rule::Sigmoid { x } => {
                let y = &self.nodes[idx].value;
                let dx: Vec<f32> = dout.iter().zip(y).map(|(d, &o)| d * o * (1.0 - o)).collect();
                self.accumulate(*x, &dx);
            }
            Rule::Tanh { x } => {
                let y = &self.nodes[idx].value;
                let dx: Vec<f32> = dout.iter().zip(y).map(|(d, &o)| d * (1.0 - o * o)).collect();
                self.accumulate(*x, &dx);
            }
            Rule::Log { x } => {
                let dx: Vec<f32> = dout.iter().zip(self.val(*x)).map(|(d, &v)| d / v).collect();
                self.accumulate(*x, &dx);
            }
            Rule::Exp { x } => {
                let y = &self.nodes[idx].value;
                let dx: Vec<f32> = dout.iter().zip(y).map(|(d, &o)| d * o).collect();
                self.accumulate(*x, &dx);
            }
            Rule::MaxScalar { x, threshold } => {
                let dx: Vec<f32> = dout
                    .iter()
                    .zip(self.val(*x))
                    .map(|(d, &v)| if v >= *threshold { *d } else { 0.0 })
                    .collect();
                self.accumulate(*x, &dx);
            }
            Rule::MinScalar { x, threshold } => {
                let dx: Vec<f32> = dout
                    .iter()
                    .zip(self.val(*x))
                    .map(|(d, &v)| if v <= *threshold { *d } else { 0.0 })
                    .collect();
                self.accumulate(*x, &dx);
            }
            Rule::Scale { x, factor } => {
                let dx: Vec<f32> = dout.iter().map(|d| d * factor).collect();
                self.accumulate(*x, &dx);
            }
            Rule::Softmax { x, outer, lane, inner } => {
                let y = self.nodes[idx].value.clone();
                let mut dx = vec![0.0f32; dout.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * lane * inner + i;
                        let mut dot = 0.0f32;
                        for l in 0..*lane {
                            let p = base + l * inner;
                            dot += dout[p] * y[p];
                        }
                        for l in 0..*lane {
                            let p = base + l * inner;
                            dx[p] = y[p] * (dout[p] - dot);
                        }
                    }
                }
                self.accumulate(*x, &dx);
            }
            Rule::MaskedSoftmaxTime { x, mask } => {
                let y = self.nodes[idx].value.clone();
                let cols = *self.nodes[idx].shape.last().unwrap();
                let rows = dout.len() / cols;
                let mut dx = vec![0.0f32; dout.len()];
                for r in 0..rows {
                    let base = r * cols;
                    let mut dot = 0.0f32;
                    for c in 0..cols {
                        dot += dout[base + c] * y[base + c];
                    }
                    for c in 0..cols {
                        if mask[base + c] != 0.0 {
                            dx[base + c] = y[base + c] * (dout[base + c] - dot);
                        }
                    }
                }
                self.accumulate(*x, &dx);
            }
            Rule::Conv1d {
                x,
                kernel,
                bias,
                batch,
                steps,
                c_in,
                c_out,
                width,
            } => {
                let rows = batch * steps;
                let row_w = width * c_in;
                if self.needs(*kernel) {
                    let cols = im2col(self.val(*x), *batch, *steps, *c_in, *width);
                    let dk = matmul_tn(&cols, dout, rows, row_w, *c_out);
                    self.accumulate(*kernel, &dk);
                }
                if self.needs(*x) {
                    let dcols = matmul_nt(dout, self.val(*kernel), rows, *c_out, row_w);
                    let dx = col2im_add(&dcols, *batch, *steps, *c_in, *width);
                    self.accumulate(*x, &dx);
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0f32; *c_out];
                    for row in dout.chunks_exact(*c_out) {
                        for (o, &d) in db.iter_mut().zip(row) {
                            *o += d;
                        }
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Rule::GluConv1d {
                x,
                kernel_a,
                bias_a,
                kernel_b,
                bias_b,
                batch,
                steps,
                c_in,
                c_out,
                width,
                branch_a,
                branch_b,
                cols,
            } => {
                let rows = batch * steps;
                let row_w = width * c_in;
                // Branch gradients, interleaved column-wise like the fused
                // kernel: d_a = dout ⊙ σ(b), d_b = dout ⊙ a ⊙ σ(b)(1−σ(b)),
                // with the bias sums picked up in the same pass.
                let mut d_ab = vec![0.0f32; rows * 2 * c_out];
                let mut dba = vec![0.0f32; *c_out];
                let mut dbb = vec![0.0f32; *c_out];
                for r in 0..rows {
                    for j in 0..*c_out {
                        let i = r * c_out + j;
                        let g = sigmoid(branch_b[i]);
                        let da = dout[i] * g;
                        let db = dout[i] * branch_a[i] * g * (1.0 - g);
                        d_ab[r * 2 * c_out + j] = da;
                        d_ab[r * 2 * c_out + c_out + j] = db;
                        dba[j] += da;
                        dbb[j] += db;
                    }
                }
                if self.needs(*bias_a) {
                    self.accumulate(*bias_a, &dba);
                }
                if self.needs(*bias_b) {
                    self.accumulate(*bias_b, &dbb);
                }
                if self.needs(*kernel_a) || self.needs(*kernel_b) {
                    let dk_ab = matmul_tn(cols, &d_ab, rows, row_w, 2 * c_out);
                    let mut dka = vec![0.0f32; row_w * c_out];
                    let mut dkb = vec![0.0f32; row_w * c_out];
                    for r in 0..row_w {
                        dka[r * c_out..(r + 1) * c_out]
                            .copy_from_slice(&dk_ab[r * 2 * c_out..r * 2 * c_out + c_out]);
                        dkb[r * c_out..(r + 1) * c_out]
                            .copy_from_slice(&dk_ab[r * 2 * c_out + c_out..(r + 1) * 2 * c_out]);
                    }
                    self.accumulate(*kernel_a, &dka);
                    self.accumulate(*kernel_b, &dkb);
                }
                if self.needs(*x) {
                    let k_ab =
                        interleave_kernels(self.val(*kernel_a), self.val(*kernel_b), row_w, *c_out);
                    let dcols = matmul_nt(&d_ab, &k_ab, rows, 2 * c_out, row_w);
                    let dx = col2im_add(&dcols, *batch, *steps, *c_in, *width);
                    self.accumulate(*x, &dx);
                }
            }
            Rule::EmbedLookup { table, indices, dim } => {
                if self.needs(*table) {
                    // Scatter-add straight into the accumulator; a dense
                    // temporary would dwarf the handful of touched rows.
                    let numel = self.nodes[*table].value.len();
                    let acc = self.grads[*table].get_or_insert_with(|| vec![0.0; numel]);
                    for (pos, &idx) in indices.iter().enumerate() {
                        if idx == 0 {
                            continue;
                        }
                        let dst = idx as usize * dim;
                        let src = &dout[pos * dim..(pos + 1) * dim];
                        for (o, &d) in acc[dst..dst + dim].iter_mut().zip(src) {
                            *o += d;
                        }
                    }
                }
            }
            Rule::ConcatLast { inputs, widths, lead } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&pi, &w) in inputs.iter().zip(widths) {
                    if self.needs(pi) {
                        let mut dp = vec![0.0f32; lead * w];
                        for row in 0..*lead {
                            dp[row * w..(row + 1) * w].copy_from_slice(
                                &dout[row * total + offset..row * total + offset + w],
                            );
                        }
                        self.accumulate(pi, &dp);
                    }
                    offset += w;
                }
            }
            Rule::Reshape { x } => {
                self.accumulate(*x, dout);
            }
            Rule::SelectTime { x, step, steps, feat } => {
                if self.needs(*x) {
                    let batch = dout.len() / feat;
                    let mut dx = vec![0.0f32; batch * steps * feat];
                    for b in 0..batch {
                        let dst = (b * steps + step) * feat;
                        dx[dst..dst + feat].copy_from_slice(&dout[b * feat..(b + 1) * feat]);
                    }
                    self.accumulate(*x, &dx);
                }
            }
            Rule::StackTime { inputs, feat } => {
                let t = inputs.len();
                let batch = dout.len() / (t * feat);
                for (step, &si) in inputs.iter().enumerate() {
                    if self.needs(si) {
                        let mut ds = vec![0.0f32; batch * feat];
                        for b in 0..batch {
                            let src = (b * t + step) * feat;
                            ds[b * feat..(b + 1) * feat]
                                .copy_from_slice(&dout[src..src + feat]);
                        }
                        self.accumulate(si, &ds);
                    }
                }
            }
            Rule::ScaleSteps { x, coeff, feat } => {
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; dout.len()];
                    for (slot, chunk) in dout.chunks_exact(*feat).enumerate() {
                        let cv = coeff[slot];
                        for (o, &d) in dx[slot * feat..(slot + 1) * feat].iter_mut().zip(chunk) {
                            *o = cv * d;
                        }
                    }
                    self.accumulate(*x, &dx);
                }
            }
            Rule::CombineTime { x, coeff, steps, feat } => {
                if self.needs(*x) {
                    let batch = dout.len() / feat;
                    let mut dx = vec![0.0f32; batch * steps * feat];
                    for b in 0..batch {
                        let drow = &dout[b * feat..(b + 1) * feat];
                        for t in 0..*steps {
                            let cv = coeff[b * steps + t];
                            let dst = (b * steps + t) * feat;
                            for (o, &d) in dx[dst..dst + feat].iter_mut().zip(drow) {
                                *o = cv * d;
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
            }
            Rule::AttendTime {
                weights,
                states,
                steps,
                feat,
            } => {
                let batch = dout.len() / feat;
                if self.needs(*weights) {
                    let s = self.val(*states);
                    let mut dw = vec![0.0f32; batch * steps];
                    for b in 0..batch {
                        let drow = &dout[b * feat..(b + 1) * feat];
                        for t in 0..*steps {
                            let srow = &s[(b * steps + t) * feat..(b * steps + t + 1) * feat];
                            let mut acc = 0.0f32;
                            for (d, v) in drow.iter().zip(srow) {
                                acc += d * v;
                            }
                            dw[b * steps + t] = acc;
                        }
                    }
                    self.accumulate(*weights, &dw);
                }
                if self.needs(*states) {
                    let w = self.val(*weights);
                    let mut ds = vec![0.0f32; batch * steps * feat];
                    for b in 0..batch {
                        let drow = &dout[b * feat..(b + 1) * feat];
                        for t in 0..*steps {
                            let wv = w[b * steps + t];
                            let dst = (b * steps + t) * feat;
                            for (o, &d) in ds[dst..dst + feat].iter_mut().zip(drow) {
                                *o = wv * d;
                            }
                        }
                    }
                    self.accumulate(*states, &ds);
                }
            }
            Rule::AddBias { x, bias, width } => {
                self.accumulate(*x, dout);
                if self.needs(*bias) {
                    let mut db = vec![0.0f32; *width];
                    for row in dout.chunks_exact(*width) {
                        for (o, &d) in db.iter_mut().zip(row) {
                            *o += d;
                        }
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Rule::ScaleRows { x, scale, feat } => {
                let batch = dout.len() / feat;
                if self.needs(*x) {
                    let s = self.val(*scale);
                    let mut dx = vec![0.0f32; dout.len()];
                    for b in 0..batch {
                        for (o, &d) in dx[b * feat..(b + 1) * feat]
                            .iter_mut()
                            .zip(&dout[b * feat..(b + 1) * feat])
                        {
                            *o = s[b] * d;
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                if self.needs(*scale) {
                    let xv = self.val(*x);
                    let mut ds = vec![0.0f32; batch];
                    for b in 0..batch {
                        let mut acc = 0.0f32;
                        for (d, v) in dout[b * feat..(b + 1) * feat]
                            .iter()
                            .zip(&xv[b * feat..(b + 1) * feat])
                        {
                            acc += d * v;
                        }
                        ds[b] = acc;
                    }
                    self.accumulate(*scale, &ds);
                }
            }
            Rule::SumAll { x } => {
                if self.needs(*x) {
                    let dx = vec![dout[0]; self.nodes[*x].value.len()];
                    self.accumulate(*x, &dx);
                }
            }
            Rule::SumLast { x, cols } => {
                if self.needs(*x) {
                    let rows = dout.len();
                    let mut dx = vec![0.0f32; rows * cols];
                    for (r, &d) in dout.iter().enumerate() {
                        for o in dx[r * cols..(r + 1) * cols].iter_mut() {
                            *o = d;
                        }
                    }
                    self.accumulate(*x, &dx);
                }
            }
        }
    }

}

pub(crate) fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

// ── f32 kernels ─────────────────────────────────────────────────────

/// out[m,n] = a[m,k] · b[k,n], k-blocked by four to cut accumulator traffic.
pub(crate) fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for j in 0..n {
                orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            p += 4;
        }
        while p < k {
            let av = arow[p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
            p += 1;
        }
    }
    out
}

/// out[m,k] = a[m,n] · b[k,n]ᵀ, four dot products per a-row pass.
pub(crate) fn matmul_nt(a: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        let mut p = 0;
        while p + 4 <= k {
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            let (mut s0, mut s1, mut s2, mut s3) = (0.0f32, 0.0f32, 0.0f32, 0.0f32);
            for (j, &av) in arow.iter().enumerate() {
                s0 += av * b0[j];
                s1 += av * b1[j];
                s2 += av * b2[j];
                s3 += av * b3[j];
            }
            orow[p] = s0;
            orow[p + 1] = s1;
            orow[p + 2] = s2;
            orow[p + 3] = s3;
            p += 4;
        }
        while p < k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0f32;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            orow[p] = acc;
            p += 1;
        }
    }
    out
}

/// out[k,n] = a[m,k]ᵀ · b[m,n], four input rows per pass.
pub(crate) fn matmul_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; k * n];
    let mut i = 0;
    while i + 4 <= m {
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        let b0 = &b[i * n..(i + 1) * n];
        let b1 = &b[(i + 1) * n..(i + 2) * n];
        let b2 = &b[(i + 2) * n..(i + 3) * n];
        let b3 = &b[(i + 3) * n..(i + 4) * n];
        for p in 0..k {
            let (v0, v1, v2, v3) = (a0[p], a1[p], a2[p], a3[p]);
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
            }
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
        i += 1;
    }
    out
}


/// Unrolls the padded convolution windows: [b, t, ci] -> [b·t, w·ci].
/// Out-of-range positions stay zero, matching symmetric zero padding.
pub(crate) fn im2col(
    x: &[f32],
    batch: usize,
    steps: usize,
    c_in: usize,
    width: usize,
) -> Vec<f32> {
    let pad = (width - 1) / 2;
    let row_w = width * c_in;
    let mut cols = vec![0.0f32; batch * steps * row_w];
    for b in 0..batch {
        for t in 0..steps {
            let row = (b * steps + t) * row_w;
            for dw in 0..width {
                let s = t as isize + dw as isize - pad as isize;
                if s < 0 || s >= steps as isize {
                    continue;
                }
                let src = (b * steps + s as usize) * c_in;
                cols[row + dw * c_in..row + (dw + 1) * c_in]
                    .copy_from_slice(&x[src..src + c_in]);
            }
        }
    }
    cols
}

/// Folds window-gradient rows back onto the input positions they came from.
pub(crate) fn col2im_add(
    dcols: &[f32],
    batch: usize,
    steps: usize,
    c_in: usize,
    width: usize,
) -> Vec<f32> {
    let pad = (width - 1) / 2;
    let row_w = width * c_in;
    let mut dx = vec![0.0f32; batch * steps * c_in];
    for b in 0..batch {
        for t in 0..steps {
            let row = (b * steps + t) * row_w;
            for dw in 0..width {
                let s = t as isize + dw as isize - pad as isize;
                if s < 0 || s >= steps as isize {
                    continue;
                }
                let dst = (b * steps + s as usize) * c_in;
                for (o, &d) in dx[dst..dst + c_in]
                    .iter_mut()
                    .zip(&dcols[row + dw * c_in..row + (dw + 1) * c_in])
                {
                    *o += d;
                }
            }
        }
    }
    dx
}

/// Column-interleaves two kernels of layout [w·ci, co] into [w·ci, 2co].
pub(crate) fn interleave_kernels(ka: &[f32], kb: &[f32], row_w: usize, c_out: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; row_w * 2 * c_out];
    for r in 0..row_w {
        out[r * 2 * c_out..r * 2 * c_out + c_out]
            .copy_from_slice(&ka[r * c_out..(r + 1) * c_out]);
        out[r * 2 * c_out + c_out..(r + 1) * 2 * c_out]
            .copy_from_slice(&kb[r * c_out..(r + 1) * c_out]);
    }
    out
}

/// Cross-correlation as im2col plus one matrix product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_forward(
    x: &[f32],
    kernel: &[f32],
    bias: &[f32],
    batch: usize,
    steps: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
) -> Vec<f32> {
    let cols = im2col(x, batch, steps, c_in, width);
    let mut out = matmul_nn(&cols, kernel, batch * steps, width * c_in, c_out);
    for row in out.chunks_exact_mut(c_out) {
        for (o, &bv) in row.iter_mut().zip(bias) {
            *o += bv;
        }
    }
    out
}
