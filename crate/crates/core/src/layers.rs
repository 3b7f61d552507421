//! Trainable layers shared by both model architectures.
//!
//! Layers are plain parameter containers; the forward methods record onto a
//! caller-supplied tape. Parameters are initialized uniform in
//! ±1/sqrt(fan_in) (biases zero) from a seeded generator so runs reproduce
//! bitwise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{mask_lengths, EmptyRowPolicy, Tape, Tensor, TensorError};

/// Uniform ±1/sqrt(fan_in) initialization.
fn init_weights(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let scale = 1.0 / (fan_in as f32).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Visits every named parameter of a layer or model, in a fixed order.
pub trait ParamVisitor {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

/// Collects (name, clone) pairs; handy for checkpointing and tests.
pub fn named_params<P: ParamVisitor + ?Sized>(p: &P) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    p.visit(&mut |name, t| out.push((name.to_string(), t.detached())));
    out
}

// ── Embedding ───────────────────────────────────────────────────────

/// Token embedding table. Row 0 is the padding row: zero at construction
/// and excluded from gradient updates, so padded steps always embed to the
/// zero vector.
pub struct EmbeddingTable {
    pub name: String,
    pub weights: Tensor,
}

impl EmbeddingTable {
    pub fn new(name: impl Into<String>, vocab_size: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut weights = init_weights(rng, vec![vocab_size, dim], vocab_size);
        for v in weights.data_mut()[..dim].iter_mut() {
            *v = 0.0;
        }
        EmbeddingTable {
            name: name.into(),
            weights,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Gather rows for [batch, steps] indices -> [batch, steps, dim].
    pub fn forward(
        &self,
        tape: &mut Tape,
        indices: &[u32],
        batch: usize,
        steps: usize,
    ) -> Result<Tensor, TensorError> {
        let table = tape.watch(&self.name, &self.weights);
        tape.embed_lookup(&table, indices, batch, steps)
    }
}

impl ParamVisitor for EmbeddingTable {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&self.name, &self.weights);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&self.name.clone(), &mut self.weights);
    }
}

/// Concatenate a code embedding with its scalar duration channel:
/// [b,t,d] ++ [b,t,1] -> [b,t,d+1].
pub fn joint_embed(tape: &mut Tape, code_emb: &Tensor, duration: &Tensor) -> Result<Tensor, TensorError> {
    if code_emb.rank() != 3
        || duration.rank() != 3
        || duration.shape()[2] != 1
        || code_emb.shape()[..2] != duration.shape()[..2]
    {
        return Err(TensorError::ShapeMismatch {
            op: "joint_embed",
            left: code_emb.shape().to_vec(),
            right: duration.shape().to_vec(),
        });
    }
    tape.concat_last(&[code_emb, duration])
}

// ── Dense ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

/// Affine map plus optional activation over rank-2 input [rows, in].
pub struct Dense {
    pub name: String,
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Dense {
            name: name.into(),
            w: init_weights(rng, vec![in_dim, out_dim], in_dim),
            b: Tensor::zeros(vec![out_dim]),
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        let w = tape.watch(&format!("{}.w", self.name), &self.w);
        let b = tape.watch(&format!("{}.b", self.name), &self.b);
        let affine = tape.matmul(x, &w)?;
        let affine = tape.add_bias(&affine, &b)?;
        match self.activation {
            Activation::None => Ok(affine),
            Activation::Relu => tape.relu(&affine),
            Activation::Tanh => tape.tanh(&affine),
        }
    }
}

impl ParamVisitor for Dense {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.w", self.name), &mut self.w);
        f(&format!("{}.b", self.name), &mut self.b);
    }
}

// ── GRU ─────────────────────────────────────────────────────────────

/// Gated recurrent cell: update gate z, reset gate r, candidate h̃.
pub struct GruCell {
    pub name: String,
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

/// Tape handles for one cell's parameters, watched once per forward pass.
pub struct GruCellHandles {
    w_z: Tensor,
    w_r: Tensor,
    w_h: Tensor,
    u_z: Tensor,
    u_r: Tensor,
    u_h: Tensor,
    b_z: Tensor,
    b_r: Tensor,
    b_h: Tensor,
}

impl GruCell {
    pub fn new(name: impl Into<String>, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let name = name.into();
        GruCell {
            w_z: init_weights(rng, vec![in_dim, hidden], in_dim),
            w_r: init_weights(rng, vec![in_dim, hidden], in_dim),
            w_h: init_weights(rng, vec![in_dim, hidden], in_dim),
            u_z: init_weights(rng, vec![hidden, hidden], hidden),
            u_r: init_weights(rng, vec![hidden, hidden], hidden),
            u_h: init_weights(rng, vec![hidden, hidden], hidden),
            b_z: Tensor::zeros(vec![hidden]),
            b_r: Tensor::zeros(vec![hidden]),
            b_h: Tensor::zeros(vec![hidden]),
            name,
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_z.shape()[0]
    }

    pub fn watch(&self, tape: &mut Tape) -> GruCellHandles {
        let n = &self.name;
        GruCellHandles {
            w_z: tape.watch(&format!("{n}.w_z"), &self.w_z),
            w_r: tape.watch(&format!("{n}.w_r"), &self.w_r),
            w_h: tape.watch(&format!("{n}.w_h"), &self.w_h),
            u_z: tape.watch(&format!("{n}.u_z"), &self.u_z),
            u_r: tape.watch(&format!("{n}.u_r"), &self.u_r),
            u_h: tape.watch(&format!("{n}.u_h"), &self.u_h),
            b_z: tape.watch(&format!("{n}.b_z"), &self.b_z),
            b_r: tape.watch(&format!("{n}.b_r"), &self.b_r),
            b_h: tape.watch(&format!("{n}.b_h"), &self.b_h),
        }
    }

    /// One recurrence step:
    ///   z = σ(xW_z + hU_z + b_z)
    ///   r = σ(xW_r + hU_r + b_r)
    ///   h̃ = tanh(xW_h + (r⊙h)U_h + b_h)
    ///   h' = (1−z)⊙h + z⊙h̃
    pub fn step(&self, tape: &mut Tape, x_t: &Tensor, h_prev: &Tensor) -> Result<Tensor, TensorError> {
        let handles = self.watch(tape);
        handles.step(tape, x_t, h_prev)
    }
}

impl GruCellHandles {
    pub fn step(&self, tape: &mut Tape, x_t: &Tensor, h_prev: &Tensor) -> Result<Tensor, TensorError> {
        let gate = |tape: &mut Tape, w: &Tensor, u: &Tensor, b: &Tensor, h: &Tensor| {
            let xw = tape.matmul(x_t, w)?;
            let hu = tape.matmul(h, u)?;
            let s = tape.add(&xw, &hu)?;
            tape.add_bias(&s, b)
        };
        let z_pre = gate(tape, &self.w_z, &self.u_z, &self.b_z, h_prev)?;
        let z = tape.sigmoid(&z_pre)?;
        let r_pre = gate(tape, &self.w_r, &self.u_r, &self.b_r, h_prev)?;
        let r = tape.sigmoid(&r_pre)?;
        let rh = tape.mul(&r, h_prev)?;
        let cand_pre = gate(tape, &self.w_h, &self.u_h, &self.b_h, &rh)?;
        let cand = tape.tanh(&cand_pre)?;
        // h' = (1−z)⊙h + z⊙h̃, rewritten as h + z⊙(h̃−h)
        let delta = tape.sub(&cand, h_prev)?;
        let gated = tape.mul(&z, &delta)?;
        tape.add(h_prev, &gated)
    }
}

impl ParamVisitor for GruCell {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let n = &self.name;
        f(&format!("{n}.w_z"), &self.w_z);
        f(&format!("{n}.w_r"), &self.w_r);
        f(&format!("{n}.w_h"), &self.w_h);
        f(&format!("{n}.u_z"), &self.u_z);
        f(&format!("{n}.u_r"), &self.u_r);
        f(&format!("{n}.u_h"), &self.u_h);
        f(&format!("{n}.b_z"), &self.b_z);
        f(&format!("{n}.b_r"), &self.b_r);
        f(&format!("{n}.b_h"), &self.b_h);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let n = self.name.clone();
        f(&format!("{n}.w_z"), &mut self.w_z);
        f(&format!("{n}.w_r"), &mut self.w_r);
        f(&format!("{n}.w_h"), &mut self.w_h);
        f(&format!("{n}.u_z"), &mut self.u_z);
        f(&format!("{n}.u_r"), &mut self.u_r);
        f(&format!("{n}.u_h"), &mut self.u_h);
        f(&format!("{n}.b_z"), &mut self.b_z);
        f(&format!("{n}.b_r"), &mut self.b_r);
        f(&format!("{n}.b_h"), &mut self.b_h);
    }
}

/// Two GRUs scanning a sequence in opposite directions.
///
/// The padding mask must be suffix-form. Hidden state does not update
/// across masked steps, and masked steps emit zeros, so appending padding
/// never changes the outputs at real steps.
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

impl BiGru {
    pub fn new(name: impl Into<String>, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let name = name.into();
        BiGru {
            fwd: GruCell::new(format!("{name}.fwd"), in_dim, hidden, rng),
            bwd: GruCell::new(format!("{name}.bwd"), in_dim, hidden, rng),
        }
    }

    /// x: [batch, steps, in], mask: [batch, steps] -> [batch, steps, 2*hidden].
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, mask: &Tensor) -> Result<Tensor, TensorError> {
        mask_lengths(mask)?;
        let (batch, steps) = (x.shape()[0], x.shape()[1]);
        let hidden = self.fwd.hidden();

        let fwd_states = self.scan(tape, &self.fwd, x, mask, (0..steps).collect())?;
        let bwd_states = self.scan(tape, &self.bwd, x, mask, (0..steps).rev().collect())?;

        let mut per_step = Vec::with_capacity(steps);
        for t in 0..steps {
            per_step.push(tape.concat_last(&[&fwd_states[t], &bwd_states[t]])?);
        }
        let refs: Vec<&Tensor> = per_step.iter().collect();
        let stacked = tape.stack_time(&refs)?;
        debug_assert_eq!(stacked.shape(), &[batch, steps, 2 * hidden]);
        tape.scale_steps(&stacked, mask)
    }

    /// Runs one direction over the given step order, freezing the hidden
    /// state across masked steps. Returns states indexed by absolute step.
    fn scan(
        &self,
        tape: &mut Tape,
        cell: &GruCell,
        x: &Tensor,
        mask: &Tensor,
        order: Vec<usize>,
    ) -> Result<Vec<Tensor>, TensorError> {
        let (batch, steps) = (x.shape()[0], x.shape()[1]);
        let hidden = cell.hidden();
        let handles = cell.watch(tape);
        let mut h = tape.constant(&Tensor::zeros(vec![batch, hidden]));
        let mut states: Vec<Option<Tensor>> = vec![None; steps];
        for &t in &order {
            let x_t = tape.select_time(x, t)?;
            let cand = handles.step(tape, &x_t, &h)?;
            // h ← h + m_t ⊙ (cand − h): frozen where the step is masked.
            let mut gate = vec![0.0f32; batch * hidden];
            for b in 0..batch {
                let m = mask.at2(b, t);
                gate[b * hidden..(b + 1) * hidden].fill(m);
            }
            let gate = tape.constant(&Tensor::new(vec![batch, hidden], gate).unwrap());
            let delta = tape.sub(&cand, &h)?;
            let masked_delta = tape.mul(&gate, &delta)?;
            h = tape.add(&h, &masked_delta)?;
            states[t] = Some(h.clone());
        }
        Ok(states.into_iter().map(|s| s.unwrap()).collect())
    }
}

impl ParamVisitor for BiGru {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fwd.visit(f);
        self.bwd.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fwd.visit_mut(f);
        self.bwd.visit_mut(f);
    }
}

// ── GLU convolution ─────────────────────────────────────────────────

/// Paired 1D convolutions feeding a gated linear unit: out = A ⊙ σ(B).
pub struct GluConvBlock {
    pub name: String,
    pub kernel_a: Tensor,
    pub kernel_b: Tensor,
    pub bias_a: Tensor,
    pub bias_b: Tensor,
}

impl GluConvBlock {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = width * in_dim;
        GluConvBlock {
            name: name.into(),
            kernel_a: init_weights(rng, vec![width, in_dim, out_dim], fan_in),
            kernel_b: init_weights(rng, vec![width, in_dim, out_dim], fan_in),
            bias_a: Tensor::zeros(vec![out_dim]),
            bias_b: Tensor::zeros(vec![out_dim]),
        }
    }

    /// Runs the fused pair kernel; output is bitwise-identical to two
    /// separate convolutions gated as A ⊙ σ(B).
    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        let ka = tape.watch(&format!("{}.kernel_a", self.name), &self.kernel_a);
        let kb = tape.watch(&format!("{}.kernel_b", self.name), &self.kernel_b);
        let ba = tape.watch(&format!("{}.bias_a", self.name), &self.bias_a);
        let bb = tape.watch(&format!("{}.bias_b", self.name), &self.bias_b);
        tape.glu_conv1d(x, &ka, &ba, &kb, &bb)
    }
}

impl ParamVisitor for GluConvBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.kernel_a", self.name), &self.kernel_a);
        f(&format!("{}.kernel_b", self.name), &self.kernel_b);
        f(&format!("{}.bias_a", self.name), &self.bias_a);
        f(&format!("{}.bias_b", self.name), &self.bias_b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let n = self.name.clone();
        f(&format!("{n}.kernel_a"), &mut self.kernel_a);
        f(&format!("{n}.kernel_b"), &mut self.kernel_b);
        f(&format!("{n}.bias_a"), &mut self.bias_a);
        f(&format!("{n}.bias_b"), &mut self.bias_b);
    }
}

// ── Attention ───────────────────────────────────────────────────────

/// Two-layer feedforward scorer: one scalar logit per position.
pub struct AttentionFfn {
    pub name: String,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl AttentionFfn {
    pub fn new(name: impl Into<String>, in_dim: usize, attn_hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionFfn {
            name: name.into(),
            w1: init_weights(rng, vec![in_dim, attn_hidden], in_dim),
            b1: Tensor::zeros(vec![attn_hidden]),
            w2: init_weights(rng, vec![attn_hidden, 1], attn_hidden),
            b2: Tensor::zeros(vec![1]),
        }
    }

    /// Scores rank-2 input [rows, in] -> [rows, 1].
    pub fn score(&self, tape: &mut Tape, u: &Tensor) -> Result<Tensor, TensorError> {
        let w1 = tape.watch(&format!("{}.w1", self.name), &self.w1);
        let b1 = tape.watch(&format!("{}.b1", self.name), &self.b1);
        let w2 = tape.watch(&format!("{}.w2", self.name), &self.w2);
        let b2 = tape.watch(&format!("{}.b2", self.name), &self.b2);
        let h = tape.matmul(u, &w1)?;
        let h = tape.add_bias(&h, &b1)?;
        let h = tape.tanh(&h)?;
        let s = tape.matmul(&h, &w2)?;
        tape.add_bias(&s, &b2)
    }
}

impl ParamVisitor for AttentionFfn {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.w1", self.name), &self.w1);
        f(&format!("{}.b1", self.name), &self.b1);
        f(&format!("{}.w2", self.name), &self.w2);
        f(&format!("{}.b2", self.name), &self.b2);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let n = self.name.clone();
        f(&format!("{n}.w1"), &mut self.w1);
        f(&format!("{n}.b1"), &mut self.b1);
        f(&format!("{n}.w2"), &mut self.w2);
        f(&format!("{n}.b2"), &mut self.b2);
    }
}

/// Attention over time: a trainable projection brings the embedded input to
/// the state width, the elementwise product feeds the two-layer scorer, and
/// the softmax-weighted states form the context vector.
pub struct StreamAttention {
    pub proj: Dense,
    pub ffn: AttentionFfn,
}

impl StreamAttention {
    pub fn new(
        name: impl Into<String>,
        embed_dim: usize,
        state_dim: usize,
        attn_hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let name = name.into();
        StreamAttention {
            proj: Dense::new(format!("{name}.proj"), embed_dim, state_dim, Activation::None, rng),
            ffn: AttentionFfn::new(format!("{name}.ffn"), state_dim, attn_hidden, rng),
        }
    }

    /// embedded: [b,t,e], states: [b,t,h], mask: [b,t] ->
    /// (context [b,h], weights [b,t]).
    ///
    /// Per step: u_t = proj(embedded_t) ⊙ states_t, logit_t = ffn(u_t),
    /// weights = softmax over unmasked steps, context = Σ_t w_t · states_t.
    /// Masked steps carry weight exactly 0.
    pub fn context(
        &self,
        tape: &mut Tape,
        embedded: &Tensor,
        states: &Tensor,
        mask: &Tensor,
        policy: EmptyRowPolicy,
    ) -> Result<(Tensor, Tensor), TensorError> {
        if embedded.rank() != 3 || states.rank() != 3 || embedded.shape()[..2] != states.shape()[..2] {
            return Err(TensorError::ShapeMismatch {
                op: "attention_context",
                left: embedded.shape().to_vec(),
                right: states.shape().to_vec(),
            });
        }
        let (batch, steps) = (states.shape()[0], states.shape()[1]);
        let (e_dim, h_dim) = (embedded.shape()[2], states.shape()[2]);
        let flat_emb = tape.reshape(embedded, vec![batch * steps, e_dim])?;
        let projected = self.proj.forward(tape, &flat_emb)?;
        let projected = tape.reshape(&projected, vec![batch, steps, h_dim])?;
        let u = tape.mul(&projected, states)?;
        let u_flat = tape.reshape(&u, vec![batch * steps, h_dim])?;
        let logits = self.ffn.score(tape, &u_flat)?;
        let logits = tape.reshape(&logits, vec![batch, steps])?;
        let weights = tape.masked_softmax_time(&logits, mask, policy)?;
        let context = tape.attend_time(&weights, states)?;
        Ok((context, weights))
    }

    /// Scalar gate for an already-reduced stream: u = proj(pooled_embed) ⊙
    /// reduced, gate = σ(ffn(u)), context = gate · reduced.
    pub fn gate_reduced(
        &self,
        tape: &mut Tape,
        pooled_embed: &Tensor,
        reduced: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let projected = self.proj.forward(tape, pooled_embed)?;
        let u = tape.mul(&projected, reduced)?;
        let score = self.ffn.score(tape, &u)?;
        let gate = tape.sigmoid(&score)?;
        let gate = tape.reshape(&gate, vec![reduced.shape()[0]])?;
        tape.scale_rows(reduced, &gate)
    }
}

impl ParamVisitor for StreamAttention {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.proj.visit(f);
        self.ffn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.proj.visit_mut(f);
        self.ffn.visit_mut(f);
    }
}

// ── Time reduction ──────────────────────────────────────────────────

/// How a [b,t,f] sequence collapses to [b,f].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ReduceMode {
    /// Plain sum over unmasked steps.
    #[serde(rename = "sum")]
    Sum,
    /// Fixed normalized ramp w_t = t / Σ_{s=1..L} s: later steps weigh more,
    /// weights sum to 1 over the unmasked prefix.
    #[serde(rename = "wsum")]
    WeightedSum,
    /// The last unmasked step.
    #[serde(rename = "last")]
    LastStep,
}

impl ReduceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReduceMode::Sum => "sum",
            ReduceMode::WeightedSum => "wsum",
            ReduceMode::LastStep => "last",
        }
    }
}

/// Per-(batch, step) combination coefficients for a reduction mode.
pub fn reduce_coeffs(
    mode: ReduceMode,
    mask: &Tensor,
    policy: EmptyRowPolicy,
) -> Result<Vec<f32>, TensorError> {
    let lengths = mask_lengths(mask)?;
    let (batch, steps) = (mask.shape()[0], mask.shape()[1]);
    let mut coeff = vec![0.0f32; batch * steps];
    for (b, &len) in lengths.iter().enumerate() {
        if len == 0 {
            if policy == EmptyRowPolicy::Reject {
                return Err(TensorError::AllStepsMasked { row: b });
            }
            continue;
        }
        match mode {
            ReduceMode::Sum => {
                for t in 0..len {
                    coeff[b * steps + t] = 1.0;
                }
            }
            ReduceMode::WeightedSum => {
                let denom = (len * (len + 1) / 2) as f32;
                for t in 0..len {
                    coeff[b * steps + t] = (t + 1) as f32 / denom;
                }
            }
            ReduceMode::LastStep => {
                coeff[b * steps + len - 1] = 1.0;
            }
        }
    }
    Ok(coeff)
}

/// Collapse the time axis of [b,t,f] with the given mode.
pub fn reduce_time(
    tape: &mut Tape,
    x: &Tensor,
    mode: ReduceMode,
    mask: &Tensor,
    policy: EmptyRowPolicy,
) -> Result<Tensor, TensorError> {
    let coeff = reduce_coeffs(mode, mask, policy)?;
    reduce_time_with_coeffs(tape, x, &coeff)
}

/// The combination seam behind `reduce_time`: out[b,f] = Σ_t c[b,t]·x[b,t,f].
pub fn reduce_time_with_coeffs(
    tape: &mut Tape,
    x: &Tensor,
    coeff: &[f32],
) -> Result<Tensor, TensorError> {
    tape.combine_time(x, coeff)
}
