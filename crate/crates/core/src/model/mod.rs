//! The two sequence-classification architectures.
//!
//! Four input streams (diagnosis code+duration, visit kind, medication
//! code+duration, medication type) each produce a context vector; the four
//! contexts are concatenated and pushed through two dense layers into a
//! sigmoid binary head and a softmax three-class head trained jointly.
//!
//! The recurrent variant runs a bidirectional GRU per stream and attends
//! over its states. The convolutional variant runs a stack of GLU
//! convolution blocks, collapses time with a configurable reduction, and
//! gates the reduced vector with the same two-layer scorer.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EmptyRowPolicy, Tape, Tensor, TensorError};
use crate::data::{Batch, Vocabs, FIXED_STREAM_VOCAB};
use crate::layers::{
    joint_embed, reduce_time, Activation, BiGru, Dense, EmbeddingTable, GluConvBlock,
    ParamVisitor, ReduceMode, StreamAttention,
};

#[derive(Debug)]
pub enum ModelError {
    Config(String),
    Tensor(TensorError),
    /// A label is out of range or inconsistent across the two tasks.
    Label { row: usize, message: String },
    CheckpointIo {
        path: String,
        source: std::io::Error,
    },
    CheckpointFormat { message: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "invalid model config: {}", m),
            Self::Tensor(e) => write!(f, "{}", e),
            Self::Label { row, message } => write!(f, "label at row {}: {}", row, message),
            Self::CheckpointIo { path, source } => write!(f, "{}: {}", path, source),
            Self::CheckpointFormat { message } => write!(f, "bad checkpoint: {}", message),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Rnn,
    Conv,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::Rnn => "rnn",
            Architecture::Conv => "conv",
        }
    }
}

/// Every architectural and training-relevant width, serializable so a
/// checkpoint can rebuild the exact model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Time reduction for the convolutional variant; must be absent for rnn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<ReduceMode>,
    pub diag_code_embed: usize,
    pub diag_kind_embed: usize,
    pub med_code_embed: usize,
    pub med_type_embed: usize,
    /// GRU hidden width (per direction) or conv filter count, code streams.
    pub hidden: usize,
    /// Same for the kind/type streams, independently sized.
    pub aux_hidden: usize,
    pub conv_width: usize,
    pub conv_layers: usize,
    pub attn_hidden: usize,
    pub dense1: usize,
    pub dense2: usize,
    pub max_diag_len: usize,
    pub max_med_len: usize,
    pub loss_weight_binary: f32,
    pub loss_weight_multi: f32,
    /// Realized vocabulary sizes, padding and unknown slots included.
    pub diag_vocab: usize,
    pub med_vocab: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Baseline widths shared by both architectures; vocabulary sizes are
    /// filled from the training split via `for_vocabs`.
    pub fn defaults(architecture: Architecture) -> Self {
        ModelConfig {
            architecture,
            reduction: match architecture {
                Architecture::Rnn => None,
                Architecture::Conv => Some(ReduceMode::WeightedSum),
            },
            diag_code_embed: 16,
            diag_kind_embed: 4,
            med_code_embed: 16,
            med_type_embed: 4,
            hidden: 32,
            aux_hidden: 16,
            conv_width: 3,
            conv_layers: 2,
            attn_hidden: 16,
            dense1: 64,
            dense2: 32,
            max_diag_len: 32,
            max_med_len: 24,
            loss_weight_binary: 1.0,
            loss_weight_multi: 1.0,
            diag_vocab: 0,
            med_vocab: 0,
            seed: 0,
        }
    }

    pub fn for_vocabs(mut self, vocabs: &Vocabs) -> Self {
        self.diag_vocab = vocabs.diag.size();
        self.med_vocab = vocabs.med.size();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match (self.architecture, self.reduction) {
            (Architecture::Rnn, Some(_)) => {
                return Err(ModelError::Config(
                    "reduction mode applies only to the conv architecture".into(),
                ))
            }
            (Architecture::Conv, None) => {
                return Err(ModelError::Config(
                    "conv architecture requires a reduction mode".into(),
                ))
            }
            _ => {}
        }
        let widths = [
            self.diag_code_embed,
            self.diag_kind_embed,
            self.med_code_embed,
            self.med_type_embed,
            self.hidden,
            self.aux_hidden,
            self.attn_hidden,
            self.dense1,
            self.dense2,
            self.max_diag_len,
            self.max_med_len,
            self.conv_layers,
        ];
        if widths.iter().any(|&w| w == 0) {
            return Err(ModelError::Config("every width must be at least 1".into()));
        }
        if self.conv_width % 2 == 0 {
            return Err(ModelError::Config(format!(
                "conv kernel width {} must be odd",
                self.conv_width
            )));
        }
        if self.diag_vocab < 2 || self.med_vocab < 2 {
            return Err(ModelError::Config(
                "vocabulary sizes unset; build the config from vocabularies".into(),
            ));
        }
        Ok(())
    }
}

// ── Streams ─────────────────────────────────────────────────────────

enum StreamBody {
    Rnn(BiGru),
    Conv(Vec<GluConvBlock>),
}

/// One input stream: embedding, sequence body, attention.
struct Stream {
    embed: EmbeddingTable,
    body: StreamBody,
    attn: StreamAttention,
    uses_duration: bool,
    reduction: Option<ReduceMode>,
}

impl Stream {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        cfg: &ModelConfig,
        vocab_size: usize,
        embed_dim: usize,
        width: usize,
        uses_duration: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input_dim = embed_dim + usize::from(uses_duration);
        let embed = EmbeddingTable::new(format!("{name}.embed"), vocab_size, embed_dim, rng);
        let (body, state_dim) = match cfg.architecture {
            Architecture::Rnn => (
                StreamBody::Rnn(BiGru::new(format!("{name}.gru"), input_dim, width, rng)),
                2 * width,
            ),
            Architecture::Conv => {
                let mut blocks = Vec::with_capacity(cfg.conv_layers);
                let mut in_dim = input_dim;
                for layer in 0..cfg.conv_layers {
                    blocks.push(GluConvBlock::new(
                        format!("{name}.glu{layer}"),
                        cfg.conv_width,
                        in_dim,
                        width,
                        rng,
                    ));
                    in_dim = width;
                }
                (StreamBody::Conv(blocks), width)
            }
        };
        let attn = StreamAttention::new(format!("{name}.attn"), input_dim, state_dim, cfg.attn_hidden, rng);
        Stream {
            embed,
            body,
            attn,
            uses_duration,
            reduction: cfg.reduction,
        }
    }

    fn context_width(&self) -> usize {
        match &self.body {
            StreamBody::Rnn(gru) => 2 * gru.fwd.hidden(),
            StreamBody::Conv(blocks) => blocks.last().unwrap().bias_a.len(),
        }
    }

    /// indices [b*t], durations [b,t,1] when the stream uses them,
    /// mask [b,t] -> context [b, width].
    fn forward(
        &self,
        tape: &mut Tape,
        indices: &[u32],
        duration: Option<&Tensor>,
        mask: &Tensor,
        policy: EmptyRowPolicy,
    ) -> Result<Tensor, ModelError> {
        let (batch, steps) = (mask.shape()[0], mask.shape()[1]);
        let embedded = self.embed.forward(tape, indices, batch, steps)?;
        let embedded = match (self.uses_duration, duration) {
            (true, Some(dur)) => {
                let dur = tape.constant(dur);
                joint_embed(tape, &embedded, &dur)?
            }
            (false, _) => embedded,
            (true, None) => {
                return Err(ModelError::Config(
                    "stream expects a duration channel".into(),
                ))
            }
        };
        match &self.body {
            StreamBody::Rnn(gru) => {
                let states = gru.forward(tape, &embedded, mask)?;
                let (context, _) = self.attn.context(tape, &embedded, &states, mask, policy)?;
                Ok(context)
            }
            StreamBody::Conv(blocks) => {
                let mut x = embedded.clone();
                for block in blocks {
                    let y = block.forward(tape, &x)?;
                    // Re-zero padded steps so deeper layers and longer pad
                    // suffixes never leak bias terms into real steps.
                    x = tape.scale_steps(&y, mask)?;
                }
                let mode = self.reduction.expect("conv stream carries a reduction mode");
                let reduced = reduce_time(tape, &x, mode, mask, policy)?;
                let pooled = reduce_time(tape, &embedded, mode, mask, policy)?;
                Ok(self.attn.gate_reduced(tape, &pooled, &reduced)?)
            }
        }
    }
}

impl ParamVisitor for Stream {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.embed.visit(f);
        match &self.body {
            StreamBody::Rnn(gru) => gru.visit(f),
            StreamBody::Conv(blocks) => blocks.iter().for_each(|b| b.visit(f)),
        }
        self.attn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.embed.visit_mut(f);
        match &mut self.body {
            StreamBody::Rnn(gru) => gru.visit_mut(f),
            StreamBody::Conv(blocks) => blocks.iter_mut().for_each(|b| b.visit_mut(f)),
        }
        self.attn.visit_mut(f);
    }
}

// ── Model ───────────────────────────────────────────────────────────

pub struct MehpanModel {
    pub cfg: ModelConfig,
    diag_code: Stream,
    diag_kind: Stream,
    med_code: Stream,
    med_type: Stream,
    trunk1: Dense,
    trunk2: Dense,
    head_binary: Dense,
    head_multi: Dense,
}

impl MehpanModel {
    /// Builds a model with seeded initialization, deterministic per config.
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let diag_code = Stream::new("diag_code", &cfg, cfg.diag_vocab, cfg.diag_code_embed, cfg.hidden, true, &mut rng);
        let diag_kind = Stream::new("diag_kind", &cfg, FIXED_STREAM_VOCAB, cfg.diag_kind_embed, cfg.aux_hidden, false, &mut rng);
        let med_code = Stream::new("med_code", &cfg, cfg.med_vocab, cfg.med_code_embed, cfg.hidden, true, &mut rng);
        let med_type = Stream::new("med_type", &cfg, FIXED_STREAM_VOCAB, cfg.med_type_embed, cfg.aux_hidden, false, &mut rng);
        let context_width = diag_code.context_width()
            + diag_kind.context_width()
            + med_code.context_width()
            + med_type.context_width();
        let trunk1 = Dense::new("trunk1", context_width, cfg.dense1, Activation::Tanh, &mut rng);
        let trunk2 = Dense::new("trunk2", cfg.dense1, cfg.dense2, Activation::Tanh, &mut rng);
        let head_binary = Dense::new("head_binary", cfg.dense2, 1, Activation::None, &mut rng);
        let head_multi = Dense::new("head_multi", cfg.dense2, 3, Activation::None, &mut rng);
        let model = MehpanModel {
            cfg,
            diag_code,
            diag_kind,
            med_code,
            med_type,
            trunk1,
            trunk2,
            head_binary,
            head_multi,
        };
        model.assert_unique_names();
        Ok(model)
    }

    fn assert_unique_names(&self) {
        let mut names = std::collections::HashSet::new();
        self.visit(&mut |name, _| {
            assert!(names.insert(name.to_string()), "duplicate parameter {name}");
        });
    }

    pub fn expect_architecture(&self, arch: Architecture) -> Result<(), ModelError> {
        if self.cfg.architecture != arch {
            return Err(ModelError::Config(format!(
                "checkpoint holds a {} model, expected {}",
                self.cfg.architecture.as_str(),
                arch.as_str()
            )));
        }
        Ok(())
    }

    /// Forward pass on a tape: (p_binary [b] in (0,1), p_multi [b,3] rows
    /// summing to 1). Patients with no medication events contribute zero
    /// context for the medication streams.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<(Tensor, Tensor), ModelError> {
        let c1 = self.diag_code.forward(
            tape,
            &batch.diag_code_idx.data,
            Some(&batch.diag_dur),
            &batch.diag_mask,
            EmptyRowPolicy::Reject,
        )?;
        let c2 = self.diag_kind.forward(
            tape,
            &batch.diag_kind_idx.data,
            None,
            &batch.diag_mask,
            EmptyRowPolicy::Reject,
        )?;
        let c3 = self.med_code.forward(
            tape,
            &batch.med_code_idx.data,
            Some(&batch.med_dur),
            &batch.med_mask,
            EmptyRowPolicy::Zeros,
        )?;
        let c4 = self.med_type.forward(
            tape,
            &batch.med_type_idx.data,
            None,
            &batch.med_mask,
            EmptyRowPolicy::Zeros,
        )?;
        let contexts = tape.concat_last(&[&c1, &c2, &c3, &c4])?;
        let h1 = self.trunk1.forward(tape, &contexts)?;
        let h2 = self.trunk2.forward(tape, &h1)?;
        let bin_logit = self.head_binary.forward(tape, &h2)?;
        let bin_prob = tape.sigmoid(&bin_logit)?;
        let p_binary = tape.reshape(&bin_prob, vec![batch.len()])?;
        let multi_logits = self.head_multi.forward(tape, &h2)?;
        let p_multi = tape.softmax(&multi_logits, 1)?;
        Ok((p_binary, p_multi))
    }

    /// Inference convenience: runs the forward pass on a private tape.
    pub fn predict(&self, batch: &Batch) -> Result<(Vec<f32>, Vec<[f32; 3]>), ModelError> {
        let mut tape = Tape::new();
        let (pb, pm) = self.forward(&mut tape, batch)?;
        let multi = pm
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok((pb.data().to_vec(), multi))
    }

    /// Moves the gradients accumulated on a finished tape into each
    /// parameter's grad buffer, adding when one is already present.
    pub fn collect_grads(&mut self, tape: &mut Tape) {
        self.visit_mut(&mut |name, param| {
            if let Some(g) = tape.take_grad_by_name(name) {
                match &mut param.grad {
                    Some(buf) => {
                        for (o, d) in buf.iter_mut().zip(g) {
                            *o += d;
                        }
                    }
                    None => param.grad = Some(g),
                }
            }
        });
    }

    pub fn clear_grads(&mut self) {
        self.visit_mut(&mut |_, param| param.grad = None);
    }

    /// Stable-order list of parameter names.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _| names.push(name.to_string()));
        names
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }
}

impl ParamVisitor for MehpanModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.diag_code.visit(f);
        self.diag_kind.visit(f);
        self.med_code.visit(f);
        self.med_type.visit(f);
        self.trunk1.visit(f);
        self.trunk2.visit(f);
        self.head_binary.visit(f);
        self.head_multi.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.diag_code.visit_mut(f);
        self.diag_kind.visit_mut(f);
        self.med_code.visit_mut(f);
        self.med_type.visit_mut(f);
        self.trunk1.visit_mut(f);
        self.trunk2.visit_mut(f);
        self.head_binary.visit_mut(f);
        self.head_multi.visit_mut(f);
    }
}

// ── Loss ────────────────────────────────────────────────────────────

const PROB_EPS: f32 = 1e-7;

/// Weighted sum of binary and three-class cross-entropy, averaged over the
/// batch. Probabilities are clamped into [1e-7, 1−1e-7] first. Rejects
/// out-of-range labels and binary/multi inconsistencies.
pub fn multi_task_loss(
    tape: &mut Tape,
    p_binary: &Tensor,
    p_multi: &Tensor,
    y_binary: &[f32],
    y_multi: &[u8],
    weights: (f32, f32),
) -> Result<Tensor, ModelError> {
    let n = y_binary.len();
    if p_binary.shape() != [n] || p_multi.shape() != [n, 3] || y_multi.len() != n {
        return Err(ModelError::Config(format!(
            "loss shape mismatch: p_binary {:?}, p_multi {:?}, {} labels",
            p_binary.shape(),
            p_multi.shape(),
            n
        )));
    }
    for (row, (&yb, &ym)) in y_binary.iter().zip(y_multi).enumerate() {
        if ym > 2 {
            return Err(ModelError::Label {
                row,
                message: format!("multi-class label {} out of range", ym),
            });
        }
        if yb != 0.0 && yb != 1.0 {
            return Err(ModelError::Label {
                row,
                message: format!("binary label {} must be 0 or 1", yb),
            });
        }
        if (yb == 1.0) != (ym != 0) {
            return Err(ModelError::Label {
                row,
                message: format!("binary label {} inconsistent with multi-class label {}", yb, ym),
            });
        }
    }

    // Binary cross-entropy on the clamped probabilities.
    let pb = tape.max_scalar(p_binary, PROB_EPS)?;
    let pb = tape.min_scalar(&pb, 1.0 - PROB_EPS)?;
    let y = tape.constant(&Tensor::from_slice(y_binary));
    let ones = tape.constant(&Tensor::full(vec![n], 1.0));
    let one_minus_y: Vec<f32> = y_binary.iter().map(|v| 1.0 - v).collect();
    let one_minus_y = tape.constant(&Tensor::from_slice(&one_minus_y));
    let log_p = tape.log(&pb)?;
    let pos_term = tape.mul(&y, &log_p)?;
    let one_minus_p = tape.sub(&ones, &pb)?;
    let log_q = tape.log(&one_minus_p)?;
    let neg_term = tape.mul(&one_minus_y, &log_q)?;
    let per_row = tape.add(&pos_term, &neg_term)?;
    let bce_sum = tape.sum_all(&per_row)?;
    let bce = tape.scale(&bce_sum, -1.0 / n as f32)?;

    // Categorical cross-entropy: select the true-class probability.
    let mut onehot = vec![0.0f32; n * 3];
    for (row, &ym) in y_multi.iter().enumerate() {
        onehot[row * 3 + ym as usize] = 1.0;
    }
    let onehot = tape.constant(&Tensor::new(vec![n, 3], onehot).unwrap());
    let picked = tape.mul(p_multi, &onehot)?;
    let p_true = tape.sum_last(&picked)?;
    let p_true = tape.max_scalar(&p_true, PROB_EPS)?;
    let p_true = tape.min_scalar(&p_true, 1.0 - PROB_EPS)?;
    let log_true = tape.log(&p_true)?;
    let cce_sum = tape.sum_all(&log_true)?;
    let cce = tape.scale(&cce_sum, -1.0 / n as f32)?;

    let wb = tape.scale(&bce, weights.0)?;
    let wm = tape.scale(&cce, weights.1)?;
    Ok(tape.add(&wb, &wm)?)
}
