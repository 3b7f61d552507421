//! Adam optimizer and the mini-batch training loop.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{make_batch, DataError, PatientHistory, Vocabs};
use crate::model::{multi_task_loss, MehpanModel, ModelError};
use crate::layers::ParamVisitor;

#[derive(Debug)]
pub enum TrainError {
    EmptyTrainingSet,
    BatchLargerThanData { batch: usize, data: usize },
    Model(ModelError),
    Data(DataError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyTrainingSet => write!(f, "empty training set"),
            Self::BatchLargerThanData { batch, data } => {
                write!(f, "batch size {} exceeds {} training records", batch, data)
            }
            Self::Model(e) => write!(f, "{}", e),
            Self::Data(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}

// ── Adam ────────────────────────────────────────────────────────────

struct AdamSlot {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Bias-corrected Adam with per-parameter moment buffers keyed by name.
pub struct AdamState {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u64,
    slots: HashMap<String, AdamSlot>,
}

impl AdamState {
    pub fn new(learning_rate: f32) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            slots: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One in-place update over every parameter whose grad is populated.
    /// Gradients are cleared afterwards.
    pub fn apply(&mut self, model: &mut MehpanModel) {
        self.step += 1;
        let t = self.step as i32;
        let lr_t = self.learning_rate * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let slots = &mut self.slots;
        model.visit_mut(&mut |name, param| {
            let Some(grad) = param.grad.take() else { return };
            let n = param.len();
            assert_eq!(grad.len(), n, "gradient shape mismatch for {name}");
            let slot = slots.entry(name.to_string()).or_insert_with(|| AdamSlot {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            assert_eq!(slot.m.len(), n, "moment shape mismatch for {name}");
            let data = param.data_mut();
            for i in 0..n {
                let g = grad[i];
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
                data[i] -= lr_t * slot.m[i] / (slot.v[i].sqrt() + eps);
            }
        });
    }
}

// ── Training loop ───────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Per-epoch loss and wall-time log of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Trains in place for `cfg.epochs` epochs of seeded shuffled mini-batches.
pub fn train(
    model: &mut MehpanModel,
    data: &[PatientHistory],
    vocabs: &Vocabs,
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        log.epochs.push(train_epoch(model, &mut adam, data, vocabs, cfg, epoch)?);
    }
    Ok(log)
}

/// One epoch with the shuffle stream derived from (seed, epoch), so driving
/// epochs one call at a time reproduces a single longer run exactly.
pub fn train_epoch(
    model: &mut MehpanModel,
    adam: &mut AdamState,
    data: &[PatientHistory],
    vocabs: &Vocabs,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if cfg.batch_size == 0 || cfg.batch_size > data.len() {
        return Err(TrainError::BatchLargerThanData {
            batch: cfg.batch_size,
            data: data.len(),
        });
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);

    let weights = (model.cfg.loss_weight_binary, model.cfg.loss_weight_multi);
    let (max_diag, max_med) = (model.cfg.max_diag_len, model.cfg.max_med_len);
    let mut total_loss = 0.0f64;
    for chunk in order.chunks(cfg.batch_size) {
        let patients: Vec<&PatientHistory> = chunk.iter().map(|&i| &data[i]).collect();
        let batch = make_batch(&patients, vocabs, max_diag, max_med)?;
        let mut tape = Tape::new();
        let (pb, pm) = model.forward(&mut tape, &batch)?;
        let loss = multi_task_loss(&mut tape, &pb, &pm, &batch.y_binary, &batch.y_multi, weights)?;
        tape.backward(&loss).map_err(ModelError::Tensor)?;
        model.collect_grads(&mut tape);
        adam.apply(model);
        total_loss += loss.item() as f64 * batch.len() as f64;
    }
    Ok(EpochStats {
        epoch,
        mean_loss: total_loss / data.len() as f64,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Scores every patient with the binary head, batching for throughput.
pub fn score_all(
    model: &MehpanModel,
    data: &[&PatientHistory],
    vocabs: &Vocabs,
    batch_size: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut scores = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk, vocabs, model.cfg.max_diag_len, model.cfg.max_med_len)?;
        let (pb, _) = model.predict(&batch)?;
        scores.extend(pb.iter().map(|&v| v as f64));
    }
    Ok(scores)
}
