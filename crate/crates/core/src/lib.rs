//! Sequence classification of symbolic medical histories.
//!
//! Two multi-stream attention architectures — one built on bidirectional
//! GRUs, one on 1D convolutions with gated linear units — predict vascular
//! disease onset from parallel diagnosis and medication event sequences.
//! Everything runs on an in-crate reverse-mode autodiff tape; the crate also
//! ships the feature transforms, a synthetic record generator with a planted
//! signal, and a training/evaluation harness with a ten-split protocol.

pub mod autodiff;
pub mod baseline;
pub mod data;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod train;

pub use autodiff::{Tape, Tensor, TensorError};
pub use data::{Batch, PatientHistory, SynthConfig, Vocab, Vocabs};
pub use layers::ReduceMode;
pub use model::{Architecture, MehpanModel, ModelConfig};
pub use train::{AdamState, TrainConfig, TrainLog};
