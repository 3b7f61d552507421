//! Patient-history data model, feature transforms, vocabularies, padding
//! and batching, splits, file I/O, and the synthetic record generator.

mod io;
mod synth;

pub use io::{read_records, write_records};
pub use synth::{generate_synthetic, is_marker, SynthConfig};

pub(crate) use io::atomic_write;

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

/// Errors from record parsing, validation, vocabulary and split handling.
#[derive(Debug)]
pub enum DataError {
    Io {
        path: String,
        source: std::io::Error,
    },
    /// A record line failed to parse; lines are 1-based.
    Parse { line: usize, message: String },
    /// A record violates a structural invariant of the named field.
    Invariant { field: &'static str, message: String },
    EmptyTrainingSet,
    /// Fewer than ten records cannot produce ten splits.
    TooSmallForSplits { len: usize },
    /// Stratification needs at least five members per class.
    ClassTooSmall { class: u8, count: usize },
    NegativePeriod { value: f64 },
    /// A batch cannot be built from zero patients.
    EmptyBatch,
    BadConfig { message: String },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io { path, source } => write!(f, "{}: {}", path, source),
            Self::Parse { line, message } => write!(f, "line {}: {}", line, message),
            Self::Invariant { field, message } => write!(f, "field {}: {}", field, message),
            Self::EmptyTrainingSet => write!(f, "empty training set"),
            Self::TooSmallForSplits { len } => {
                write!(f, "{} records, need at least 10 for the split protocol", len)
            }
            Self::ClassTooSmall { class, count } => {
                write!(f, "class {} has {} members, need at least 5 to stratify", class, count)
            }
            Self::NegativePeriod { value } => write!(f, "negative medication period {}", value),
            Self::EmptyBatch => write!(f, "cannot build a batch from zero patients"),
            Self::BadConfig { message } => write!(f, "invalid config: {}", message),
        }
    }
}

impl std::error::Error for DataError {}

// ── Record types ────────────────────────────────────────────────────

/// Hospital visit kind, stored as "O" / "I" / "E" on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VisitKind {
    #[serde(rename = "O")]
    Outpatient,
    #[serde(rename = "I")]
    Inpatient,
    #[serde(rename = "E")]
    Emergency,
}

impl VisitKind {
    /// Embedding index; 0 stays reserved for padding.
    pub fn index(self) -> u32 {
        match self {
            VisitKind::Outpatient => 1,
            VisitKind::Inpatient => 2,
            VisitKind::Emergency => 3,
        }
    }
}

/// Medication form, stored as "P" / "J" / "S" on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MedType {
    #[serde(rename = "P")]
    Pill,
    #[serde(rename = "J")]
    Injection,
    #[serde(rename = "S")]
    Sap,
}

impl MedType {
    pub fn index(self) -> u32 {
        match self {
            MedType::Pill => 1,
            MedType::Injection => 2,
            MedType::Sap => 3,
        }
    }
}

/// Fixed vocabulary size for the kind and type streams: three symbols plus
/// the padding index.
pub const FIXED_STREAM_VOCAB: usize = 4;

/// Three-way outcome label; 0 = no disease on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum LabelMulti {
    NoDisease,
    Cardiovascular,
    Cerebrovascular,
}

impl TryFrom<u8> for LabelMulti {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(LabelMulti::NoDisease),
            1 => Ok(LabelMulti::Cardiovascular),
            2 => Ok(LabelMulti::Cerebrovascular),
            other => Err(format!("label_multi must be 0, 1 or 2, got {}", other)),
        }
    }
}

impl From<LabelMulti> for u8 {
    fn from(l: LabelMulti) -> u8 {
        match l {
            LabelMulti::NoDisease => 0,
            LabelMulti::Cardiovascular => 1,
            LabelMulti::Cerebrovascular => 2,
        }
    }
}

/// One patient's diagnosis and medication event sequences plus labels.
/// The binary label is always derived from `label_multi`, never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientHistory {
    pub patient_id: String,
    pub diag_codes: Vec<String>,
    /// Visit dates as integer day offsets, nondecreasing.
    pub diag_dates: Vec<i64>,
    pub diag_kinds: Vec<VisitKind>,
    pub med_codes: Vec<String>,
    /// Prescription lengths in days, nonnegative.
    pub med_periods: Vec<i64>,
    pub med_types: Vec<MedType>,
    pub label_multi: LabelMulti,
}

impl PatientHistory {
    /// True when the patient has either vascular disease.
    pub fn label_binary(&self) -> bool {
        self.label_multi != LabelMulti::NoDisease
    }

    /// Checks the structural invariants, naming the offending field.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.diag_codes.len();
        if n == 0 {
            return Err(DataError::Invariant {
                field: "diag_codes",
                message: "diagnosis sequence must not be empty".into(),
            });
        }
        if self.diag_dates.len() != n {
            return Err(DataError::Invariant {
                field: "diag_dates",
                message: format!("length {} != diag_codes length {}", self.diag_dates.len(), n),
            });
        }
        if self.diag_kinds.len() != n {
            return Err(DataError::Invariant {
                field: "diag_kinds",
                message: format!("length {} != diag_codes length {}", self.diag_kinds.len(), n),
            });
        }
        if self.diag_dates.windows(2).any(|w| w[0] > w[1]) {
            return Err(DataError::Invariant {
                field: "diag_dates",
                message: "dates must be nondecreasing".into(),
            });
        }
        let m = self.med_codes.len();
        if self.med_periods.len() != m {
            return Err(DataError::Invariant {
                field: "med_periods",
                message: format!("length {} != med_codes length {}", self.med_periods.len(), m),
            });
        }
        if self.med_types.len() != m {
            return Err(DataError::Invariant {
                field: "med_types",
                message: format!("length {} != med_codes length {}", self.med_types.len(), m),
            });
        }
        if let Some(&p) = self.med_periods.iter().find(|&&p| p < 0) {
            return Err(DataError::Invariant {
                field: "med_periods",
                message: format!("negative period {}", p),
            });
        }
        Ok(())
    }
}

// ── Duration transforms ─────────────────────────────────────────────

/// Diagnosis recency feature: max(ln(T_last − T_i + 1), 1).
///
/// `dates` must be nondecreasing, so the log argument is at least 1 and the
/// result at least 1.
pub fn compute_diag_duration(dates: &[i64], i: usize) -> f64 {
    assert!(i < dates.len(), "diagnosis index out of range");
    let t_last = *dates.last().unwrap();
    let delta = t_last - dates[i];
    debug_assert!(delta >= 0, "dates must be nondecreasing");
    ((delta + 1) as f64).ln().max(1.0)
}

/// Medication duration feature: ln(period + 1), at least 0.
pub fn compute_med_duration(period_days: f64) -> Result<f64, DataError> {
    if period_days < 0.0 {
        return Err(DataError::NegativePeriod { value: period_days });
    }
    Ok((period_days + 1.0).ln())
}

// ── Vocabulary ──────────────────────────────────────────────────────

/// Token index map frozen after construction. Index 0 is padding, index 1
/// collects unknown tokens; real tokens start at 2 in first-seen order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;

impl Vocab {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocab {
            tokens: vec!["<pad>".to_string(), "<unk>".to_string()],
            index: HashMap::new(),
        };
        for tok in tokens {
            if !vocab.index.contains_key(tok) {
                vocab.index.insert(tok.to_string(), vocab.tokens.len() as u32);
                vocab.tokens.push(tok.to_string());
            }
        }
        vocab
    }

    /// Total index count, including the padding and unknown slots.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn encode(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn decode(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(|s| s.as_str())
    }
}

/// The diagnosis-code and medication-code vocabularies of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabs {
    pub diag: Vocab,
    pub med: Vocab,
}

/// Builds both vocabularies from the training split only.
pub fn build_vocab(train: &[PatientHistory]) -> Result<Vocabs, DataError> {
    if train.is_empty() {
        return Err(DataError::EmptyTrainingSet);
    }
    let diag = Vocab::from_tokens(
        train
            .iter()
            .flat_map(|p| p.diag_codes.iter().map(|s| s.as_str())),
    );
    let med = Vocab::from_tokens(
        train
            .iter()
            .flat_map(|p| p.med_codes.iter().map(|s| s.as_str())),
    );
    Ok(Vocabs { diag, med })
}

// ── Batch ───────────────────────────────────────────────────────────

/// Integer index grid [batch, steps], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMatrix {
    pub batch: usize,
    pub steps: usize,
    pub data: Vec<u32>,
}

impl IndexMatrix {
    pub fn at(&self, b: usize, t: usize) -> u32 {
        self.data[b * self.steps + t]
    }
}

/// Padded, index-encoded, masked tensor bundle for a set of patients.
/// Masks are suffix-zero; durations at masked positions are 0.
#[derive(Clone, Debug)]
pub struct Batch {
    pub diag_code_idx: IndexMatrix,
    pub diag_kind_idx: IndexMatrix,
    pub med_code_idx: IndexMatrix,
    pub med_type_idx: IndexMatrix,
    pub diag_dur: Tensor,
    pub med_dur: Tensor,
    pub diag_mask: Tensor,
    pub med_mask: Tensor,
    pub y_binary: Vec<f32>,
    pub y_multi: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y_binary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_binary.is_empty()
    }
}

/// Encodes and pads patients into a batch. Sequences longer than the
/// window keep their most recent events; shorter ones get suffix padding.
pub fn make_batch(
    patients: &[&PatientHistory],
    vocabs: &Vocabs,
    max_diag_len: usize,
    max_med_len: usize,
) -> Result<Batch, DataError> {
    assert!(max_diag_len >= 1 && max_med_len >= 1, "window lengths must be >= 1");
    if patients.is_empty() {
        return Err(DataError::EmptyBatch);
    }
    let b = patients.len();
    let (td, tm) = (max_diag_len, max_med_len);
    let mut diag_code = vec![PAD_INDEX; b * td];
    let mut diag_kind = vec![PAD_INDEX; b * td];
    let mut med_code = vec![PAD_INDEX; b * tm];
    let mut med_type = vec![PAD_INDEX; b * tm];
    let mut diag_dur = vec![0.0f32; b * td];
    let mut med_dur = vec![0.0f32; b * tm];
    let mut diag_mask = vec![0.0f32; b * td];
    let mut med_mask = vec![0.0f32; b * tm];
    let mut y_binary = Vec::with_capacity(b);
    let mut y_multi = Vec::with_capacity(b);

    for (row, p) in patients.iter().enumerate() {
        p.validate()?;
        let n = p.diag_codes.len();
        let start = n.saturating_sub(td);
        for (slot, j) in (start..n).enumerate() {
            diag_code[row * td + slot] = vocabs.diag.encode(&p.diag_codes[j]);
            diag_kind[row * td + slot] = p.diag_kinds[j].index();
            diag_dur[row * td + slot] = compute_diag_duration(&p.diag_dates, j) as f32;
            diag_mask[row * td + slot] = 1.0;
        }
        let m = p.med_codes.len();
        let mstart = m.saturating_sub(tm);
        for (slot, j) in (mstart..m).enumerate() {
            med_code[row * tm + slot] = vocabs.med.encode(&p.med_codes[j]);
            med_type[row * tm + slot] = p.med_types[j].index();
            med_dur[row * tm + slot] = compute_med_duration(p.med_periods[j] as f64)? as f32;
            med_mask[row * tm + slot] = 1.0;
        }
        y_binary.push(if p.label_binary() { 1.0 } else { 0.0 });
        y_multi.push(u8::from(p.label_multi));
    }

    Ok(Batch {
        diag_code_idx: IndexMatrix { batch: b, steps: td, data: diag_code },
        diag_kind_idx: IndexMatrix { batch: b, steps: td, data: diag_kind },
        med_code_idx: IndexMatrix { batch: b, steps: tm, data: med_code },
        med_type_idx: IndexMatrix { batch: b, steps: tm, data: med_type },
        diag_dur: Tensor::new(vec![b, td, 1], diag_dur).unwrap(),
        med_dur: Tensor::new(vec![b, tm, 1], med_dur).unwrap(),
        diag_mask: Tensor::new(vec![b, td], diag_mask).unwrap(),
        med_mask: Tensor::new(vec![b, tm], med_mask).unwrap(),
        y_binary,
        y_multi,
    })
}

// ── Ten-split protocol ──────────────────────────────────────────────

/// Index sets of one train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Ten independently seeded stratified shuffles, each split 80/20 with
/// class ratios preserved within one patient per class.
pub fn split_ten_sets(data: &[PatientHistory], seed: u64) -> Result<Vec<SplitIndices>, DataError> {
    if data.len() < 10 {
        return Err(DataError::TooSmallForSplits { len: data.len() });
    }
    let mut by_class: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, p) in data.iter().enumerate() {
        by_class[u8::from(p.label_multi) as usize].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 5 {
            return Err(DataError::ClassTooSmall {
                class: class as u8,
                count: members.len(),
            });
        }
    }

    let mut splits = Vec::with_capacity(10);
    for k in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for members in by_class.iter() {
            if members.is_empty() {
                continue;
            }
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            let test_n = ((members.len() as f64) * 0.2).round() as usize;
            let test_n = test_n.max(1);
            test.extend_from_slice(&shuffled[..test_n]);
            train.extend_from_slice(&shuffled[test_n..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        splits.push(SplitIndices { train, test });
    }
    Ok(splits)
}

/// Materializes one side of a split.
pub fn gather<'a>(data: &'a [PatientHistory], indices: &[usize]) -> Vec<&'a PatientHistory> {
    indices.iter().map(|&i| &data[i]).collect()
}
