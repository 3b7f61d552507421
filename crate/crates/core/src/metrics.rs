//! Classification metrics and the per-split evaluation report.
//!
//! All metric arithmetic runs in f64. The positive class is the vascular
//! one throughout; a score at or above the threshold counts as a positive
//! prediction.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    Empty,
    /// AUC needs at least one positive and one negative.
    SingleClass,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "no scores to evaluate"),
            Self::SingleClass => write!(f, "AUC undefined when only one class is present"),
        }
    }
}

impl std::error::Error for MetricsError {}

/// Binary confusion counts. Always sums to the scored population.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Thresholded precision/recall/F1. Precision is 0 with no predicted
/// positives, recall is 0 with no actual positives, and F1 is 0 whenever
/// precision + recall is 0.
pub fn binary_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> BinaryMetrics {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        match (predicted, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let precision = if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let recall = if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    BinaryMetrics {
        precision,
        recall,
        f1,
        confusion: c,
    }
}

/// Rank-based AUC (Mann-Whitney): the probability that a random positive
/// outscores a random negative, ties counting one half. O(n log n).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average ranks over tied groups, 1-based.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

// ── Report ──────────────────────────────────────────────────────────

/// Metrics of one protocol split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub confusion: Confusion,
    /// Training wall time for this split.
    pub running_time_seconds: f64,
}

/// Per-split metrics plus the mean row. The mean row averages the metric
/// fields and pools the confusion counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub splits: Vec<SplitMetrics>,
    pub mean: SplitMetrics,
}

impl MetricsReport {
    pub fn from_splits(model: impl Into<String>, splits: Vec<SplitMetrics>) -> Self {
        assert!(!splits.is_empty(), "report needs at least one split");
        let n = splits.len() as f64;
        let mut mean = SplitMetrics {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            auc: 0.0,
            confusion: Confusion::default(),
            running_time_seconds: 0.0,
        };
        for s in &splits {
            mean.precision += s.precision;
            mean.recall += s.recall;
            mean.f1 += s.f1;
            mean.auc += s.auc;
            mean.running_time_seconds += s.running_time_seconds;
            mean.confusion.tp += s.confusion.tp;
            mean.confusion.fp += s.confusion.fp;
            mean.confusion.tn += s.confusion.tn;
            mean.confusion.fn_ += s.confusion.fn_;
        }
        mean.precision /= n;
        mean.recall /= n;
        mean.f1 /= n;
        mean.auc /= n;
        mean.running_time_seconds /= n;
        MetricsReport {
            model: model.into(),
            splits,
            mean,
        }
    }

    /// Deterministic report body: one JSON object per line, split rows then
    /// the mean row. Wall times are excluded so reruns with the same seed
    /// produce byte-identical files; timing lives in the comparison table.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            model: &'a str,
            split: serde_json::Value,
            precision: f64,
            recall: f64,
            f1: f64,
            auc: f64,
            confusion: Confusion,
        }
        let mut out = String::new();
        let rows = self
            .splits
            .iter()
            .enumerate()
            .map(|(i, s)| (serde_json::json!(i), s))
            .chain(std::iter::once((serde_json::json!("mean"), &self.mean)));
        for (split, s) in rows {
            let row = Row {
                model: &self.model,
                split,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                auc: s.auc,
                confusion: s.confusion,
            };
            out.push_str(&serde_json::to_string(&row).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Plain-text comparison table over mean rows, one line per model.
/// Running time is reported in minutes.
pub fn format_comparison_table(reports: &[&MetricsReport]) -> String {
    let mut out = String::new();
    let name_w = reports
        .iter()
        .map(|r| r.model.len())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5);
    out.push_str(&format!(
        "{:<name_w$}  {:>17}  {:>9}  {:>9}  {:>10}  {:>9}\n",
        "Model", "Running time (/min)", "Precision", "Recall", "F1-measure", "AUC"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<name_w$}  {:>17.5}  {:>9.5}  {:>9.5}  {:>10.5}  {:>9.5}\n",
            r.model,
            r.mean.running_time_seconds / 60.0,
            r.mean.precision,
            r.mean.recall,
            r.mean.f1,
            r.mean.auc,
        ));
    }
    out
}
