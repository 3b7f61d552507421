//! Sanity-anchor baselines: majority class and logistic regression over
//! bag-of-codes counts. Neither sees event order or durations, which is
//! exactly what makes them useful anchors for the sequence models.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PatientHistory;

/// Predicts the majority training class for everyone. With the vascular
/// class in the minority this scores every patient 0, giving AUC 0.5 by
/// the all-ties convention.
pub struct MajorityBaseline {
    positive_majority: bool,
}

impl MajorityBaseline {
    pub fn fit(train: &[&PatientHistory]) -> Self {
        let pos = train.iter().filter(|p| p.label_binary()).count();
        MajorityBaseline {
            positive_majority: 2 * pos > train.len(),
        }
    }

    pub fn score(&self, _patient: &PatientHistory) -> f64 {
        if self.positive_majority {
            1.0
        } else {
            0.0
        }
    }
}

/// Settings for the logistic baseline.
#[derive(Clone, Copy, Debug)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            epochs: 30,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// Logistic regression on diagnosis plus medication code counts, trained
/// by seeded SGD. Codes unseen in training are ignored at scoring time.
pub struct BagOfCodesLogistic {
    feature_index: HashMap<String, usize>,
    weights: Vec<f64>,
    bias: f64,
}

fn feature_keys(p: &PatientHistory) -> impl Iterator<Item = String> + '_ {
    p.diag_codes
        .iter()
        .map(|c| format!("d:{c}"))
        .chain(p.med_codes.iter().map(|c| format!("m:{c}")))
}

impl BagOfCodesLogistic {
    pub fn fit(train: &[&PatientHistory], cfg: &LogisticConfig) -> Self {
        let mut feature_index = HashMap::new();
        for p in train {
            for key in feature_keys(p) {
                let next = feature_index.len();
                feature_index.entry(key).or_insert(next);
            }
        }
        let mut model = BagOfCodesLogistic {
            weights: vec![0.0; feature_index.len()],
            bias: 0.0,
            feature_index,
        };

        let counts: Vec<Vec<(usize, f64)>> = train.iter().map(|p| model.featurize(p)).collect();
        let labels: Vec<f64> = train
            .iter()
            .map(|p| if p.label_binary() { 1.0 } else { 0.0 })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let z = model.logit(&counts[i]);
                let err = labels[i] - sigmoid(z);
                model.bias += cfg.learning_rate * err;
                for &(f, x) in &counts[i] {
                    model.weights[f] += cfg.learning_rate * err * x;
                }
            }
        }
        model
    }

    fn featurize(&self, p: &PatientHistory) -> Vec<(usize, f64)> {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for key in feature_keys(p) {
            if let Some(&f) = self.feature_index.get(&key) {
                *counts.entry(f).or_insert(0.0) += 1.0;
            }
        }
        let mut out: Vec<(usize, f64)> = counts.into_iter().collect();
        out.sort_unstable_by_key(|&(f, _)| f);
        out
    }

    fn logit(&self, features: &[(usize, f64)]) -> f64 {
        self.bias
            + features
                .iter()
                .map(|&(f, x)| self.weights[f] * x)
                .sum::<f64>()
    }

    pub fn score(&self, p: &PatientHistory) -> f64 {
        sigmoid(self.logit(&self.featurize(p)))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, LabelMulti, SynthConfig};
    use crate::metrics::auc;

    #[test]
    fn majority_scores_are_constant() {
        let data = generate_synthetic(&SynthConfig {
            n_patients: 50,
            seed: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        let refs: Vec<&_> = data.iter().collect();
        let baseline = MajorityBaseline::fit(&refs);
        let scores: Vec<f64> = data.iter().map(|p| baseline.score(p)).collect();
        assert!(scores.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn logistic_separates_an_obvious_code_signal() {
        // Positives always carry a dedicated code; negatives never do.
        let mut data = Vec::new();
        for i in 0..200 {
            let positive = i % 4 == 0;
            let code = if positive { "POS" } else { "NEG" };
            data.push(PatientHistory {
                patient_id: format!("p{i}"),
                diag_codes: vec![code.to_string(), format!("BG{}", i % 7)],
                diag_dates: vec![0, 5],
                diag_kinds: vec![crate::data::VisitKind::Outpatient; 2],
                med_codes: vec![],
                med_periods: vec![],
                med_types: vec![],
                label_multi: if positive {
                    LabelMulti::Cardiovascular
                } else {
                    LabelMulti::NoDisease
                },
            });
        }
        let refs: Vec<&_> = data.iter().collect();
        let model = BagOfCodesLogistic::fit(&refs, &LogisticConfig::default());
        let scores: Vec<f64> = data.iter().map(|p| model.score(p)).collect();
        let labels: Vec<bool> = data.iter().map(|p| p.label_binary()).collect();
        assert!(auc(&scores, &labels).unwrap() > 0.99);
    }

    #[test]
    fn logistic_fit_is_deterministic() {
        let data = generate_synthetic(&SynthConfig {
            n_patients: 80,
            seed: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let refs: Vec<&_> = data.iter().collect();
        let cfg = LogisticConfig::default();
        let a = BagOfCodesLogistic::fit(&refs, &cfg);
        let b = BagOfCodesLogistic::fit(&refs, &cfg);
        for p in &data {
            assert_eq!(a.score(p).to_bits(), b.score(p).to_bits());
        }
    }
}
