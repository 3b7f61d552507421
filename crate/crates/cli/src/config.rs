//! Optional TOML config file with one section per command. Command-line
//! flags always win over file values; defaults fill the rest.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub predict: PredictSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub signal: Option<f64>,
    pub diag_vocab: Option<usize>,
    pub med_vocab: Option<usize>,
    pub min_diag_len: Option<usize>,
    pub max_diag_len: Option<usize>,
    pub max_med_len: Option<usize>,
    pub out: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<String>,
    pub arch: Option<String>,
    pub reduce: Option<String>,
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f32>,
    pub hidden: Option<usize>,
    pub aux_hidden: Option<usize>,
    pub diag_embed: Option<usize>,
    pub med_embed: Option<usize>,
    pub attn_hidden: Option<usize>,
    pub dense1: Option<usize>,
    pub dense2: Option<usize>,
    pub conv_width: Option<usize>,
    pub conv_layers: Option<usize>,
    pub max_diag_len: Option<usize>,
    pub max_med_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub data: Option<String>,
    pub models: Option<Vec<String>>,
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f32>,
    pub hidden: Option<usize>,
    pub max_diag_len: Option<usize>,
    pub max_med_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub checkpoint: Option<String>,
    pub data: Option<String>,
    pub out: Option<String>,
    pub diag_vocab: Option<String>,
    pub med_vocab: Option<String>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// flag value, else file value, else default.
pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// flag value, else file value, else an error naming the flag.
pub fn require<T>(flag: Option<T>, file: Option<T>, name: &str) -> anyhow::Result<T> {
    flag.or(file)
        .ok_or_else(|| anyhow::anyhow!("missing required option --{name} (or config key)"))
}
