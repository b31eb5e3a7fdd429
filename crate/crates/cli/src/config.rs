use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Shared run configuration read from JSON. Every field is optional and a
/// command-line flag always wins over the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub ner_model: Option<PathBuf>,
    pub re_model: Option<PathBuf>,
    pub split: SplitSection,
    pub training: TrainingSection,
    pub max_sentence_distance: Option<usize>,
    pub parallelism: Option<usize>,
    pub min_unique: Option<usize>,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub feature_window: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_docs: Option<usize>,
    pub seed: Option<u64>,
    pub shift: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let content = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&content)?)
    }
}

/// Flag value if given, else the config value, else `default`.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}
