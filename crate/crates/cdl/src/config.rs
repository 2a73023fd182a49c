//! Run configuration: one declarative JSON document covering every component.
//!
//! A run is described by a single file with sections for data generation, the
//! seq2seq models, the classifier, the trainer (which nests reward and
//! curriculum settings), and artifact paths. Every field has a default, so an
//! empty document `{}` is a valid full-scale configuration; command-line
//! flags override individual fields on top of the file. Unknown keys are
//! rejected with a single error listing every offending key path, so a typo
//! never silently falls back to a default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::classifier::ClassifierConfig;
use crate::ecm::ModelConfig;
use crate::trainer::TrainerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

/// Train/valid/test proportions; must be positive and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.train, self.valid, self.test)
    }
}

/// Synthetic-corpus generation and splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dialogue pairs to generate.
    pub n_pairs: usize,
    /// Content-vocabulary size the generator targets.
    pub vocab_size: usize,
    pub split: SplitRatios,
    /// Seed for generation and splitting.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_pairs: 600,
            vocab_size: 120,
            split: SplitRatios::default(),
            seed: 0,
        }
    }
}

/// Where commands read and write artifacts. Relative paths resolve against
/// the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Corpus, splits, lexicon, and vocabulary from `gen-data`.
    pub data_dir: PathBuf,
    /// The three pretrained checkpoints.
    pub pretrain_dir: PathBuf,
    /// Dual-phase logs and checkpoints.
    pub train_dir: PathBuf,
    /// Evaluation report and generation dump.
    pub eval_dir: PathBuf,
    /// Optional word-vector file (token followed by floats, one per line);
    /// when absent, evaluation falls back to the forward model's input
    /// embeddings.
    pub word_vectors: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            pretrain_dir: PathBuf::from("pretrain"),
            train_dir: PathBuf::from("train"),
            eval_dir: PathBuf::from("eval"),
            word_vectors: None,
        }
    }
}

// ---------------------------------------------------------------------------
// The union
// ---------------------------------------------------------------------------

/// Union of every component's configuration plus paths. The `vocab_size`
/// fields under `model` and `classifier` are placeholders: commands resolve
/// them from the vocabulary artifact before constructing anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub classifier: ClassifierConfig,
    pub trainer: TrainerConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Parse a JSON document, rejecting unknown keys. All unknown key paths
    /// are collected and reported together.
    pub fn from_json_str(text: &str) -> Result<RunConfig, ConfigError> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    /// Like [`RunConfig::from_json_str`] for an already-parsed document.
    pub fn from_value(value: Value) -> Result<RunConfig, ConfigError> {
        // The serialized default config is the schema: a user key is known
        // exactly when the same path exists there, so the check can never
        // drift from the struct definitions.
        let schema = serde_json::to_value(RunConfig::default())?;
        let mut unknown = Vec::new();
        collect_unknown_keys(&value, &schema, "", &mut unknown);
        if !unknown.is_empty() {
            unknown.sort();
            return Err(ConfigError::UnknownKeys(unknown));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Check every section, reporting all failing sections at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if let Err(e) = self.model.validate() {
            problems.push(format!("model: {e}"));
        }
        if let Err(e) = self.classifier.validate() {
            problems.push(format!("classifier: {e}"));
        }
        if let Err(e) = self.trainer.validate() {
            problems.push(format!("trainer: {e}"));
        }
        if let Err(e) = self.validate_data() {
            problems.push(format!("data: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems.join("; ")))
        }
    }

    fn validate_data(&self) -> Result<(), String> {
        let d = &self.data;
        if d.n_pairs == 0 {
            return Err("n_pairs must be positive".into());
        }
        if d.vocab_size == 0 {
            return Err("vocab_size must be positive".into());
        }
        let (a, b, c) = d.split.as_tuple();
        for (name, v) in [("train", a), ("valid", b), ("test", c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("split.{name} must be positive, got {v}"));
            }
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(format!("split ratios must sum to 1, got {}", a + b + c));
        }
        Ok(())
    }

    /// Copy of this config with model and classifier vocabulary sizes pinned
    /// to the actual vocabulary.
    pub fn with_vocab_size(&self, vocab_size: usize) -> RunConfig {
        let mut c = self.clone();
        c.model.vocab_size = vocab_size;
        c.classifier.vocab_size = vocab_size;
        c
    }
}

/// Walk `user` against `schema`, recording every key path absent from the
/// schema. Recurses only through objects; arrays and scalars are leaves.
fn collect_unknown_keys(user: &Value, schema: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(user_map), Value::Object(schema_map)) = (user, schema) else {
        return;
    };
    for (key, child) in user_map {
        let child_path = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match schema_map.get(key) {
            None => out.push(child_path),
            Some(schema_child) => collect_unknown_keys(child, schema_child, &child_path, out),
        }
    }
}
