//! Competence-based curriculum over the training corpus.
//!
//! Each sample's difficulty is measured once, before reinforcement starts, as
//! the frozen classifier's confidence in the gold emotion of the utterance
//! the model must generate (responses for the forward model, queries for the
//! backward model). High confidence means the emotion is easy to express and
//! recognize, so those samples come first. During training, step `t` may only
//! draw (uniformly, with replacement) from the easiest
//! `ceil(competence(t) * N)` samples, where the competence
//! `min(1, sqrt(t * (1 - c0^2) / T + c0^2))` grows from `c0` to 1 by step
//! `T`. Disabling the curriculum widens every draw to the whole corpus, which
//! is exactly the dual-learning-only ablation.

use crate::classifier::{ClassifierError, EmotionClassifier};
use crate::corpus::Corpus;
use crate::ecm::Direction;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CurriculumError {
    #[error("invalid curriculum config: {0}")]
    Config(String),
    #[error("cannot rank an empty corpus")]
    EmptyCorpus,
    #[error("classifier failed while ranking: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Squared initial competence; the schedule starts at its square root.
    pub c0_squared: f64,
    /// Step at which competence reaches 1 (full corpus available).
    pub total_steps: u64,
    /// When false, every draw is uniform over the whole corpus.
    pub enabled: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            c0_squared: 0.01,
            total_steps: 100_000,
            enabled: true,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        if !(0.0..=1.0).contains(&self.c0_squared) || self.c0_squared <= 0.0 {
            return Err(CurriculumError::Config(format!(
                "c0_squared must be in (0, 1], got {}",
                self.c0_squared
            )));
        }
        if self.total_steps == 0 {
            return Err(CurriculumError::Config("total_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Competence at step `t`: the fraction of the ranked corpus available.
pub fn competence(t: u64, config: &CurriculumConfig) -> f64 {
    let ratio = t as f64 / config.total_steps as f64;
    (ratio * (1.0 - config.c0_squared) + config.c0_squared)
        .sqrt()
        .min(1.0)
}

/// One corpus sample with its measured difficulty score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedEntry {
    /// Index into the corpus this ranking was built from.
    pub corpus_index: usize,
    /// Classifier confidence in the gold emotion; higher = easier.
    pub confidence: f64,
}

/// Corpus ordered easiest-first for one training direction.
#[derive(Debug, Clone)]
pub struct RankedDataset {
    pub direction: Direction,
    /// Easiest (most confident) first.
    pub entries: Vec<RankedEntry>,
}

impl RankedDataset {
    /// Order scores by descending confidence; ties keep ascending corpus
    /// index so rankings are fully deterministic.
    pub fn from_scores(direction: Direction, scores: Vec<RankedEntry>) -> RankedDataset {
        let mut entries = scores;
        entries.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap()
                .then(a.corpus_index.cmp(&b.corpus_index))
        });
        RankedDataset { direction, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of easiest samples available at step `t`. Always at least the
    /// batch size (so a batch never degenerates) and at most the corpus.
    pub fn frontier_len(&self, t: u64, config: &CurriculumConfig, batch_size: usize) -> usize {
        let n = self.entries.len();
        if !config.enabled {
            return n;
        }
        let by_competence = (competence(t, config) * n as f64).ceil() as usize;
        by_competence.max(batch_size.max(1)).min(n)
    }

    /// Write the ranking as CSV: `rank,corpus_index,confidence`.
    pub fn write_csv(&self, path: &Path) -> Result<(), CurriculumError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|source| {
            CurriculumError::Io {
                path: path.display().to_string(),
                source,
            }
        })?);
        let write = |out: &mut dyn Write| -> std::io::Result<()> {
            writeln!(out, "rank,corpus_index,confidence")?;
            for (rank, e) in self.entries.iter().enumerate() {
                writeln!(out, "{rank},{},{}", e.corpus_index, e.confidence)?;
            }
            Ok(())
        };
        write(&mut out).map_err(|source| CurriculumError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Score every sample with the frozen classifier and order easiest-first.
/// The forward model generates responses, so its difficulty is the response
/// confidence; the backward model's is the query confidence.
pub fn rank_by_difficulty(
    corpus: &Corpus,
    cls: &EmotionClassifier,
    direction: Direction,
) -> Result<RankedDataset, CurriculumError> {
    if corpus.is_empty() {
        return Err(CurriculumError::EmptyCorpus);
    }
    let mut scores = Vec::with_capacity(corpus.len());
    for pair in corpus.iter() {
        let (utt, gold) = match direction {
            Direction::Forward => (&pair.response, pair.e_r),
            Direction::Backward => (&pair.query, pair.e_q),
        };
        scores.push(RankedEntry {
            corpus_index: pair.index,
            confidence: cls.confidence(utt, gold)?,
        });
    }
    Ok(RankedDataset::from_scores(direction, scores))
}

/// Draw `batch_size` corpus indices uniformly (with replacement) from the
/// competence frontier at step `t`. Deterministic for a given `(t, seed)`.
pub fn sample_batch(
    ranked: &RankedDataset,
    t: u64,
    config: &CurriculumConfig,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<usize>, CurriculumError> {
    if ranked.is_empty() {
        return Err(CurriculumError::EmptyCorpus);
    }
    let frontier = ranked.frontier_len(t, config, batch_size);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok((0..batch_size)
        .map(|_| ranked.entries[rng.random_range(0..frontier)].corpus_index)
        .collect())
}
