//! TextCNN emotion classifier.
//!
//! Convolutional filters of a few widths slide over the word embeddings of an
//! utterance; each filter's max activation over positions is kept, the pooled
//! features are (in training) dropped out and mapped linearly to the six
//! emotion categories. The trained classifier is the measurement instrument
//! of the rest of the system: it scores emotion rewards during reinforcement,
//! ranks curriculum difficulty, and grades generated responses — so it is
//! trained once and then frozen, which callers can verify via
//! [`EmotionClassifier::content_hash`].

use crate::corpus::{Corpus, Emotion, Utterance, EMOTION_COUNT, PAD_ID};
use crate::optim::Adam;
use crate::tensor::{Grads, ParamId, ParamStore, Tape, Tensor, Var};
use ndarray::IxDyn;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("cannot classify an empty utterance")]
    EmptyInput,
    #[error("token id {id} out of vocabulary range {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("training pool contains only the class {0:?}; need at least two")]
    SingleClass(Emotion),
    #[error("corpus is not encoded against a vocabulary")]
    NotEncoded,
    #[error("non-finite {0} during classifier training")]
    NonFinite(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint sidecar error at {path}: {message}")]
    Sidecar { path: String, message: String },
    #[error("checkpoint integrity failure: stored digest {expected} but blob hashes to {found}")]
    Integrity { expected: String, found: String },
    #[error("vocabulary mismatch: checkpoint was built for hash {expected}, current is {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("{0}")]
    Invalid(String),
}

impl From<crate::ckpt::BlobError> for ClassifierError {
    fn from(e: crate::ckpt::BlobError) -> Self {
        use crate::ckpt::BlobError;
        match e {
            BlobError::Io { path, source } => ClassifierError::Io { path, source },
            BlobError::Integrity { expected, found } => {
                ClassifierError::Integrity { expected, found }
            }
            BlobError::Size { expected, found } => ClassifierError::Invalid(format!(
                "blob holds {found} bytes but the model needs {expected}"
            )),
        }
    }
}

/// Architecture and training hyperparameters of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Convolution window widths; one bank of filters per width.
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub num_classes: usize,
    /// Probability of dropping each pooled feature during training
    /// (inverted dropout; inference never drops).
    pub dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of the pool held out to drive early stopping.
    pub holdout_fraction: f64,
    /// Stop after this many epochs without held-out accuracy improvement.
    pub patience: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            vocab_size: 40_000,
            embed_dim: 100,
            filter_widths: vec![2, 3, 4],
            filters_per_width: 64,
            num_classes: EMOTION_COUNT,
            dropout: 0.5,
            epochs: 10,
            lr: 1e-3,
            batch_size: 32,
            holdout_fraction: 0.1,
            patience: 2,
        }
    }
}

impl ClassifierConfig {
    /// Default shape with the vocabulary size filled in.
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.filters_per_width == 0 {
            return Err(ClassifierError::Config(
                "vocab_size, embed_dim, and filters_per_width must be positive".into(),
            ));
        }
        if self.filter_widths.is_empty() || self.filter_widths.iter().any(|&w| w == 0) {
            return Err(ClassifierError::Config(
                "filter_widths must be non-empty and positive".into(),
            ));
        }
        if self.num_classes != EMOTION_COUNT {
            return Err(ClassifierError::Config(format!(
                "num_classes must be {EMOTION_COUNT}, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ClassifierError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(0.0..0.5).contains(&self.holdout_fraction) || self.holdout_fraction <= 0.0 {
            return Err(ClassifierError::Config(format!(
                "holdout_fraction must be in (0, 0.5), got {}",
                self.holdout_fraction
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ClassifierError::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    fn pooled_dim(&self) -> usize {
        self.filter_widths.len() * self.filters_per_width
    }
}

#[derive(Debug, Clone)]
struct Layout {
    emb: ParamId,
    /// One (filter matrix, bias) bank per configured width.
    convs: Vec<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

/// A trained (or fresh) TextCNN emotion classifier.
#[derive(Debug, Clone)]
pub struct EmotionClassifier {
    pub config: ClassifierConfig,
    params: ParamStore,
    layout: Layout,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub holdout_accuracy: f64,
}

/// Outcome of [`train_classifier`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub pool_size: usize,
    pub holdout_size: usize,
    pub epochs: Vec<EpochStats>,
    pub best_holdout_accuracy: f64,
}

/// Accuracy over a corpus pool, overall and per category.
#[derive(Debug, Clone, Serialize)]
pub struct AccuracyReport {
    pub overall: f64,
    pub total: usize,
    pub correct: usize,
    /// Indexed by emotion id; `(correct, total)` per category.
    pub per_class: [(usize, usize); EMOTION_COUNT],
}

impl EmotionClassifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self, ClassifierError> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = config.embed_dim;
        let emb = p.add(
            "emb",
            Tensor::from_shape_fn(IxDyn(&[config.vocab_size, d]), |_| {
                rng.random_range(-0.1..0.1)
            }),
        );
        let f = config.filters_per_width;
        let convs = config
            .filter_widths
            .iter()
            .map(|&w| {
                let fan_in = w * d;
                let lim = (6.0 / (fan_in + f) as f64).sqrt();
                let wmat = p.add(
                    format!("conv{w}.w"),
                    Tensor::from_shape_fn(IxDyn(&[f, fan_in]), |_| rng.random_range(-lim..lim)),
                );
                let bias = p.add(format!("conv{w}.b"), Tensor::zeros(IxDyn(&[f])));
                (wmat, bias)
            })
            .collect();
        let pooled = config.pooled_dim();
        let lim = (6.0 / (pooled + config.num_classes) as f64).sqrt();
        let out_w = p.add(
            "out.w",
            Tensor::from_shape_fn(IxDyn(&[config.num_classes, pooled]), |_| {
                rng.random_range(-lim..lim)
            }),
        );
        let out_b = p.add("out.b", Tensor::zeros(IxDyn(&[config.num_classes])));
        Ok(Self {
            config,
            params: p,
            layout: Layout {
                emb,
                convs,
                out_w,
                out_b,
            },
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// SHA-256 fingerprint of all parameters; constant once training ends.
    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), ClassifierError> {
        if ids.is_empty() {
            return Err(ClassifierError::EmptyInput);
        }
        for &id in ids {
            if id >= self.config.vocab_size {
                return Err(ClassifierError::TokenOutOfRange {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Class-probability graph for one utterance. `dropout_mask` (pooled-dim
    /// scale factors) is given only during training.
    fn proba_graph(&self, tape: &mut Tape, ids: &[usize], dropout_mask: Option<&[f64]>) -> Var {
        // Short inputs are padded so every filter width has at least one
        // window position.
        let max_w = *self.config.filter_widths.iter().max().unwrap();
        let mut padded: Vec<usize> = ids.to_vec();
        while padded.len() < max_w {
            padded.push(PAD_ID);
        }
        let emb = tape.param(&self.params, self.layout.emb);
        let rows: Vec<Var> = padded.iter().map(|&id| tape.row(emb, id)).collect();

        let mut pooled = Vec::with_capacity(self.layout.convs.len());
        for (&w, &(wmat, bias)) in self.config.filter_widths.iter().zip(&self.layout.convs) {
            let wv = tape.param(&self.params, wmat);
            let bv = tape.param(&self.params, bias);
            let acts: Vec<Var> = (0..=padded.len() - w)
                .map(|i| {
                    let window = tape.concat(&rows[i..i + w]);
                    let lin = tape.matvec(wv, window);
                    let lin = tape.add(lin, bv);
                    tape.relu(lin)
                })
                .collect();
            let stacked = tape.stack_rows(&acts);
            pooled.push(tape.col_max(stacked));
        }
        let mut feats = tape.concat(&pooled);
        if let Some(mask) = dropout_mask {
            let m = tape.constant_vec(mask);
            feats = tape.mul(feats, m);
        }
        let ow = tape.param(&self.params, self.layout.out_w);
        let ob = tape.param(&self.params, self.layout.out_b);
        let logits = tape.matvec(ow, feats);
        let logits = tape.add(logits, ob);
        tape.softmax(logits)
    }

    /// Probability of each emotion category for an utterance. Deterministic;
    /// dropout is never applied at inference.
    pub fn predict_proba(&self, ids: &[usize]) -> Result<[f64; EMOTION_COUNT], ClassifierError> {
        self.check_ids(ids)?;
        let mut tape = Tape::new();
        let probs = self.proba_graph(&mut tape, ids, None);
        let v = tape.value(probs);
        let mut out = [0.0; EMOTION_COUNT];
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[i];
        }
        Ok(out)
    }

    /// Most probable category and its probability.
    pub fn predict(&self, ids: &[usize]) -> Result<(Emotion, f64), ClassifierError> {
        let probs = self.predict_proba(ids)?;
        let (best, p) = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        Ok((Emotion::from_id(best).unwrap(), *p))
    }

    /// The classifier's probability of the gold category — the curriculum's
    /// difficulty score (higher = easier).
    pub fn confidence(&self, utt: &Utterance, gold: Emotion) -> Result<f64, ClassifierError> {
        Ok(self.predict_proba(&utt.ids)?[gold.id()])
    }

    /// Classification accuracy over every query and response in the corpus,
    /// with per-category breakdown.
    pub fn accuracy(&self, corpus: &Corpus) -> Result<AccuracyReport, ClassifierError> {
        let pool = labeled_pool(corpus)?;
        let mut per_class = [(0usize, 0usize); EMOTION_COUNT];
        let mut correct = 0;
        for (ids, gold) in &pool {
            let (pred, _) = self.predict(ids)?;
            per_class[gold.id()].1 += 1;
            if pred == *gold {
                per_class[gold.id()].0 += 1;
                correct += 1;
            }
        }
        Ok(AccuracyReport {
            overall: correct as f64 / pool.len() as f64,
            total: pool.len(),
            correct,
            per_class,
        })
    }

    /// Write the checkpoint blob and JSON sidecar.
    pub fn save(&self, dir: &Path, vocab_hash: &str) -> Result<(), ClassifierError> {
        let digest = crate::ckpt::write_param_blob(dir, &self.params)?;
        let sidecar = ClassifierMeta {
            kind: "classifier".into(),
            config: self.config.clone(),
            vocab_hash: vocab_hash.to_string(),
            blob_sha256: digest,
        };
        let meta_path = dir.join("model.json");
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&meta_path, text).map_err(|source| ClassifierError::Io {
            path: meta_path.display().to_string(),
            source,
        })
    }

    /// Load a checkpoint written by [`EmotionClassifier::save`].
    pub fn load(
        dir: &Path,
        expected_vocab_hash: Option<&str>,
    ) -> Result<(EmotionClassifier, ClassifierMeta), ClassifierError> {
        let meta_path = dir.join("model.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|source| ClassifierError::Io {
            path: meta_path.display().to_string(),
            source,
        })?;
        let meta: ClassifierMeta =
            serde_json::from_str(&text).map_err(|e| ClassifierError::Sidecar {
                path: meta_path.display().to_string(),
                message: e.to_string(),
            })?;
        if meta.kind != "classifier" {
            return Err(ClassifierError::Sidecar {
                path: meta_path.display().to_string(),
                message: format!("expected kind \"classifier\", found {:?}", meta.kind),
            });
        }
        if let Some(expected) = expected_vocab_hash {
            if meta.vocab_hash != expected {
                return Err(ClassifierError::VocabMismatch {
                    expected: meta.vocab_hash.clone(),
                    found: expected.to_string(),
                });
            }
        }
        let mut cls = EmotionClassifier::new(meta.config.clone(), 0)?;
        let flat =
            crate::ckpt::read_param_blob(dir, &meta.blob_sha256, cls.params.total_elements())?;
        cls.params.load_flat(&flat).map_err(ClassifierError::Invalid)?;
        Ok((cls, meta))
    }
}

/// JSON sidecar stored next to the classifier blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub kind: String,
    pub config: ClassifierConfig,
    pub vocab_hash: String,
    pub blob_sha256: String,
}

/// Every query and response in the corpus, each labeled with its own emotion.
fn labeled_pool(corpus: &Corpus) -> Result<Vec<(Vec<usize>, Emotion)>, ClassifierError> {
    let mut pool = Vec::with_capacity(corpus.len() * 2);
    for pair in corpus.iter() {
        if !pair.query.is_encoded() || !pair.response.is_encoded() {
            return Err(ClassifierError::NotEncoded);
        }
        pool.push((pair.query.ids.clone(), pair.e_q));
        pool.push((pair.response.ids.clone(), pair.e_r));
    }
    if pool.is_empty() {
        return Err(ClassifierError::Invalid("empty corpus".into()));
    }
    Ok(pool)
}

fn holdout_accuracy(
    cls: &EmotionClassifier,
    pool: &[(Vec<usize>, Emotion)],
    idx: &[usize],
) -> Result<f64, ClassifierError> {
    let mut correct = 0;
    for &i in idx {
        let (pred, _) = cls.predict(&pool[i].0)?;
        if pred == pool[i].1 {
            correct += 1;
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Train a classifier on every utterance of the corpus (queries and responses
/// with their own labels). A slice of the pool is held out to pick the best
/// epoch; the returned parameters are the best-epoch snapshot. Deterministic
/// for a given seed.
pub fn train_classifier(
    corpus: &Corpus,
    config: ClassifierConfig,
    seed: u64,
) -> Result<(EmotionClassifier, TrainSummary), ClassifierError> {
    config.validate()?;
    let pool = labeled_pool(corpus)?;
    let first = pool[0].1;
    if pool.iter().all(|(_, e)| *e == first) {
        return Err(ClassifierError::SingleClass(first));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut cls = EmotionClassifier::new(config.clone(), rng.random())?;

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    let n_holdout = ((pool.len() as f64 * config.holdout_fraction).round() as usize).max(1);
    let (holdout_idx, train_idx) = order.split_at(n_holdout);
    let mut train_idx: Vec<usize> = train_idx.to_vec();

    let mut opt = Adam::new(&cls.params, config.lr);
    let keep = 1.0 - config.dropout;
    let pooled_dim = config.pooled_dim();

    let mut best_acc = f64::NEG_INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut stale = 0;
    let mut epochs = Vec::new();

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for chunk in train_idx.chunks(config.batch_size) {
            let mut grads = Grads::zeros(&cls.params);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (ids, gold) = &pool[i];
                let mask: Vec<f64> = (0..pooled_dim)
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut tape = Tape::new();
                let probs = cls.proba_graph(&mut tape, ids, Some(&mask));
                let p_gold = tape.index(probs, gold.id());
                let lp = tape.ln(p_gold);
                let loss = tape.scale(lp, -1.0);
                let value = tape.scalar_value(loss);
                if !value.is_finite() {
                    return Err(ClassifierError::NonFinite("loss".into()));
                }
                loss_sum += value;
                loss_count += 1;
                tape.backward(loss, scale, &mut grads);
            }
            if grads.has_non_finite() {
                return Err(ClassifierError::NonFinite("gradient".into()));
            }
            opt.step(&mut cls.params, &grads);
        }

        let acc = holdout_accuracy(&cls, &pool, holdout_idx)?;
        epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / loss_count.max(1) as f64,
            holdout_accuracy: acc,
        });
        if acc > best_acc {
            best_acc = acc;
            best_params = Some(cls.params.to_flat());
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }

    if let Some(flat) = best_params {
        cls.params.load_flat(&flat).map_err(ClassifierError::Invalid)?;
    }
    Ok((
        cls,
        TrainSummary {
            pool_size: pool.len(),
            holdout_size: n_holdout,
            epochs,
            best_holdout_accuracy: best_acc,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, DialoguePair, Split, Utterance};
    use approx::assert_relative_eq;

    fn small_config(vocab: usize) -> ClassifierConfig {
        ClassifierConfig {
            vocab_size: vocab,
            embed_dim: 12,
            filters_per_width: 8,
            epochs: 10,
            batch_size: 16,
            lr: 1e-2,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn probabilities_are_a_distribution_and_inference_is_deterministic() {
        let cls = EmotionClassifier::new(small_config(30), 3).unwrap();
        let probs = cls.predict_proba(&[5, 6, 7]).unwrap();
        assert_relative_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(probs.iter().all(|&p| p > 0.0));
        assert_eq!(probs, cls.predict_proba(&[5, 6, 7]).unwrap());

        // Inputs shorter than the widest filter are padded, not rejected.
        let short = cls.predict_proba(&[5]).unwrap();
        assert_relative_eq!(short.iter().sum::<f64>(), 1.0, epsilon = 1e-9);

        assert!(matches!(
            cls.predict_proba(&[]),
            Err(ClassifierError::EmptyInput)
        ));
        assert!(matches!(
            cls.predict_proba(&[99]),
            Err(ClassifierError::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn confidence_is_the_gold_probability() {
        let cls = EmotionClassifier::new(small_config(30), 5).unwrap();
        let utt = Utterance {
            tokens: vec!["a".into(), "b".into(), "c".into()],
            ids: vec![4, 5, 6],
        };
        let probs = cls.predict_proba(&utt.ids).unwrap();
        for e in Emotion::ALL {
            assert_eq!(cls.confidence(&utt, e).unwrap(), probs[e.id()]);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut cls = EmotionClassifier::new(small_config(20), 11).unwrap();
        let ids = [4, 9, 13, 5, 6];
        let gold = Emotion::Sad;

        let loss_of = |cls: &EmotionClassifier| {
            let mut tape = Tape::new();
            let probs = cls.proba_graph(&mut tape, &ids, None);
            let p = tape.index(probs, gold.id());
            let lp = tape.ln(p);
            let loss = tape.scale(lp, -1.0);
            tape.scalar_value(loss)
        };

        let mut tape = Tape::new();
        let probs = cls.proba_graph(&mut tape, &ids, None);
        let p = tape.index(probs, gold.id());
        let lp = tape.ln(p);
        let loss = tape.scale(lp, -1.0);
        let mut grads = Grads::zeros(&cls.params);
        tape.backward(loss, 1.0, &mut grads);
        drop(tape);

        let h = 1e-5;
        let mut checked = 0;
        let ids_list: Vec<ParamId> = cls.params.ids().collect();
        for id in ids_list {
            let len = cls.params.get(id).len();
            for k in [0, len / 2, len - 1] {
                let orig = cls.params.get(id).as_slice().unwrap()[k];
                cls.params.get_mut(id).as_slice_mut().unwrap()[k] = orig + h;
                let up = loss_of(&cls);
                cls.params.get_mut(id).as_slice_mut().unwrap()[k] = orig - h;
                let down = loss_of(&cls);
                cls.params.get_mut(id).as_slice_mut().unwrap()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[k]);
                let denom = numeric.abs().max(analytic.abs()).max(1e-4);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-3,
                    "{} [{k}]: numeric {numeric:.8} vs analytic {analytic:.8}",
                    cls.params.name(id)
                );
                checked += 1;
            }
        }
        assert!(checked >= 15);
    }

    #[test]
    fn training_is_deterministic_and_learns_the_synthetic_markers() {
        let (corpus, _, vocab) = generate_synthetic_corpus(240, 80, 7).unwrap();
        let config = small_config(vocab.len());
        let (a, summary) = train_classifier(&corpus, config.clone(), 99).unwrap();
        let (b, _) = train_classifier(&corpus, config.clone(), 99).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let (c, _) = train_classifier(&corpus, config.clone(), 100).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());

        assert_eq!(summary.pool_size, 480);
        assert!(summary.holdout_size >= 1);
        assert!(
            summary.best_holdout_accuracy >= 0.9,
            "holdout accuracy too low: {}",
            summary.best_holdout_accuracy
        );
        let report = a.accuracy(&corpus).unwrap();
        assert!(report.overall >= 0.9, "pool accuracy {}", report.overall);
        assert_eq!(report.total, 480);
        let per_class_total: usize = report.per_class.iter().map(|(_, t)| t).sum();
        assert_eq!(per_class_total, report.total);
        let per_class_correct: usize = report.per_class.iter().map(|(c, _)| c).sum();
        assert_eq!(per_class_correct, report.correct);
    }

    #[test]
    fn single_class_pools_are_rejected() {
        let (mut corpus, _, vocab) = generate_synthetic_corpus(60, 60, 3).unwrap();
        for pair in &mut corpus.pairs {
            pair.e_q = Emotion::Happy;
            pair.e_r = Emotion::Happy;
        }
        let corpus = Corpus::new(corpus.pairs, Split::Train);
        let err = train_classifier(&corpus, small_config(vocab.len()), 1).unwrap_err();
        assert!(matches!(err, ClassifierError::SingleClass(Emotion::Happy)));
    }

    #[test]
    fn unencoded_corpora_are_rejected() {
        let pair = DialoguePair {
            query: Utterance::from_tokens(vec!["a".into(), "b".into(), "c".into()]),
            response: Utterance::from_tokens(vec!["d".into(), "e".into(), "f".into()]),
            e_q: Emotion::Happy,
            e_r: Emotion::Sad,
            index: 0,
        };
        let corpus = Corpus::new(vec![pair], Split::Train);
        assert!(matches!(
            train_classifier(&corpus, small_config(10), 1),
            Err(ClassifierError::NotEncoded)
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_refusals() {
        let (corpus, _, vocab) = generate_synthetic_corpus(60, 60, 13).unwrap();
        let mut config = small_config(vocab.len());
        config.epochs = 1;
        let (cls, _) = train_classifier(&corpus, config, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cls");
        cls.save(&path, &vocab.content_hash()).unwrap();

        let (loaded, meta) = EmotionClassifier::load(&path, Some(&vocab.content_hash())).unwrap();
        assert_eq!(loaded.content_hash(), cls.content_hash());
        assert_eq!(meta.kind, "classifier");

        let err = EmotionClassifier::load(&path, Some("deadbeef")).unwrap_err();
        assert!(matches!(err, ClassifierError::VocabMismatch { .. }));

        let blob = path.join("params.bin");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes[8] ^= 0x01;
        std::fs::write(&blob, &bytes).unwrap();
        assert!(matches!(
            EmotionClassifier::load(&path, None).unwrap_err(),
            ClassifierError::Integrity { .. }
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small_config(10);
        c.dropout = 1.0;
        assert!(EmotionClassifier::new(c, 1).is_err());
        let mut c = small_config(10);
        c.filter_widths = vec![];
        assert!(EmotionClassifier::new(c, 1).is_err());
        let mut c = small_config(10);
        c.num_classes = 2;
        assert!(EmotionClassifier::new(c, 1).is_err());
    }
}

