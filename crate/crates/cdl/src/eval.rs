//! Evaluation metrics and report generation.
//!
//! Content metrics: corpus-level BLEU-n with brevity penalty, distinct-n,
//! and four embedding-based scores (average, vector extrema, greedy
//! matching, query-response coherence). Emotion metrics: classifier
//! agreement with the target emotion and the lexicon word rate of
//! generations. [`full_report`] decodes one greedy response per
//! (query, gold response emotion) over a corpus and assembles everything
//! into a serializable report plus a generations log.

use crate::classifier::{ClassifierError, EmotionClassifier};
use crate::corpus::{Corpus, Emotion, IndexedLexicon, Vocabulary};
use crate::ecm::{ModelError, SeqModel};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error("classifier failed during evaluation: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("model failed during evaluation: {0}")]
    Model(#[from] ModelError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("word vector file {path} line {line}: {message}")]
    VectorParse {
        path: String,
        line: usize,
        message: String,
    },
}

const SMOOTHING_EPS: f64 = 1e-9;

/// Corpus-level BLEU-n: geometric mean of clipped n-gram precisions for
/// orders `1..=n`, times the brevity penalty
/// `min(1, exp(1 - ref_len / hyp_len))`. Only zero-match orders are smoothed
/// (by a tiny epsilon), so nonzero precisions stay exact ratios.
pub fn bleu_n(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    n: usize,
) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::Invalid("BLEU order must be at least 1".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(EvalError::Invalid(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(EvalError::Invalid("nothing to score".into()));
    }
    let mut precisions = Vec::with_capacity(n);
    for order in 1..=n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (hyp, reference) in hypotheses.iter().zip(references) {
            let hyp_grams = ngram_counts(hyp, order);
            let ref_grams = ngram_counts(reference, order);
            for (gram, &count) in &hyp_grams {
                total += count;
                matched += count.min(ref_grams.get(gram).copied().unwrap_or(0));
            }
        }
        precisions.push(if matched == 0 {
            SMOOTHING_EPS / total.max(1) as f64
        } else {
            matched as f64 / total as f64
        });
    }
    let hyp_len: usize = hypotheses.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    let brevity = if hyp_len >= ref_len || hyp_len == 0 {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let exponent = 1.0 / n as f64;
    Ok(brevity * precisions.iter().map(|p| p.powf(exponent)).product::<f64>())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Fraction of n-grams that are distinct, pooled over all sequences.
/// Sequences shorter than `n` contribute nothing; no n-grams at all is 0.
pub fn distinct_n(sequences: &[Vec<String>], n: usize) -> f64 {
    let mut seen = std::collections::HashSet::new();
    let mut total = 0usize;
    for seq in sequences {
        if seq.len() >= n {
            for window in seq.windows(n) {
                seen.insert(window);
                total += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Token-to-vector table, loaded from a text file (`token v1 v2 ... vd` per
/// line) or borrowed from a model's input embeddings.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn load(path: &Path) -> Result<WordVectors, EvalError> {
        let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut map = HashMap::new();
        let mut dim = 0usize;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| EvalError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap().to_string();
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|e| EvalError::VectorParse {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.is_empty() {
                return Err(EvalError::VectorParse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: "no vector components".into(),
                });
            }
            if dim == 0 {
                dim = values.len();
            } else if values.len() != dim {
                return Err(EvalError::VectorParse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("expected {dim} components, found {}", values.len()),
                });
            }
            map.insert(token, values);
        }
        if map.is_empty() {
            return Err(EvalError::Invalid(format!(
                "word vector file {} is empty",
                path.display()
            )));
        }
        Ok(WordVectors { dim, map })
    }

    /// Use a model's input embeddings as vectors for every vocabulary token.
    pub fn from_model(model: &SeqModel, vocab: &Vocabulary) -> Result<WordVectors, EvalError> {
        let mut map = HashMap::new();
        for id in 0..vocab.len() {
            let token = vocab
                .token_of(id)
                .ok_or_else(|| EvalError::Invalid(format!("vocab has no token for id {id}")))?;
            map.insert(token.to_string(), model.word_embedding(id)?);
        }
        Ok(WordVectors {
            dim: model.config.word_embed_dim,
            map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.map.get(token).map(Vec::as_slice)
    }

    /// Mean of the vectors of in-table tokens; None when no token is known.
    fn mean_vector(&self, tokens: &[String]) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.get(t) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        Some(acc)
    }

    /// Per-dimension value of largest magnitude across the tokens' vectors
    /// (sign preserved); None when no token is known.
    fn extrema_vector(&self, tokens: &[String]) -> Option<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        for t in tokens {
            if let Some(v) = self.get(t) {
                match &mut acc {
                    None => acc = Some(v.to_vec()),
                    Some(e) => {
                        for (a, x) in e.iter_mut().zip(v) {
                            if x.abs() > a.abs() {
                                *a = *x;
                            }
                        }
                    }
                }
            }
        }
        acc
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // Identical vectors have cosine exactly 1; computing it would round.
    if a == b {
        return Some(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine over sentence pairs, with the pairs that could not be scored
/// (no known tokens or zero-norm vectors) counted separately. `raw` keeps
/// the sign; reports clamp at zero via [`EmbeddingStat::reported`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStat {
    pub raw: f64,
    pub scored_pairs: usize,
    pub skipped_pairs: usize,
}

impl EmbeddingStat {
    pub fn reported(&self) -> f64 {
        self.raw.max(0.0)
    }

    fn from_cosines(cosines: Vec<Option<f64>>) -> EmbeddingStat {
        let scored: Vec<f64> = cosines.iter().filter_map(|c| *c).collect();
        let skipped = cosines.len() - scored.len();
        EmbeddingStat {
            raw: if scored.is_empty() {
                0.0
            } else {
                scored.iter().sum::<f64>() / scored.len() as f64
            },
            scored_pairs: scored.len(),
            skipped_pairs: skipped,
        }
    }
}

fn paired<'a>(
    a: &'a [Vec<String>],
    b: &'a [Vec<String>],
) -> Result<std::iter::Zip<std::slice::Iter<'a, Vec<String>>, std::slice::Iter<'a, Vec<String>>>, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Invalid(format!(
            "mismatched pair lists: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b.iter()))
}

/// Cosine between the mean word vectors of each pair.
pub fn embedding_average(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    wv: &WordVectors,
) -> Result<EmbeddingStat, EvalError> {
    let cosines = paired(hypotheses, references)?
        .map(|(h, r)| {
            let hv = wv.mean_vector(h)?;
            let rv = wv.mean_vector(r)?;
            cosine(&hv, &rv)
        })
        .collect();
    Ok(EmbeddingStat::from_cosines(cosines))
}

/// Cosine between the signed per-dimension extrema vectors of each pair.
pub fn vector_extrema(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    wv: &WordVectors,
) -> Result<EmbeddingStat, EvalError> {
    let cosines = paired(hypotheses, references)?
        .map(|(h, r)| {
            let hv = wv.extrema_vector(h)?;
            let rv = wv.extrema_vector(r)?;
            cosine(&hv, &rv)
        })
        .collect();
    Ok(EmbeddingStat::from_cosines(cosines))
}

/// Directed greedy match: each token of `from` takes its best cosine against
/// `to`, averaged. None when either side has no usable tokens.
fn greedy_directed(from: &[String], to: &[String], wv: &WordVectors) -> Option<f64> {
    let to_vecs: Vec<&[f64]> = to.iter().filter_map(|t| wv.get(t)).collect();
    if to_vecs.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in from {
        let Some(v) = wv.get(t) else { continue };
        let best = to_vecs
            .iter()
            .filter_map(|tv| cosine(v, tv))
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            sum += best;
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

/// Symmetric greedy matching: mean of the two directed greedy scores.
pub fn greedy_matching(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    wv: &WordVectors,
) -> Result<EmbeddingStat, EvalError> {
    let cosines = paired(hypotheses, references)?
        .map(|(h, r)| {
            let fwd = greedy_directed(h, r, wv)?;
            let bwd = greedy_directed(r, h, wv)?;
            Some((fwd + bwd) / 2.0)
        })
        .collect();
    Ok(EmbeddingStat::from_cosines(cosines))
}

/// Cosine between each query's and its response's mean vectors.
pub fn coherence(
    queries: &[Vec<String>],
    responses: &[Vec<String>],
    wv: &WordVectors,
) -> Result<EmbeddingStat, EvalError> {
    embedding_average(queries, responses, wv)
}

/// Fraction of generations whose predicted emotion matches the target.
pub fn emotion_accuracy(
    cls: &EmotionClassifier,
    generations: &[(Vec<usize>, Emotion)],
) -> Result<f64, EvalError> {
    if generations.is_empty() {
        return Err(EvalError::Invalid("no generations to grade".into()));
    }
    let mut correct = 0usize;
    for (ids, target) in generations {
        if ids.is_empty() {
            continue; // an empty rollout can never match
        }
        let (pred, _) = cls.predict(ids)?;
        if pred == *target {
            correct += 1;
        }
    }
    Ok(correct as f64 / generations.len() as f64)
}

/// Fraction of generations containing at least one lexicon word of their
/// target emotion, over generations whose target is non-Neutral (Neutral has
/// no lexicon by definition). Words from other categories do not count.
pub fn emotion_word_rate(
    generations: &[(Vec<usize>, Emotion)],
    lex: &IndexedLexicon,
) -> Result<f64, EvalError> {
    let mut hits = 0usize;
    let mut n = 0usize;
    for (ids, target) in generations {
        if *target == Emotion::Neutral {
            continue;
        }
        n += 1;
        if ids.iter().any(|&id| lex.contains_id(*target, id)) {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::Invalid(
            "emotion word rate needs at least one non-Neutral target".into(),
        ));
    }
    Ok(hits as f64 / n as f64)
}

/// One generated sample in the generations log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub query: String,
    pub e_r: String,
    pub response: String,
}

/// Everything measured over one evaluation corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub emotion_accuracy: f64,
    pub emotion_word_rate: f64,
    /// BLEU-1 through BLEU-4 against the gold responses.
    pub bleu: [f64; 4],
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub embedding_average: EmbeddingStat,
    pub vector_extrema: EmbeddingStat,
    pub greedy_matching: EmbeddingStat,
    pub coherence: EmbeddingStat,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Human-readable aligned table; embedding rows show the clamped value
    /// with the raw mean alongside.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("pairs".into(), self.pairs.to_string()),
            ("emotion_accuracy".into(), format!("{:.4}", self.emotion_accuracy)),
            ("emotion_word_rate".into(), format!("{:.4}", self.emotion_word_rate)),
        ];
        for (i, b) in self.bleu.iter().enumerate() {
            rows.push((format!("bleu_{}", i + 1), format!("{b:.4}")));
        }
        rows.push(("distinct_1".into(), format!("{:.4}", self.distinct_1)));
        rows.push(("distinct_2".into(), format!("{:.4}", self.distinct_2)));
        for (name, stat) in [
            ("embedding_average", &self.embedding_average),
            ("vector_extrema", &self.vector_extrema),
            ("greedy_matching", &self.greedy_matching),
            ("coherence", &self.coherence),
        ] {
            rows.push((
                name.into(),
                format!("{:.4} (raw {:.4}, skipped {})", stat.reported(), stat.raw, stat.skipped_pairs),
            ));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap();
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

pub fn write_generations_jsonl(
    records: &[GenerationRecord],
    path: &Path,
) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(out, "{line}").map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Decode one greedy response per (query, gold response emotion) and measure
/// every metric against the gold responses.
pub fn full_report(
    forward: &SeqModel,
    cls: &EmotionClassifier,
    corpus: &Corpus,
    lex: &IndexedLexicon,
    vocab: &Vocabulary,
    wv: &WordVectors,
) -> Result<(EvalReport, Vec<GenerationRecord>), EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Invalid("empty evaluation corpus".into()));
    }
    let mut hyp_tokens = Vec::with_capacity(corpus.len());
    let mut ref_tokens = Vec::with_capacity(corpus.len());
    let mut query_tokens = Vec::with_capacity(corpus.len());
    let mut generations = Vec::with_capacity(corpus.len());
    let mut records = Vec::with_capacity(corpus.len());
    for pair in corpus.iter() {
        let gen = forward.generate_greedy(&pair.query.ids, pair.e_r, lex)?;
        let tokens = vocab.decode(&gen.ids);
        records.push(GenerationRecord {
            query: pair.query.tokens.join(" "),
            e_r: pair.e_r.name().to_string(),
            response: tokens.join(" "),
        });
        hyp_tokens.push(tokens);
        ref_tokens.push(pair.response.tokens.clone());
        query_tokens.push(pair.query.tokens.clone());
        generations.push((gen.ids, pair.e_r));
    }

    let mut bleu = [0.0; 4];
    for (i, b) in bleu.iter_mut().enumerate() {
        *b = bleu_n(&hyp_tokens, &ref_tokens, i + 1)?;
    }
    let report = EvalReport {
        pairs: corpus.len(),
        emotion_accuracy: emotion_accuracy(cls, &generations)?,
        emotion_word_rate: emotion_word_rate(&generations, lex)?,
        bleu,
        distinct_1: distinct_n(&hyp_tokens, 1),
        distinct_2: distinct_n(&hyp_tokens, 2),
        embedding_average: embedding_average(&hyp_tokens, &ref_tokens, wv)?,
        vector_extrema: vector_extrema(&hyp_tokens, &ref_tokens, wv)?,
        greedy_matching: greedy_matching(&hyp_tokens, &ref_tokens, wv)?,
        coherence: coherence(&query_tokens, &hyp_tokens, wv)?,
    };
    Ok((report, records))
}
