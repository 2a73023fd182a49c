//! Dialogue data model: emotion categories, utterances, corpora, vocabulary,
//! emotion lexicon, file ingestion, and a synthetic corpus generator.
//!
//! The synthetic generator is what makes the whole training stack testable at
//! desk scale: it emits emotion-tagged query/response pairs whose emotion is
//! carried by disjoint per-category marker tokens and whose content follows a
//! learnable token bijection, with difficulty tiers (length, noise, and
//! deliberately conflicting emotion markers) so that curriculum ordering has
//! real signal to find.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::rc::Rc;

/// Minimum content tokens per utterance (special symbols excluded).
pub const MIN_CONTENT_LEN: usize = 3;
/// Maximum content tokens per utterance.
pub const MAX_CONTENT_LEN: usize = 30;

/// Number of emotion categories.
pub const EMOTION_COUNT: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unknown emotion name {0:?}")]
    UnknownEmotion(String),
    #[error("lexicon word {word:?} listed under both {first} and {second}")]
    DuplicateLexiconWord {
        word: String,
        first: Emotion,
        second: Emotion,
    },
    #[error("the Neutral category must have an empty lexicon, found {0} words")]
    NonEmptyNeutral(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Emotion category with a fixed id↔name mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Emotion {
    Neutral,
    Like,
    Sad,
    Disgust,
    Angry,
    Happy,
}

impl Emotion {
    pub const ALL: [Emotion; EMOTION_COUNT] = [
        Emotion::Neutral,
        Emotion::Like,
        Emotion::Sad,
        Emotion::Disgust,
        Emotion::Angry,
        Emotion::Happy,
    ];

    pub fn id(self) -> usize {
        match self {
            Emotion::Neutral => 0,
            Emotion::Like => 1,
            Emotion::Sad => 2,
            Emotion::Disgust => 3,
            Emotion::Angry => 4,
            Emotion::Happy => 5,
        }
    }

    pub fn from_id(id: usize) -> Option<Emotion> {
        Emotion::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "Neutral",
            Emotion::Like => "Like",
            Emotion::Sad => "Sad",
            Emotion::Disgust => "Disgust",
            Emotion::Angry => "Angry",
            Emotion::Happy => "Happy",
        }
    }

    pub fn from_name(name: &str) -> Result<Emotion, CorpusError> {
        Emotion::ALL
            .iter()
            .copied()
            .find(|e| e.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| CorpusError::UnknownEmotion(name.to_string()))
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Token sequence plus its vocabulary encoding.
///
/// `ids` is empty until the utterance is encoded against a vocabulary;
/// `tokens` always holds the surface forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
}

impl Utterance {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        Self {
            tokens,
            ids: Vec::new(),
        }
    }

    /// Number of content tokens (no special symbols are ever stored).
    pub fn content_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_encoded(&self) -> bool {
        self.ids.len() == self.tokens.len()
    }
}

/// One labeled query/response training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub query: Utterance,
    pub response: Utterance,
    pub e_q: Emotion,
    pub e_r: Emotion,
    /// Stable position within its corpus (0-based, no gaps).
    pub index: usize,
}

/// Corpus split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Ordered collection of dialogue pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub pairs: Vec<DialoguePair>,
    pub split: Split,
}

impl Corpus {
    pub fn new(mut pairs: Vec<DialoguePair>, split: Split) -> Self {
        for (i, p) in pairs.iter_mut().enumerate() {
            p.index = i;
        }
        Self { pairs, split }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DialoguePair> {
        self.pairs.iter()
    }

    /// Re-encode every utterance against `vocab`, in place.
    pub fn encode(&mut self, vocab: &Vocabulary) {
        for pair in &mut self.pairs {
            pair.query = vocab.encode(&pair.query.tokens);
            pair.response = vocab.encode(&pair.response.tokens);
        }
    }
}

/// Reserved special-symbol ids.
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token↔id mapping with PAD/BOS/EOS/UNK reserved at ids 0–3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from an explicit list of non-special tokens in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }

    /// Total entries including the 4 specials.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Encode surface tokens; OOV maps to UNK.
    pub fn encode(&self, tokens: &[String]) -> Utterance {
        let ids = tokens
            .iter()
            .map(|t| self.id_of(t).unwrap_or(UNK_ID))
            .collect();
        Utterance {
            tokens: tokens.to_vec(),
            ids,
        }
    }

    /// Decode ids back to surface tokens (specials included verbatim).
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| {
                self.token_of(i)
                    .unwrap_or(SPECIAL_TOKENS[UNK_ID])
                    .to_string()
            })
            .collect()
    }

    /// SHA-256 over the full id→token listing; identifies the vocabulary in
    /// checkpoints.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.id_to_token {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }

    /// Write non-special tokens, one per line, line i holding id i+4.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let body = self.id_to_token[4..].join("\n");
        std::fs::write(path, body + "\n").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_tokens(
            text.lines().filter(|l| !l.is_empty()).map(str::to_string),
        ))
    }
}

/// Encode surface tokens against a vocabulary (OOV → UNK).
pub fn encode_utterance(tokens: &[String], vocab: &Vocabulary) -> Utterance {
    vocab.encode(tokens)
}

/// Decode ids to surface tokens.
pub fn decode_utterance(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    vocab.decode(ids)
}

/// Build a vocabulary from corpus tokens: ranked by frequency (descending),
/// ties broken lexicographically, truncated to `max_size` non-special entries.
pub fn build_vocabulary(corpus: &Corpus, max_size: usize) -> Result<Vocabulary, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Invalid(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for pair in corpus.iter() {
        for tok in pair.query.tokens.iter().chain(pair.response.tokens.iter()) {
            *freq.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    Ok(Vocabulary::from_tokens(
        ranked.into_iter().map(|(t, _)| t.to_string()),
    ))
}

/// Per-category emotion word sets; Neutral is always empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmotionLexicon {
    sets: [BTreeSet<String>; EMOTION_COUNT],
}

impl EmotionLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a word under a category, enforcing cross-category disjointness
    /// and the empty-Neutral rule.
    pub fn insert(&mut self, category: Emotion, word: String) -> Result<(), CorpusError> {
        if category == Emotion::Neutral {
            return Err(CorpusError::NonEmptyNeutral(1));
        }
        for other in Emotion::ALL {
            if other != category && self.sets[other.id()].contains(&word) {
                return Err(CorpusError::DuplicateLexiconWord {
                    word,
                    first: other,
                    second: category,
                });
            }
        }
        self.sets[category.id()].insert(word);
        Ok(())
    }

    pub fn words(&self, category: Emotion) -> &BTreeSet<String> {
        &self.sets[category.id()]
    }

    pub fn contains(&self, category: Emotion, word: &str) -> bool {
        self.sets[category.id()].contains(word)
    }

    pub fn size(&self, category: Emotion) -> usize {
        self.sets[category.id()].len()
    }

    /// Load from a JSON object mapping category name → array of words.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
        let mut lex = EmotionLexicon::new();
        for (name, words) in raw {
            let category = Emotion::from_name(&name)?;
            if category == Emotion::Neutral {
                if !words.is_empty() {
                    return Err(CorpusError::NonEmptyNeutral(words.len()));
                }
                continue;
            }
            for w in words {
                lex.insert(category, w)?;
            }
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let map: BTreeMap<&str, Vec<&String>> = Emotion::ALL
            .iter()
            .map(|e| (e.name(), self.sets[e.id()].iter().collect()))
            .collect();
        let text = serde_json::to_string_pretty(&map).expect("lexicon serializes");
        std::fs::write(path, text).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Vocabulary-indexed view of an [`EmotionLexicon`]: per-category id sets and
/// boolean masks over the vocabulary, shared cheaply with decoder graphs.
///
/// The emotion mask of a category covers its in-vocabulary lexicon words; the
/// generic mask is the complement (special symbols always count as generic).
/// A category whose words are all out-of-vocabulary gets an all-false emotion
/// mask and is treated like Neutral by the decoder.
#[derive(Debug, Clone)]
pub struct IndexedLexicon {
    emotion_masks: [Rc<Vec<bool>>; EMOTION_COUNT],
    generic_masks: [Rc<Vec<bool>>; EMOTION_COUNT],
    id_sets: [BTreeSet<usize>; EMOTION_COUNT],
    vocab_size: usize,
}

impl IndexedLexicon {
    pub fn new(lexicon: &EmotionLexicon, vocab: &Vocabulary) -> Self {
        let v = vocab.len();
        let mut emotion_masks: Vec<Rc<Vec<bool>>> = Vec::with_capacity(EMOTION_COUNT);
        let mut generic_masks: Vec<Rc<Vec<bool>>> = Vec::with_capacity(EMOTION_COUNT);
        let mut id_sets: Vec<BTreeSet<usize>> = Vec::with_capacity(EMOTION_COUNT);
        for e in Emotion::ALL {
            let ids: BTreeSet<usize> = lexicon
                .words(e)
                .iter()
                .filter_map(|w| vocab.id_of(w))
                .collect();
            let mut emask = vec![false; v];
            for &i in &ids {
                emask[i] = true;
            }
            let gmask: Vec<bool> = emask.iter().map(|&b| !b).collect();
            emotion_masks.push(Rc::new(emask));
            generic_masks.push(Rc::new(gmask));
            id_sets.push(ids);
        }
        Self {
            emotion_masks: emotion_masks.try_into().unwrap(),
            generic_masks: generic_masks.try_into().unwrap(),
            id_sets: id_sets.try_into().unwrap(),
            vocab_size: v,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn emotion_mask(&self, e: Emotion) -> &Rc<Vec<bool>> {
        &self.emotion_masks[e.id()]
    }

    pub fn generic_mask(&self, e: Emotion) -> &Rc<Vec<bool>> {
        &self.generic_masks[e.id()]
    }

    pub fn ids(&self, e: Emotion) -> &BTreeSet<usize> {
        &self.id_sets[e.id()]
    }

    /// True when the category has no in-vocabulary emotion words (always true
    /// for Neutral); such categories use the plain generic decoding path.
    pub fn is_effectively_empty(&self, e: Emotion) -> bool {
        self.id_sets[e.id()].is_empty()
    }

    pub fn contains_id(&self, e: Emotion, id: usize) -> bool {
        self.id_sets[e.id()].contains(&id)
    }
}

fn parse_tokens(field: &str) -> Vec<String> {
    field
        .split_whitespace()
        .map(str::to_string)
        .collect::<Vec<_>>()
}

fn length_ok(tokens: &[String]) -> bool {
    (MIN_CONTENT_LEN..=MAX_CONTENT_LEN).contains(&tokens.len())
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    query: Vec<String>,
    q_emotion: String,
    response: Vec<String>,
    r_emotion: String,
}

/// Load a corpus file, dropping (and counting) pairs that violate the
/// 3..=30 content-length bounds. Records are tab-separated
/// (`query<TAB>q_emotion<TAB>response<TAB>r_emotion`, tokens space-separated)
/// unless the file extension is `.jsonl`/`.ndjson`, which selects the
/// JSON-lines reader. Utterances are encoded when a vocabulary is supplied.
pub fn load_corpus(
    path: &Path,
    vocab: Option<&Vocabulary>,
    split: Split,
) -> Result<(Corpus, usize), CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let json_lines = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    );

    let mut pairs = Vec::new();
    let mut dropped = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let (q_tokens, e_q, r_tokens, e_r) = if json_lines {
            let rec: JsonRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                    path: path.display().to_string(),
                    line: lineno,
                    message: e.to_string(),
                })?;
            (
                rec.query,
                Emotion::from_name(&rec.q_emotion)?,
                rec.response,
                Emotion::from_name(&rec.r_emotion)?,
            )
        } else {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(CorpusError::Parse {
                    path: path.display().to_string(),
                    line: lineno,
                    message: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            (
                parse_tokens(fields[0]),
                Emotion::from_name(fields[1])?,
                parse_tokens(fields[2]),
                Emotion::from_name(fields[3])?,
            )
        };

        if !length_ok(&q_tokens) || !length_ok(&r_tokens) {
            dropped += 1;
            continue;
        }
        let (query, response) = match vocab {
            Some(v) => (v.encode(&q_tokens), v.encode(&r_tokens)),
            None => (
                Utterance::from_tokens(q_tokens),
                Utterance::from_tokens(r_tokens),
            ),
        };
        pairs.push(DialoguePair {
            query,
            response,
            e_q,
            e_r,
            index: 0,
        });
    }
    Ok((Corpus::new(pairs, split), dropped))
}

/// Write a corpus in the tab-separated format read by [`load_corpus`].
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|source| {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    })?);
    for pair in corpus.iter() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            pair.query.tokens.join(" "),
            pair.e_q,
            pair.response.tokens.join(" "),
            pair.e_r
        )
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Deterministically split a corpus into train/valid/test by shuffled
/// assignment. Sizes are `floor(r0·n)`, `floor(r1·n)`, and the remainder.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    let (r0, r1, r2) = ratios;
    if r0 <= 0.0 || r1 <= 0.0 || r2 <= 0.0 || (r0 + r1 + r2 - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Invalid(format!(
            "split ratios must be positive and sum to 1, got ({r0}, {r1}, {r2})"
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = (r0 * n as f64).floor() as usize;
    let n_valid = (r1 * n as f64).floor() as usize;
    let take = |idx: &[usize], split| {
        Corpus::new(
            idx.iter().map(|&i| corpus.pairs[i].clone()).collect(),
            split,
        )
    };
    Ok((
        take(&order[..n_train], Split::Train),
        take(&order[n_train..n_train + n_valid], Split::Valid),
        take(&order[n_train + n_valid..], Split::Test),
    ))
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

/// Difficulty tiers used by the generator. Easy pairs are short, carry two
/// emotion markers, and have little noise; hard pairs are long, carry one
/// marker, more noise, and a slice of them ("conflicted" samples) additionally
/// contains markers of two other categories on both sides, which makes their
/// labels genuinely hard for a classifier and their targets noisy to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tier {
    Easy,
    Medium,
    Hard,
}

impl Tier {
    fn sample(rng: &mut ChaCha12Rng) -> Tier {
        let x: f64 = rng.random();
        if x < 0.5 {
            Tier::Easy
        } else if x < 0.8 {
            Tier::Medium
        } else {
            Tier::Hard
        }
    }

    fn content_len(self, rng: &mut ChaCha12Rng) -> usize {
        match self {
            Tier::Easy => rng.random_range(3..=5),
            Tier::Medium => rng.random_range(6..=9),
            Tier::Hard => rng.random_range(10..=14),
        }
    }

    fn emotion_marks(self, rng: &mut ChaCha12Rng) -> usize {
        match self {
            Tier::Easy => 2,
            Tier::Medium => rng.random_range(1..=2),
            Tier::Hard => 1,
        }
    }

    fn noise(self) -> f64 {
        match self {
            Tier::Easy => 0.05,
            Tier::Medium => 0.10,
            Tier::Hard => 0.20,
        }
    }
}

/// Fraction of hard-tier pairs that get conflicting emotion markers.
const CONFLICT_FRACTION: f64 = 0.15;

/// Training-set emotion counts from the source dataset, used as sampling
/// marginals (order: Neutral, Like, Sad, Disgust, Angry, Happy).
const QUERY_EMOTION_COUNTS: [f64; EMOTION_COUNT] =
    [335_138.0, 257_471.0, 128_482.0, 184_427.0, 79_611.0, 120_358.0];
const RESPONSE_EMOTION_COUNTS: [f64; EMOTION_COUNT] =
    [195_553.0, 197_565.0, 179_215.0, 197_428.0, 138_198.0, 197_528.0];

fn sample_categorical(rng: &mut ChaCha12Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        x -= w;
        if x < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Normalized emotion marginals used by the generator.
pub fn reference_emotion_marginals() -> ([f64; EMOTION_COUNT], [f64; EMOTION_COUNT]) {
    let norm = |counts: &[f64; EMOTION_COUNT]| {
        let total: f64 = counts.iter().sum();
        let mut out = [0.0; EMOTION_COUNT];
        for (o, c) in out.iter_mut().zip(counts.iter()) {
            *o = c / total;
        }
        out
    };
    (
        norm(&QUERY_EMOTION_COUNTS),
        norm(&RESPONSE_EMOTION_COUNTS),
    )
}

struct MarkerPicker {
    /// Shuffled marker words per category, cycled round-robin per side so
    /// every lexicon word shows up in the corpus early.
    words: [Vec<String>; EMOTION_COUNT],
    cursors: [usize; EMOTION_COUNT],
}

impl MarkerPicker {
    fn new(lexicon: &EmotionLexicon, rng: &mut ChaCha12Rng) -> Self {
        let mut words: [Vec<String>; EMOTION_COUNT] = Default::default();
        for e in Emotion::ALL {
            let mut w: Vec<String> = lexicon.words(e).iter().cloned().collect();
            w.shuffle(rng);
            words[e.id()] = w;
        }
        Self {
            words,
            cursors: [0; EMOTION_COUNT],
        }
    }

    fn next(&mut self, e: Emotion) -> String {
        let list = &self.words[e.id()];
        let w = list[self.cursors[e.id()] % list.len()].clone();
        self.cursors[e.id()] += 1;
        w
    }
}

/// Generate a deterministic synthetic corpus plus its lexicon and vocabulary.
///
/// Construction guarantees:
/// - every non-Neutral query/response contains ≥1 marker of its own category;
/// - category marker sets are disjoint;
/// - response content is a fixed bijective image of query content plus
///   bounded replacement noise, so the mapping is learnable;
/// - the first 36 pairs cover all (e_q, e_r) combinations, the rest follow
///   the reference emotion marginals;
/// - byte-identical output for equal `(n_pairs, vocab_size, seed)`.
pub fn generate_synthetic_corpus(
    n_pairs: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<(Corpus, EmotionLexicon, Vocabulary), CorpusError> {
    const COMBOS: usize = EMOTION_COUNT * EMOTION_COUNT;
    if n_pairs < 60 {
        return Err(CorpusError::Invalid(format!(
            "n_pairs must be at least 60 to cover all {COMBOS} emotion combinations \
             with margin, got {n_pairs}"
        )));
    }
    if vocab_size < 60 {
        return Err(CorpusError::Invalid(format!(
            "vocab_size must be at least 60, got {vocab_size}"
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // Budget: 4 specials, then 5 marker sets, then content split evenly into
    // query-side and response-side alphabets linked by index.
    let markers_per_category = (vocab_size / 20).max(3);
    let content_budget = vocab_size - 4 - 5 * markers_per_category;
    let half = content_budget / 2;
    if half < 4 {
        return Err(CorpusError::Invalid(format!(
            "vocab_size {vocab_size} leaves too little room for content tokens"
        )));
    }

    let mut lexicon = EmotionLexicon::new();
    for e in Emotion::ALL {
        if e == Emotion::Neutral {
            continue;
        }
        for k in 0..markers_per_category {
            lexicon
                .insert(e, format!("{}_w{k}", e.name().to_lowercase()))
                .expect("generated markers are disjoint");
        }
    }
    let query_alphabet: Vec<String> = (0..half).map(|i| format!("c{i}")).collect();
    let response_alphabet: Vec<String> = (0..half).map(|i| format!("d{i}")).collect();

    let mut picker = MarkerPicker::new(&lexicon, &mut rng);
    let (q_marginal, r_marginal) = reference_emotion_marginals();

    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let (e_q, e_r) = if i < COMBOS {
            (
                Emotion::from_id(i / EMOTION_COUNT).unwrap(),
                Emotion::from_id(i % EMOTION_COUNT).unwrap(),
            )
        } else {
            (
                Emotion::from_id(sample_categorical(&mut rng, &q_marginal)).unwrap(),
                Emotion::from_id(sample_categorical(&mut rng, &r_marginal)).unwrap(),
            )
        };
        let tier = Tier::sample(&mut rng);
        let conflicted = tier == Tier::Hard && rng.random::<f64>() < CONFLICT_FRACTION;

        // Shared content skeleton: indices into the linked alphabets.
        let len = tier.content_len(&mut rng);
        let q_marks = if e_q == Emotion::Neutral {
            0
        } else {
            tier.emotion_marks(&mut rng)
        };
        let r_marks = if e_r == Emotion::Neutral {
            0
        } else {
            tier.emotion_marks(&mut rng)
        };
        // Shared content must keep BOTH sides within length bounds: query
        // length = content + q_marks, response length = content + r_marks.
        let content_len = (len.saturating_sub(q_marks))
            .max(MIN_CONTENT_LEN.saturating_sub(r_marks))
            .max(MIN_CONTENT_LEN.saturating_sub(q_marks))
            .max(1);
        let skeleton: Vec<usize> = (0..content_len)
            .map(|_| rng.random_range(0..half))
            .collect();

        let mut q_tokens: Vec<String> = skeleton
            .iter()
            .map(|&ix| query_alphabet[ix].clone())
            .collect();
        let mut r_tokens: Vec<String> = skeleton
            .iter()
            .map(|&ix| {
                // Bounded replacement noise on the response side only, so the
                // query keeps the clean source sequence.
                if rng.random::<f64>() < tier.noise() {
                    response_alphabet[rng.random_range(0..half)].clone()
                } else {
                    response_alphabet[ix].clone()
                }
            })
            .collect();

        let splice = |tokens: &mut Vec<String>, word: String, rng: &mut ChaCha12Rng| {
            let pos = rng.random_range(0..=tokens.len());
            tokens.insert(pos, word);
        };
        for _ in 0..q_marks {
            let w = picker.next(e_q);
            splice(&mut q_tokens, w, &mut rng);
        }
        for _ in 0..r_marks {
            let w = picker.next(e_r);
            splice(&mut r_tokens, w, &mut rng);
        }
        if conflicted {
            // Two markers from two distinct other categories, on both sides.
            for side_emotion in [e_q, e_r] {
                let others: Vec<Emotion> = Emotion::ALL
                    .into_iter()
                    .filter(|&e| e != Emotion::Neutral && e != side_emotion)
                    .collect();
                let mut chosen = others;
                chosen.shuffle(&mut rng);
                chosen.truncate(2);
                let target = if side_emotion == e_q {
                    &mut q_tokens
                } else {
                    &mut r_tokens
                };
                // Borrow gymnastics: pick both words first.
                let w0 = picker.next(chosen[0]);
                let w1 = picker.next(chosen[1]);
                splice(target, w0, &mut rng);
                splice(target, w1, &mut rng);
            }
        }

        debug_assert!(length_ok(&q_tokens) && length_ok(&r_tokens));
        pairs.push(DialoguePair {
            query: Utterance::from_tokens(q_tokens),
            response: Utterance::from_tokens(r_tokens),
            e_q,
            e_r,
            index: 0,
        });
    }

    let mut corpus = Corpus::new(pairs, Split::Train);
    let vocab = build_vocabulary(&corpus, vocab_size)?;
    corpus.encode(&vocab);
    Ok((corpus, lexicon, vocab))
}
