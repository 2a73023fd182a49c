//! Emotion-conditioned attentive GRU encoder-decoder (ECM-style).
//!
//! One `SeqModel` holds the parameters of a single direction: the forward
//! model maps query → response conditioned on the response emotion, the
//! backward model maps response → query conditioned on the query emotion.
//! Emotion conditioning has three mechanisms:
//!
//! 1. the emotion-category embedding is concatenated to the decoder input at
//!    every step;
//! 2. an internal emotion memory (initialized to the category embedding) is
//!    read through a gate into the decoder input and eroded by a write gate
//!    after each step, with its final norm added to the training loss so the
//!    model is pushed to "spend" the emotion by the time it finishes;
//! 3. an external-vocabulary gate: two softmax heads over the lexicon
//!    partition (emotion words vs everything else) mixed by a scalar gate
//!    `alpha_t`, supervised by which kind of word the gold token is.
//!
//! Training loss per sample: `-Σ_t ln o_t(gold_t) - Σ_t q_t ln(alpha_t) +
//! ‖M‖` where `q_t` is 1 iff the gold token is an emotion word of the target
//! category. The negative log-likelihood also scores the end-of-sequence
//! step (q_t = 0 there); the memory norm is taken after the final content
//! step's write.

use crate::corpus::{DialoguePair, Emotion, IndexedLexicon, Utterance, Vocabulary};
use crate::corpus::{BOS_ID, EOS_ID, PAD_ID, UNK_ID};
use crate::optim::{clip_grad_norm, Adam};
use crate::tensor::{Grads, ParamId, ParamStore, Tape, Tensor, Var};
use ndarray::IxDyn;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::rc::Rc;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} out of vocabulary range {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("non-finite {what} encountered{context}")]
    NonFinite { what: String, context: String },
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

impl From<crate::ckpt::BlobError> for ModelError {
    fn from(e: crate::ckpt::BlobError) -> Self {
        use crate::ckpt::BlobError;
        match e {
            BlobError::Io { path, source } => ModelError::Io { path, source },
            BlobError::Integrity { expected, found } => ModelError::Integrity { expected, found },
            BlobError::Size { expected, found } => {
                ModelError::Invalid(format!("blob holds {found} bytes but the model needs {expected}"))
            }
        }
    }
}

/// Which mapping a model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// query → response, conditioned on the response emotion.
    Forward,
    /// response → query, conditioned on the query emotion.
    Backward,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// Architecture hyperparameters of one sequence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_size: usize,
    pub word_embed_dim: usize,
    pub emotion_embed_dim: usize,
    pub num_emotions: usize,
    pub max_decode_len: usize,
    pub min_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 40_000,
            encoder_layers: 2,
            decoder_layers: 2,
            hidden_size: 256,
            word_embed_dim: 100,
            emotion_embed_dim: 100,
            num_emotions: crate::corpus::EMOTION_COUNT,
            max_decode_len: 30,
            min_decode_len: 3,
        }
    }
}

impl ModelConfig {
    /// Default dimensions with the vocabulary size filled in.
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("hidden_size", self.hidden_size),
            ("word_embed_dim", self.word_embed_dim),
            ("emotion_embed_dim", self.emotion_embed_dim),
            ("max_decode_len", self.max_decode_len),
            ("min_decode_len", self.min_decode_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.num_emotions != crate::corpus::EMOTION_COUNT {
            return Err(ModelError::Config(format!(
                "num_emotions must be {}, got {}",
                crate::corpus::EMOTION_COUNT,
                self.num_emotions
            )));
        }
        if self.vocab_size <= UNK_ID {
            return Err(ModelError::Config(
                "vocab_size must cover the 4 special symbols".into(),
            ));
        }
        if self.min_decode_len > self.max_decode_len {
            return Err(ModelError::Config(format!(
                "min_decode_len {} exceeds max_decode_len {}",
                self.min_decode_len, self.max_decode_len
            )));
        }
        Ok(())
    }

    /// Closed-form total parameter count for this configuration.
    pub fn param_count(&self) -> usize {
        let (v, h) = (self.vocab_size, self.hidden_size);
        let (dw, de) = (self.word_embed_dim, self.emotion_embed_dim);
        let gru = |input: usize| 3 * (h * input + h * h + h);
        let mut n = v * dw + self.num_emotions * de;
        for l in 0..self.encoder_layers {
            n += gru(if l == 0 { dw } else { h });
        }
        let dec_in = dw + 2 * de + h; // word emb + emotion emb + context + memory read
        for l in 0..self.decoder_layers {
            n += gru(if l == 0 { dec_in } else { h });
        }
        n += 2 * (h * h) + h; // additive attention: two projections + score vector
        n += de * (dw + 2 * h) + de; // memory read gate
        n += de * h + de; // memory write gate
        n += h + 1; // emotion/generic type gate
        n += 2 * (v * 2 * h + v); // generic + emotion output heads
        n
    }
}

/// Loss terms of one (batch of) training sample(s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Cross-entropy of gold tokens (end-of-sequence step included).
    pub nll: f64,
    /// Word-type supervision: −Σ q_t ln(alpha_t) over steps whose gold token
    /// is an emotion word of the target category.
    pub type_loss: f64,
    /// Norm of the internal emotion memory after the final content step.
    pub memory_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Assemble the loss from per-step quantities: the model's probability of
    /// each gold token, the emotion-gate probability paired with whether the
    /// gold token is an emotion word, and the final internal-memory norm.
    ///
    /// This is the scalar-level definition the graph-based loss must match;
    /// it exists so the loss arithmetic can be pinned by hand-computed cases.
    pub fn from_steps(
        gold_probs: &[f64],
        alpha_steps: &[(f64, bool)],
        memory_norm: f64,
    ) -> LossBreakdown {
        let nll: f64 = gold_probs.iter().map(|p| -p.ln()).sum();
        let type_loss: f64 = alpha_steps
            .iter()
            .filter(|(_, is_emotion_word)| *is_emotion_word)
            .map(|(alpha, _)| -alpha.ln())
            .sum();
        LossBreakdown {
            nll,
            type_loss,
            memory_reg: memory_norm,
            total: nll + type_loss + memory_norm,
        }
    }

    fn zero() -> LossBreakdown {
        LossBreakdown {
            nll: 0.0,
            type_loss: 0.0,
            memory_reg: 0.0,
            total: 0.0,
        }
    }

    fn add(&mut self, other: &LossBreakdown) {
        self.nll += other.nll;
        self.type_loss += other.type_loss;
        self.memory_reg += other.memory_reg;
        self.total += other.total;
    }

    fn scale(&mut self, k: f64) {
        self.nll *= k;
        self.type_loss *= k;
        self.memory_reg *= k;
        self.total *= k;
    }
}

/// Output of one decode: content token ids (no specials), the log-probability
/// of every scored step (content tokens followed by the end-of-sequence
/// step), and how the decode terminated.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub ids: Vec<usize>,
    /// Per-step natural log-probabilities at temperature 1; the last entry is
    /// always the end-of-sequence step, so the sum equals
    /// [`SeqModel::sequence_logprob`] of `ids`.
    pub logprobs: Vec<f64>,
    /// False when the decode was cut at the maximum length instead of
    /// choosing the end symbol itself.
    pub eos_chosen: bool,
}

impl Generated {
    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }

    pub fn into_utterance(self, vocab: &Vocabulary) -> Utterance {
        Utterance {
            tokens: vocab.decode(&self.ids),
            ids: self.ids,
        }
    }
}

/// One rollout to reinforce: the conditioning input, the sampled content
/// tokens, and the pre-computed advantage (reward minus baseline).
#[derive(Debug, Clone, Copy)]
pub struct PolicyItem<'a> {
    pub input: &'a [usize],
    pub emotion: Emotion,
    pub sampled: &'a [usize],
    pub advantage: f64,
}

/// What a policy-gradient batch actually did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyBatchStats {
    /// Rollouts that contributed to the update.
    pub scored: usize,
    /// Rollouts dropped for non-finite advantage or log-probability.
    pub skipped: usize,
    /// Mean sequence log-probability of the scored rollouts.
    pub mean_logprob: f64,
    /// Global gradient norm after batch averaging, before clipping.
    pub grad_norm: f64,
}

/// Ids of every named parameter tensor.
#[derive(Debug, Clone)]
struct GruIds {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wn: ParamId,
    un: ParamId,
    bn: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    word_emb: ParamId,
    emo_emb: ParamId,
    encoder: Vec<GruIds>,
    decoder: Vec<GruIds>,
    attn_w: ParamId,
    attn_u: ParamId,
    attn_v: ParamId,
    read_w: ParamId,
    read_b: ParamId,
    write_w: ParamId,
    write_b: ParamId,
    alpha_w: ParamId,
    alpha_b: ParamId,
    gen_w: ParamId,
    gen_b: ParamId,
    emo_w: ParamId,
    emo_b: ParamId,
}

/// One emotion-conditioned encoder-decoder.
#[derive(Debug, Clone)]
pub struct SeqModel {
    pub config: ModelConfig,
    direction: Direction,
    params: ParamStore,
    layout: Layout,
}

fn xavier(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Tensor {
    let lim = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_shape_fn(IxDyn(&[rows, cols]), |_| rng.random_range(-lim..lim))
}

fn xavier_vec(rng: &mut ChaCha12Rng, n: usize) -> Tensor {
    let lim = (6.0 / (n + 1) as f64).sqrt();
    Tensor::from_shape_fn(IxDyn(&[n]), |_| rng.random_range(-lim..lim))
}

fn embedding(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_shape_fn(IxDyn(&[rows, cols]), |_| rng.random_range(-0.1..0.1))
}

impl SeqModel {
    /// Initialize a model deterministically from a seed. Biases start at
    /// zero, which puts the emotion/generic gate near 0.5 initially.
    pub fn new(config: ModelConfig, direction: Direction, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (v, h) = (config.vocab_size, config.hidden_size);
        let (dw, de) = (config.word_embed_dim, config.emotion_embed_dim);

        let word_emb = p.add("word_emb", embedding(&mut rng, v, dw));
        let emo_emb = p.add("emo_emb", embedding(&mut rng, config.num_emotions, de));

        let gru_layer = |p: &mut ParamStore, rng: &mut ChaCha12Rng, name: String, input: usize| {
            GruIds {
                wz: p.add(format!("{name}.wz"), xavier(rng, h, input)),
                uz: p.add(format!("{name}.uz"), xavier(rng, h, h)),
                bz: p.add(format!("{name}.bz"), Tensor::zeros(IxDyn(&[h]))),
                wr: p.add(format!("{name}.wr"), xavier(rng, h, input)),
                ur: p.add(format!("{name}.ur"), xavier(rng, h, h)),
                br: p.add(format!("{name}.br"), Tensor::zeros(IxDyn(&[h]))),
                wn: p.add(format!("{name}.wn"), xavier(rng, h, input)),
                un: p.add(format!("{name}.un"), xavier(rng, h, h)),
                bn: p.add(format!("{name}.bn"), Tensor::zeros(IxDyn(&[h]))),
            }
        };

        let encoder: Vec<GruIds> = (0..config.encoder_layers)
            .map(|l| {
                let input = if l == 0 { dw } else { h };
                gru_layer(&mut p, &mut rng, format!("enc{l}"), input)
            })
            .collect();
        let dec_in = dw + 2 * de + h;
        let decoder: Vec<GruIds> = (0..config.decoder_layers)
            .map(|l| {
                let input = if l == 0 { dec_in } else { h };
                gru_layer(&mut p, &mut rng, format!("dec{l}"), input)
            })
            .collect();

        let layout = Layout {
            word_emb,
            emo_emb,
            encoder,
            decoder,
            attn_w: p.add("attn.w", xavier(&mut rng, h, h)),
            attn_u: p.add("attn.u", xavier(&mut rng, h, h)),
            attn_v: p.add("attn.v", xavier_vec(&mut rng, h)),
            read_w: p.add("mem.read_w", xavier(&mut rng, de, dw + 2 * h)),
            read_b: p.add("mem.read_b", Tensor::zeros(IxDyn(&[de]))),
            write_w: p.add("mem.write_w", xavier(&mut rng, de, h)),
            write_b: p.add("mem.write_b", Tensor::zeros(IxDyn(&[de]))),
            alpha_w: p.add("alpha.w", xavier_vec(&mut rng, h)),
            alpha_b: p.add("alpha.b", Tensor::zeros(IxDyn(&[1]))),
            gen_w: p.add("out.generic_w", xavier(&mut rng, v, 2 * h)),
            gen_b: p.add("out.generic_b", Tensor::zeros(IxDyn(&[v]))),
            emo_w: p.add("out.emotion_w", xavier(&mut rng, v, 2 * h)),
            emo_b: p.add("out.emotion_b", Tensor::zeros(IxDyn(&[v]))),
        };

        debug_assert_eq!(p.total_elements(), config.param_count());
        Ok(Self {
            config,
            direction,
            params: p,
            layout,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable parameter access for diagnostics (finite-difference probes,
    /// hand-crafted initializations). Training code goes through the update
    /// methods instead.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zero both output heads, making every step's distribution uniform over
    /// the vocabulary when the target category has no emotion words. Used by
    /// tests that need an exactly-uniform scorer.
    #[cfg(test)]
    pub(crate) fn zero_output_heads(&mut self) {
        for id in [
            self.layout.gen_w,
            self.layout.gen_b,
            self.layout.emo_w,
            self.layout.emo_b,
        ] {
            self.params.get_mut(id).fill(0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.total_elements()
    }

    /// SHA-256 fingerprint of all parameters.
    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    /// Input embedding of one token; evaluation uses these as fallback word
    /// vectors when no external vector file is supplied.
    pub fn word_embedding(&self, token_id: usize) -> Result<Vec<f64>, ModelError> {
        if token_id >= self.config.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                id: token_id,
                vocab: self.config.vocab_size,
            });
        }
        let emb = self.params.get(self.layout.word_emb);
        Ok((0..self.config.word_embed_dim)
            .map(|j| emb[[token_id, j]])
            .collect())
    }

    /// Input ids, target ids, and conditioning emotion for a pair, according
    /// to this model's direction.
    pub fn roles<'a>(&self, pair: &'a DialoguePair) -> (&'a [usize], &'a [usize], Emotion) {
        match self.direction {
            Direction::Forward => (&pair.query.ids, &pair.response.ids, pair.e_r),
            Direction::Backward => (&pair.response.ids, &pair.query.ids, pair.e_q),
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        for &id in ids {
            if id >= self.config.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn gru_step(
        &self,
        tape: &mut Tape,
        ids: &GruIds,
        bound: &mut BoundParams,
        x: Var,
        h: Var,
    ) -> Var {
        let p = |tape: &mut Tape, bound: &mut BoundParams, id: ParamId| bound.get(tape, &self.params, id);
        let wzx = {
            let w = p(tape, bound, ids.wz);
            tape.matvec(w, x)
        };
        let uzh = {
            let u = p(tape, bound, ids.uz);
            tape.matvec(u, h)
        };
        let bz = p(tape, bound, ids.bz);
        let z = {
            let s = tape.add_n(&[wzx, uzh, bz]);
            tape.sigmoid(s)
        };
        let wrx = {
            let w = p(tape, bound, ids.wr);
            tape.matvec(w, x)
        };
        let urh = {
            let u = p(tape, bound, ids.ur);
            tape.matvec(u, h)
        };
        let br = p(tape, bound, ids.br);
        let r = {
            let s = tape.add_n(&[wrx, urh, br]);
            tape.sigmoid(s)
        };
        let rh = tape.mul(r, h);
        let wnx = {
            let w = p(tape, bound, ids.wn);
            tape.matvec(w, x)
        };
        let unrh = {
            let u = p(tape, bound, ids.un);
            tape.matvec(u, rh)
        };
        let bn = p(tape, bound, ids.bn);
        let n = {
            let s = tape.add_n(&[wnx, unrh, bn]);
            tape.tanh(s)
        };
        // h' = z ⊙ h + (1 − z) ⊙ n
        let zh = tape.mul(z, h);
        let oz = tape.one_minus(z);
        let ozn = tape.mul(oz, n);
        tape.add(zh, ozn)
    }

    /// Run the encoder over the input ids (PAD ids are skipped, so padding
    /// never changes the computation). Returns per-step top-layer states and
    /// the final state of every layer. Empty inputs fall back to a single
    /// UNK step so downstream attention always has at least one state.
    fn encode(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        input_ids: &[usize],
    ) -> (Vec<Var>, Vec<Var>) {
        let h = self.config.hidden_size;
        let mut filtered: Vec<usize> = input_ids.iter().copied().filter(|&i| i != PAD_ID).collect();
        if filtered.is_empty() {
            filtered.push(UNK_ID);
        }
        let zero = tape.constant(Tensor::zeros(IxDyn(&[h])));
        let mut states: Vec<Var> = vec![zero; self.config.encoder_layers];
        let mut top_states = Vec::with_capacity(filtered.len());
        let word_emb = bound.get(tape, &self.params, self.layout.word_emb);
        for &id in &filtered {
            let mut x = tape.row(word_emb, id);
            for (l, gru) in self.layout.encoder.iter().enumerate() {
                let next = self.gru_step(tape, gru, bound, x, states[l]);
                states[l] = next;
                x = next;
            }
            top_states.push(*states.last().unwrap());
        }
        (top_states, states)
    }

    /// Precompute the attention projection of every encoder state.
    fn attention_proj(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        top_states: &[Var],
    ) -> Vec<Var> {
        let u = bound.get(tape, &self.params, self.layout.attn_u);
        top_states.iter().map(|&s| tape.matvec(u, s)).collect()
    }

    fn attention_context(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        enc_matrix: Var,
        enc_proj: &[Var],
        s_prev: Var,
    ) -> Var {
        let w = bound.get(tape, &self.params, self.layout.attn_w);
        let ws = tape.matvec(w, s_prev);
        let v = bound.get(tape, &self.params, self.layout.attn_v);
        let scores: Vec<Var> = enc_proj
            .iter()
            .map(|&proj| {
                let sum = tape.add(ws, proj);
                let act = tape.tanh(sum);
                tape.dot(v, act)
            })
            .collect();
        let score_vec = tape.concat(&scores);
        let weights = tape.softmax(score_vec);
        tape.vecmat(weights, enc_matrix)
    }

    fn decode_init(&self, finals: &[Var]) -> Vec<Var> {
        // Decoder layer l starts from encoder layer l's final state; if the
        // decoder is deeper, extra layers reuse the top encoder state.
        (0..self.config.decoder_layers)
            .map(|l| finals[l.min(finals.len() - 1)])
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn decode_step(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        ctx: &DecodeCtx,
        states: &mut Vec<Var>,
        memory: &mut Var,
        input_id: usize,
    ) -> StepOut {
        let word_emb = bound.get(tape, &self.params, self.layout.word_emb);
        let x = tape.row(word_emb, input_id);
        let s_prev = *states.last().unwrap();
        let c = self.attention_context(tape, bound, ctx.enc_matrix, &ctx.enc_proj, s_prev);

        // Internal memory read: gate from [x; s_prev; c], scaled memory joins
        // the decoder input.
        let gate_in = tape.concat(&[x, s_prev, c]);
        let read_w = bound.get(tape, &self.params, self.layout.read_w);
        let read_b = bound.get(tape, &self.params, self.layout.read_b);
        let g_r = {
            let lin = tape.matvec(read_w, gate_in);
            let lin = tape.add(lin, read_b);
            tape.sigmoid(lin)
        };
        let read = tape.mul(g_r, *memory);

        let mut layer_in = tape.concat(&[x, ctx.emotion_emb, c, read]);
        for (l, gru) in self.layout.decoder.iter().enumerate() {
            let next = self.gru_step(tape, gru, bound, layer_in, states[l]);
            states[l] = next;
            layer_in = next;
        }
        let s_top = *states.last().unwrap();

        // Internal memory write: erode the memory elementwise; gates in (0,1)
        // make the norm non-increasing.
        let write_w = bound.get(tape, &self.params, self.layout.write_w);
        let write_b = bound.get(tape, &self.params, self.layout.write_b);
        let g_w = {
            let lin = tape.matvec(write_w, s_top);
            let lin = tape.add(lin, write_b);
            tape.sigmoid(lin)
        };
        *memory = tape.mul(g_w, *memory);

        // Output: two masked softmax heads over [s_top; c], mixed by the
        // emotion/generic gate. Categories without in-vocabulary emotion
        // words use the generic head alone (its mask is then all-true).
        let features = tape.concat(&[s_top, c]);
        let gen_w = bound.get(tape, &self.params, self.layout.gen_w);
        let gen_b = bound.get(tape, &self.params, self.layout.gen_b);
        let gen_logits = {
            let lin = tape.matvec(gen_w, features);
            tape.add(lin, gen_b)
        };
        let p_generic = tape.masked_softmax(gen_logits, Rc::clone(&ctx.generic_mask));

        if ctx.emotion_active {
            let alpha = {
                let aw = bound.get(tape, &self.params, self.layout.alpha_w);
                let ab = bound.get(tape, &self.params, self.layout.alpha_b);
                let lin = tape.dot(aw, s_top);
                let lin = tape.add(lin, ab);
                tape.sigmoid(lin)
            };
            let emo_w = bound.get(tape, &self.params, self.layout.emo_w);
            let emo_b = bound.get(tape, &self.params, self.layout.emo_b);
            let emo_logits = {
                let lin = tape.matvec(emo_w, features);
                tape.add(lin, emo_b)
            };
            let p_emotion = tape.masked_softmax(emo_logits, Rc::clone(&ctx.emotion_mask));
            let weighted_emo = tape.broadcast_mul(alpha, p_emotion);
            let one_minus_alpha = tape.one_minus(alpha);
            let weighted_gen = tape.broadcast_mul(one_minus_alpha, p_generic);
            let o = tape.add(weighted_emo, weighted_gen);
            StepOut {
                o,
                alpha: Some(alpha),
            }
        } else {
            StepOut {
                o: p_generic,
                alpha: None,
            }
        }
    }

    fn build_ctx(
        &self,
        tape: &mut Tape,
        bound: &mut BoundParams,
        input_ids: &[usize],
        emotion: Emotion,
        lex: &IndexedLexicon,
    ) -> DecodeCtx {
        let (top_states, finals) = self.encode(tape, bound, input_ids);
        let enc_matrix = tape.stack_rows(&top_states);
        let enc_proj = self.attention_proj(tape, bound, &top_states);
        let emo_emb = bound.get(tape, &self.params, self.layout.emo_emb);
        let emotion_emb = tape.row(emo_emb, emotion.id());
        let emotion_active = !lex.is_effectively_empty(emotion);
        DecodeCtx {
            enc_matrix,
            enc_proj,
            emotion_emb,
            emotion_mask: Rc::clone(lex.emotion_mask(emotion)),
            generic_mask: Rc::clone(lex.generic_mask(emotion)),
            emotion_active,
            init_states: self.decode_init(&finals),
        }
    }

    /// Teacher-forced loss graph over `target_ids` + EOS.
    fn loss_graph(
        &self,
        tape: &mut Tape,
        input_ids: &[usize],
        target_ids: &[usize],
        emotion: Emotion,
        lex: &IndexedLexicon,
    ) -> Result<LossGraph, ModelError> {
        self.check_ids(input_ids)?;
        self.check_ids(target_ids)?;
        if target_ids.is_empty() {
            return Err(ModelError::Invalid("empty target sequence".into()));
        }
        let mut bound = BoundParams::new(self.params.len());
        let ctx = self.build_ctx(tape, &mut bound, input_ids, emotion, lex);
        let mut states = ctx.init_states.clone();
        let emo_emb = bound.get(tape, &self.params, self.layout.emo_emb);
        let mut memory = tape.row(emo_emb, emotion.id());

        let mut nll_terms = Vec::new();
        let mut type_terms = Vec::new();
        let mut trace = StepTrace::default();
        let mut memory_reg: Option<Var> = None;
        let mut prev = BOS_ID;
        let steps: Vec<usize> = target_ids.iter().copied().chain([EOS_ID]).collect();
        for (t, &gold) in steps.iter().enumerate() {
            let out = self.decode_step(tape, &mut bound, &ctx, &mut states, &mut memory, prev);
            let p_gold = tape.index(out.o, gold);
            let lp = tape.ln(p_gold);
            nll_terms.push(tape.scale(lp, -1.0));
            let alpha_val = out.alpha.map(|a| tape.scalar_value(a)).unwrap_or(0.0);
            let is_emotion_word = lex.contains_id(emotion, gold);
            if is_emotion_word {
                // q_t = 1: supervise the gate toward the emotion head. Steps
                // with q_t = 0 contribute nothing (no complement term).
                let a = out.alpha.expect("emotion word implies active emotion head");
                let ln_a = tape.ln(a);
                type_terms.push(tape.scale(ln_a, -1.0));
            }
            trace.gold_probs.push(tape.scalar_value(p_gold));
            trace.alphas.push(alpha_val);
            trace.is_emotion_word.push(is_emotion_word);
            trace
                .memory_norms
                .push(tape.value(memory).iter().map(|x| x * x).sum::<f64>().sqrt());
            trace.o_sums.push(tape.value(out.o).sum());
            if t + 1 == target_ids.len() {
                // Final content step: the memory norm after this write is the
                // regularizer ("spent" emotion by the time content ends).
                memory_reg = Some(tape.l2_norm(memory));
            }
            prev = gold;
        }

        let nll = tape.add_n(&nll_terms);
        let type_loss = if type_terms.is_empty() {
            tape.constant_scalar(0.0)
        } else {
            tape.add_n(&type_terms)
        };
        let memory_reg = memory_reg.expect("at least one content step");
        let total = {
            let a = tape.add(nll, type_loss);
            tape.add(a, memory_reg)
        };
        Ok(LossGraph {
            nll,
            type_loss,
            memory_reg,
            total,
            trace,
        })
    }

    /// Training loss of one pair under this model's direction.
    pub fn forward_loss(
        &self,
        pair: &DialoguePair,
        target_emotion: Emotion,
        lex: &IndexedLexicon,
    ) -> Result<LossBreakdown, ModelError> {
        let (input, target, _) = self.roles(pair);
        let mut tape = Tape::new();
        let graph = self.loss_graph(&mut tape, input, target, target_emotion, lex)?;
        Ok(graph.breakdown(&tape))
    }

    /// Loss plus per-step probe values; used by tests and diagnostics.
    pub fn forward_loss_traced(
        &self,
        input_ids: &[usize],
        target_ids: &[usize],
        emotion: Emotion,
        lex: &IndexedLexicon,
    ) -> Result<(LossBreakdown, StepTrace), ModelError> {
        let mut tape = Tape::new();
        let graph = self.loss_graph(&mut tape, input_ids, target_ids, emotion, lex)?;
        let b = graph.breakdown(&tape);
        Ok((b, graph.trace))
    }

    /// Loss together with its gradients, without touching the parameters.
    /// This is the quantity [`SeqModel::mle_update`] steps on for a single
    /// pair; exposed for gradient checking and diagnostics.
    pub fn loss_gradients(
        &self,
        pair: &DialoguePair,
        target_emotion: Emotion,
        lex: &IndexedLexicon,
    ) -> Result<(LossBreakdown, Grads), ModelError> {
        let (input, target, _) = self.roles(pair);
        let mut tape = Tape::new();
        let graph = self.loss_graph(&mut tape, input, target, target_emotion, lex)?;
        let mut grads = Grads::zeros(&self.params);
        tape.backward(graph.total, 1.0, &mut grads);
        Ok((graph.breakdown(&tape), grads))
    }

    /// Sum of gold-token log-probabilities (end-of-sequence step included).
    pub fn sequence_logprob(
        &self,
        input_ids: &[usize],
        emotion: Emotion,
        target_ids: &[usize],
        lex: &IndexedLexicon,
    ) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let graph = self.loss_graph(&mut tape, input_ids, target_ids, emotion, lex)?;
        Ok(-tape.scalar_value(graph.nll))
    }

    /// One optimizer step on the batch-mean loss; returns the pre-step loss.
    /// Gradients are clipped to `grad_clip` (global norm) when given.
    pub fn mle_update(
        &mut self,
        batch: &[&DialoguePair],
        lex: &IndexedLexicon,
        opt: &mut Adam,
        grad_clip: Option<f64>,
    ) -> Result<LossBreakdown, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Invalid("empty batch".into()));
        }
        let mut grads = Grads::zeros(&self.params);
        let mut mean = LossBreakdown::zero();
        let scale = 1.0 / batch.len() as f64;
        for pair in batch {
            let (input, target, emotion) = self.roles(pair);
            let mut tape = Tape::new();
            let graph = self.loss_graph(&mut tape, input, target, emotion, lex)?;
            let b = graph.breakdown(&tape);
            if !b.total.is_finite() {
                return Err(ModelError::NonFinite {
                    what: "training loss".into(),
                    context: format!(" (pair index {})", pair.index),
                });
            }
            mean.add(&b);
            tape.backward(graph.total, scale, &mut grads);
        }
        mean.scale(scale);
        if grads.has_non_finite() {
            return Err(ModelError::NonFinite {
                what: "gradient".into(),
                context: String::new(),
            });
        }
        if let Some(max_norm) = grad_clip {
            clip_grad_norm(&mut grads, max_norm);
        }
        opt.step(&mut self.params, &grads);
        Ok(mean)
    }

    /// REINFORCE update on a batch of rollouts: one optimizer step on the
    /// mean of `-advantage · Σ ln o_t(sampled_t)` (end-of-sequence step
    /// included) over the scorable items. Items with a non-finite advantage
    /// or log-probability are skipped (and counted) rather than poisoning
    /// the batch; if nothing survives, the parameters are left untouched.
    pub fn policy_gradient_batch(
        &mut self,
        items: &[PolicyItem<'_>],
        lex: &IndexedLexicon,
        opt: &mut Adam,
        grad_clip: Option<f64>,
    ) -> Result<PolicyBatchStats, ModelError> {
        let mut grads = Grads::zeros(&self.params);
        let mut scored = 0usize;
        let mut skipped = 0usize;
        let mut logprob_sum = 0.0;
        for item in items {
            if !item.advantage.is_finite() {
                log::warn!("skipping rollout with non-finite advantage {}", item.advantage);
                skipped += 1;
                continue;
            }
            let mut tape = Tape::new();
            let graph = self.loss_graph(&mut tape, item.input, item.sampled, item.emotion, lex)?;
            let logprob = -tape.scalar_value(graph.nll);
            if !logprob.is_finite() {
                log::warn!("skipping rollout with non-finite log-probability");
                skipped += 1;
                continue;
            }
            // d(-advantage · logprob)/dθ = advantage · d(nll)/dθ
            tape.backward(graph.nll, item.advantage, &mut grads);
            logprob_sum += logprob;
            scored += 1;
        }
        if scored == 0 {
            return Ok(PolicyBatchStats {
                scored,
                skipped,
                mean_logprob: 0.0,
                grad_norm: 0.0,
            });
        }
        grads.scale(1.0 / scored as f64);
        if grads.has_non_finite() {
            return Err(ModelError::NonFinite {
                what: "policy gradient".into(),
                context: String::new(),
            });
        }
        let grad_norm = match grad_clip {
            Some(max_norm) => clip_grad_norm(&mut grads, max_norm),
            None => grads.global_norm(),
        };
        opt.step(&mut self.params, &grads);
        Ok(PolicyBatchStats {
            scored,
            skipped,
            mean_logprob: logprob_sum / scored as f64,
            grad_norm,
        })
    }

    /// Single-rollout REINFORCE update; returns the sequence log-probability.
    pub fn policy_gradient_update(
        &mut self,
        input_ids: &[usize],
        emotion: Emotion,
        sampled_ids: &[usize],
        advantage: f64,
        lex: &IndexedLexicon,
        opt: &mut Adam,
        grad_clip: Option<f64>,
    ) -> Result<f64, ModelError> {
        if !advantage.is_finite() {
            return Err(ModelError::NonFinite {
                what: "advantage".into(),
                context: String::new(),
            });
        }
        let item = PolicyItem {
            input: input_ids,
            emotion,
            sampled: sampled_ids,
            advantage,
        };
        let stats = self.policy_gradient_batch(&[item], lex, opt, grad_clip)?;
        if stats.scored == 0 {
            return Err(ModelError::NonFinite {
                what: "sequence log-probability".into(),
                context: String::new(),
            });
        }
        Ok(stats.mean_logprob)
    }

    fn decode_loop(
        &self,
        input_ids: &[usize],
        emotion: Emotion,
        lex: &IndexedLexicon,
        mut choose: impl FnMut(&Tensor, usize) -> usize,
    ) -> Result<Generated, ModelError> {
        self.check_ids(input_ids)?;
        let mut tape = Tape::new();
        let mut bound = BoundParams::new(self.params.len());
        let ctx = self.build_ctx(&mut tape, &mut bound, input_ids, emotion, lex);
        let mut states = ctx.init_states.clone();
        let emo_emb = bound.get(&mut tape, &self.params, self.layout.emo_emb);
        let mut memory = tape.row(emo_emb, emotion.id());

        let mut ids = Vec::new();
        let mut logprobs = Vec::new();
        let mut prev = BOS_ID;
        loop {
            let out =
                self.decode_step(&mut tape, &mut bound, &ctx, &mut states, &mut memory, prev);
            let o = tape.value(out.o).clone();
            if ids.len() >= self.config.max_decode_len {
                // Length cutoff: close the sequence with the end symbol's
                // probability at this extra step, so the log-probs always sum
                // to the full sequence score.
                logprobs.push(o[EOS_ID].ln());
                return Ok(Generated {
                    ids,
                    logprobs,
                    eos_chosen: false,
                });
            }
            let token = choose(&o, ids.len());
            logprobs.push(o[token].ln());
            if token == EOS_ID {
                return Ok(Generated {
                    ids,
                    logprobs,
                    eos_chosen: true,
                });
            }
            ids.push(token);
            prev = token;
        }
    }

    /// Greedy decode: per-step argmax over the full token distribution, with
    /// the end symbol excluded before `min_decode_len` content tokens; ties
    /// go to the lowest token id. Deterministic.
    pub fn generate_greedy(
        &self,
        input_ids: &[usize],
        emotion: Emotion,
        lex: &IndexedLexicon,
    ) -> Result<Generated, ModelError> {
        let min_len = self.config.min_decode_len;
        self.decode_loop(input_ids, emotion, lex, move |o, produced| {
            let mut best = usize::MAX;
            let mut best_p = f64::NEG_INFINITY;
            for (i, &p) in o.iter().enumerate() {
                if i == EOS_ID && produced < min_len {
                    continue;
                }
                if p > best_p {
                    best_p = p;
                    best = i;
                }
            }
            best
        })
    }

    /// Sampled decode from the temperature-scaled token distribution
    /// (`p ∝ o^(1/temperature)`), end symbol masked out before the minimum
    /// length. Reported log-probs are at temperature 1. Reproducible from
    /// the seed.
    pub fn generate_sample(
        &self,
        input_ids: &[usize],
        emotion: Emotion,
        lex: &IndexedLexicon,
        temperature: f64,
        seed: u64,
    ) -> Result<Generated, ModelError> {
        if !(temperature > 0.0) {
            return Err(ModelError::Invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let min_len = self.config.min_decode_len;
        self.decode_loop(input_ids, emotion, lex, move |o, produced| {
            let mut weights: Vec<f64> = o.iter().copied().collect();
            if produced < min_len {
                weights[EOS_ID] = 0.0;
            }
            if (temperature - 1.0).abs() > 1e-12 {
                // Normalize by the largest weight before exponentiating so
                // cold temperatures sharpen toward the argmax instead of
                // underflowing everything to zero.
                let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for w in &mut weights {
                    *w = (*w / max).powf(1.0 / temperature);
                }
            }
            let total: f64 = weights.iter().sum();
            let mut x = rng.random::<f64>() * total;
            for (i, &w) in weights.iter().enumerate() {
                x -= w;
                if x < 0.0 {
                    return i;
                }
            }
            // Float round-off can leave a sliver; fall back to the best token.
            weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
    }

    /// Write the checkpoint: a little-endian `f64` parameter blob plus a JSON
    /// sidecar carrying the config, direction, vocabulary hash, training
    /// step, and the blob digest.
    pub fn save(&self, dir: &Path, vocab_hash: &str, step: u64) -> Result<(), ModelError> {
        let digest = crate::ckpt::write_param_blob(dir, &self.params)?;
        let sidecar = CheckpointMeta {
            kind: "seq-model".into(),
            config: self.config.clone(),
            direction: self.direction,
            vocab_hash: vocab_hash.to_string(),
            step,
            blob_sha256: digest,
        };
        let meta_path = dir.join("model.json");
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&meta_path, text).map_err(|source| ModelError::Io {
            path: meta_path.display().to_string(),
            source,
        })
    }

    /// Load a checkpoint written by [`SeqModel::save`]. When
    /// `expected_vocab_hash` is given it must match the sidecar. The blob is
    /// integrity-checked against the stored digest.
    pub fn load(
        dir: &Path,
        expected_vocab_hash: Option<&str>,
    ) -> Result<(SeqModel, CheckpointMeta), ModelError> {
        let meta_path = dir.join("model.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|source| ModelError::Io {
            path: meta_path.display().to_string(),
            source,
        })?;
        let meta: CheckpointMeta =
            serde_json::from_str(&text).map_err(|e| ModelError::Sidecar {
                path: meta_path.display().to_string(),
                message: e.to_string(),
            })?;
        if meta.kind != "seq-model" {
            return Err(ModelError::Sidecar {
                path: meta_path.display().to_string(),
                message: format!("expected kind \"seq-model\", found {:?}", meta.kind),
            });
        }
        if let Some(expected) = expected_vocab_hash {
            if meta.vocab_hash != expected {
                return Err(ModelError::VocabMismatch {
                    expected: meta.vocab_hash.clone(),
                    found: expected.to_string(),
                });
            }
        }
        let mut model = SeqModel::new(meta.config.clone(), meta.direction, 0)?;
        let flat = crate::ckpt::read_param_blob(
            dir,
            &meta.blob_sha256,
            model.params.total_elements(),
        )?;
        model
            .params
            .load_flat(&flat)
            .map_err(ModelError::Invalid)?;
        Ok((model, meta))
    }
}

/// JSON sidecar stored next to the parameter blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: ModelConfig,
    pub direction: Direction,
    pub vocab_hash: String,
    pub step: u64,
    pub blob_sha256: String,
}

/// Per-step probe values captured by [`SeqModel::forward_loss_traced`].
#[derive(Debug, Clone, Default)]
pub struct StepTrace {
    pub gold_probs: Vec<f64>,
    pub alphas: Vec<f64>,
    pub is_emotion_word: Vec<bool>,
    pub memory_norms: Vec<f64>,
    pub o_sums: Vec<f64>,
}

struct StepOut {
    o: Var,
    alpha: Option<Var>,
}

struct DecodeCtx {
    enc_matrix: Var,
    enc_proj: Vec<Var>,
    emotion_emb: Var,
    emotion_mask: Rc<Vec<bool>>,
    generic_mask: Rc<Vec<bool>>,
    emotion_active: bool,
    init_states: Vec<Var>,
}

struct LossGraph {
    nll: Var,
    type_loss: Var,
    memory_reg: Var,
    total: Var,
    trace: StepTrace,
}

impl LossGraph {
    fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            nll: tape.scalar_value(self.nll),
            type_loss: tape.scalar_value(self.type_loss),
            memory_reg: tape.scalar_value(self.memory_reg),
            total: tape.scalar_value(self.total),
        }
    }
}

/// Cache of parameter bindings onto a tape, so each parameter becomes one
/// leaf no matter how many steps reference it (keeps gradients accumulated in
/// a single slot and the tape small).
struct BoundParams {
    vars: Vec<Option<Var>>,
}

impl BoundParams {
    fn new(n: usize) -> Self {
        Self {
            vars: vec![None; n],
        }
    }

    fn get(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.index()] {
            return v;
        }
        let v = tape.param(store, id);
        self.vars[id.index()] = Some(v);
        v
    }
}
