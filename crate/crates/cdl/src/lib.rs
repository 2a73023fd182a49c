//! Curriculum dual learning (CDL) for emotion-controllable dialogue generation.
//!
//! The crate trains a pair of emotion-conditioned seq2seq models (query -> response
//! and response -> query) as a dual task: after maximum-likelihood pretraining, both
//! directions are fine-tuned with REINFORCE against a reward that combines emotion
//! expression (classifier probability plus emotion-word rate) with content coherence
//! (reconstruction probability under the dual model), while a competence-based
//! curriculum feeds easy samples first.
//!
//! Module map:
//! - [`tensor`]: tape-based reverse-mode autodiff over small dense `f64` tensors
//! - [`optim`]: Adam optimizer and gradient-norm clipping
//! - [`corpus`]: dialogue corpus I/O, vocabulary, emotion lexicon, synthetic data
//! - [`ecm`]: emotion-conditioned GRU encoder-decoder with internal/external memory
//! - [`classifier`]: TextCNN emotion classifier used for rewards and evaluation
//! - [`rewards`]: emotion / content reward terms and self-critical advantage
//! - [`curriculum`]: difficulty ranking, competence schedule, curriculum sampling
//! - [`trainer`]: pretraining and the alternating dual REINFORCE training loop
//! - [`eval`]: BLEU, distinct-n, embedding metrics, emotion metrics, reports
//! - [`config`]: run configuration file covering all components
//! - [`cli`]: command-line entry points (`gen-data`, `pretrain`, `train-cdl`, ...)

mod ckpt;

pub mod classifier;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod curriculum;
pub mod ecm;
pub mod eval;
pub mod optim;
pub mod rewards;
pub mod tensor;
pub mod trainer;
