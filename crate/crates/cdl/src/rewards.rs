//! Reward terms for the reinforcement stage.
//!
//! A rollout is scored on two axes:
//!
//! * **emotion expression** — the classifier's probability that the rollout
//!   carries the target emotion (implicit), plus the fraction of its tokens
//!   that are lexicon words of that emotion (explicit), combined as
//!   `r_e = r_e1 + lambda * r_e2`;
//! * **content coherence** — the dual model's per-token geometric-mean
//!   probability of reconstructing the original input from the rollout,
//!   `r_c = exp(logprob / (len + 1))` (the end-of-sequence step is scored,
//!   hence the `+ 1`).
//!
//! The total is `r_c + gamma * r_e`, with either side removable for
//! ablations. Training uses a self-critical baseline: the advantage of a
//! sampled rollout is its total minus the total of the greedy rollout from
//! the same input.

use crate::classifier::{ClassifierError, EmotionClassifier};
use crate::corpus::{Emotion, IndexedLexicon};
use crate::ecm::{ModelError, SeqModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("classifier failed while scoring a rollout: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("dual model failed while scoring a rollout: {0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

/// Weights and ablation switches for reward composition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight of the explicit (lexicon word rate) term inside `r_e`.
    pub lambda: f64,
    /// Weight of the emotion reward inside the total.
    pub gamma: f64,
    /// When false, the emotion reward is neither computed nor added
    /// (content-only ablation).
    pub emotion_enabled: bool,
    /// When false, the content reward is neither computed nor added
    /// (emotion-only ablation).
    pub content_enabled: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: 1.0,
            emotion_enabled: true,
            content_enabled: true,
        }
    }
}

/// Reward terms of a single rollout. Disabled terms are recorded as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParts {
    pub r_e1: f64,
    pub r_e2: f64,
    pub r_e: f64,
    pub r_c: f64,
    pub total: f64,
}

/// Full sampled-vs-greedy reward record for one training sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_e1: f64,
    pub r_e2: f64,
    pub r_e: f64,
    pub r_c: f64,
    pub total: f64,
    /// Total reward of the greedy rollout from the same input.
    pub baseline: f64,
    /// `total - baseline`; the REINFORCE weight.
    pub advantage: f64,
}

impl RewardBreakdown {
    pub fn with_baseline(sampled: RewardParts, baseline: f64) -> RewardBreakdown {
        RewardBreakdown {
            r_e1: sampled.r_e1,
            r_e2: sampled.r_e2,
            r_e: sampled.r_e,
            r_c: sampled.r_c,
            total: sampled.total,
            baseline,
            advantage: sampled.total - baseline,
        }
    }
}

/// One line of the reward trace written during training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardTraceRecord {
    pub step: u64,
    pub direction: String,
    pub r_e1: f64,
    pub r_e2: f64,
    pub r_c: f64,
    pub total: f64,
    pub baseline: f64,
    pub advantage: f64,
}

impl RewardTraceRecord {
    pub fn new(step: u64, direction: &str, b: &RewardBreakdown) -> Self {
        Self {
            step,
            direction: direction.to_string(),
            r_e1: b.r_e1,
            r_e2: b.r_e2,
            r_c: b.r_c,
            total: b.total,
            baseline: b.baseline,
            advantage: b.advantage,
        }
    }
}

/// `r_e = r_e1 + lambda * r_e2`.
pub fn combine_emotion_reward(r_e1: f64, r_e2: f64, lambda: f64) -> f64 {
    r_e1 + lambda * r_e2
}

/// `total = r_c + gamma * r_e`, honoring the ablation switches.
pub fn combine_total_reward(config: &RewardConfig, r_c: f64, r_e: f64) -> f64 {
    let content = if config.content_enabled { r_c } else { 0.0 };
    let emotion = if config.emotion_enabled { r_e } else { 0.0 };
    content + config.gamma * emotion
}

/// Classifier probability that the rollout expresses the target emotion.
/// Empty rollouts score zero (with a warning) rather than failing the step.
pub fn implicit_emotion_reward(
    cls: &EmotionClassifier,
    ids: &[usize],
    target: Emotion,
) -> Result<f64, RewardError> {
    if ids.is_empty() {
        log::warn!("scoring an empty rollout: implicit emotion reward is 0");
        return Ok(0.0);
    }
    Ok(cls.predict_proba(ids)?[target.id()])
}

/// Fraction of rollout tokens that are lexicon words of the target emotion.
/// Neutral has no lexicon, so its rate is zero by definition.
pub fn explicit_emotion_reward(ids: &[usize], target: Emotion, lex: &IndexedLexicon) -> f64 {
    if ids.is_empty() || target == Emotion::Neutral {
        return 0.0;
    }
    let hits = ids.iter().filter(|&&id| lex.contains_id(target, id)).count();
    hits as f64 / ids.len() as f64
}

/// Per-token geometric mean of the dual model reconstructing the original
/// input from the rollout: `exp(logprob / (original_len + 1))`.
pub fn content_reward(
    dual: &SeqModel,
    rollout_ids: &[usize],
    original_ids: &[usize],
    original_emotion: Emotion,
    lex: &IndexedLexicon,
) -> Result<f64, RewardError> {
    if original_ids.is_empty() {
        return Err(RewardError::Invalid(
            "content reward needs a non-empty original side".into(),
        ));
    }
    let lp = dual.sequence_logprob(rollout_ids, original_emotion, original_ids, lex)?;
    Ok((lp / (original_ids.len() + 1) as f64).exp())
}

/// Everything needed to score rollouts in one direction: the frozen
/// classifier, the frozen dual (reconstruction) model, and the lexicon.
pub struct RewardContext<'a> {
    pub config: RewardConfig,
    pub cls: &'a EmotionClassifier,
    pub dual: &'a SeqModel,
    pub lex: &'a IndexedLexicon,
}

impl RewardContext<'_> {
    /// Score one rollout. `target_emotion` is the emotion the rollout should
    /// express; `original_ids`/`original_emotion` describe the input side the
    /// dual model must reconstruct from the rollout.
    pub fn score(
        &self,
        rollout_ids: &[usize],
        target_emotion: Emotion,
        original_ids: &[usize],
        original_emotion: Emotion,
    ) -> Result<RewardParts, RewardError> {
        let (r_e1, r_e2, r_e) = if self.config.emotion_enabled {
            let r_e1 = implicit_emotion_reward(self.cls, rollout_ids, target_emotion)?;
            let r_e2 = explicit_emotion_reward(rollout_ids, target_emotion, self.lex);
            (r_e1, r_e2, combine_emotion_reward(r_e1, r_e2, self.config.lambda))
        } else {
            (0.0, 0.0, 0.0)
        };
        let r_c = if self.config.content_enabled {
            content_reward(self.dual, rollout_ids, original_ids, original_emotion, self.lex)?
        } else {
            0.0
        };
        let total = combine_total_reward(&self.config, r_c, r_e);
        if !total.is_finite() {
            return Err(RewardError::Invalid(format!(
                "non-finite reward: r_e1={r_e1} r_e2={r_e2} r_c={r_c}"
            )));
        }
        Ok(RewardParts {
            r_e1,
            r_e2,
            r_e,
            r_c,
            total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierConfig;
    use crate::corpus::{generate_synthetic_corpus, EmotionLexicon, Vocabulary};
    use crate::ecm::{Direction, ModelConfig};
    use approx::assert_relative_eq;

    #[test]
    fn combination_arithmetic_matches_hand_cases() {
        // Classifier prob 0.6, one lexicon word in four tokens, lambda 1/2.
        assert_relative_eq!(combine_emotion_reward(0.6, 0.25, 0.5), 0.725, epsilon = 1e-12);
        // Both emotion terms saturated.
        assert_relative_eq!(combine_emotion_reward(1.0, 1.0, 0.5), 1.5, epsilon = 1e-12);
        // Full composition with gamma 1.
        let full = RewardConfig::default();
        assert_relative_eq!(combine_total_reward(&full, 0.3, 0.725), 1.025, epsilon = 1e-12);

        let emo_only = RewardConfig {
            content_enabled: false,
            ..RewardConfig::default()
        };
        assert_relative_eq!(combine_total_reward(&emo_only, 0.3, 0.725), 0.725, epsilon = 1e-12);
        let con_only = RewardConfig {
            emotion_enabled: false,
            ..RewardConfig::default()
        };
        assert_relative_eq!(combine_total_reward(&con_only, 0.3, 0.725), 0.3, epsilon = 1e-12);
    }

    fn tiny_world() -> (IndexedLexicon, Vocabulary) {
        let vocab = Vocabulary::from_tokens(
            ["joy", "glee", "rose", "stone", "river", "cloud"]
                .into_iter()
                .map(str::to_string),
        );
        let mut lex = EmotionLexicon::new();
        lex.insert(Emotion::Happy, "joy".into()).unwrap();
        lex.insert(Emotion::Happy, "glee".into()).unwrap();
        lex.insert(Emotion::Like, "rose".into()).unwrap();
        (IndexedLexicon::new(&lex, &vocab), vocab)
    }

    #[test]
    fn explicit_reward_counts_lexicon_words_by_construction() {
        let (lex, vocab) = tiny_world();
        let joy = vocab.id_of("joy").unwrap();
        let glee = vocab.id_of("glee").unwrap();
        let stone = vocab.id_of("stone").unwrap();
        let rose = vocab.id_of("rose").unwrap();

        // One Happy word out of four tokens.
        let ids = [joy, stone, stone, stone];
        assert_relative_eq!(
            explicit_emotion_reward(&ids, Emotion::Happy, &lex),
            0.25,
            epsilon = 1e-12
        );
        // Words of other categories do not count.
        assert_eq!(explicit_emotion_reward(&[rose, stone], Emotion::Happy, &lex), 0.0);
        // All tokens match.
        assert_relative_eq!(
            explicit_emotion_reward(&[joy, glee], Emotion::Happy, &lex),
            1.0,
            epsilon = 1e-12
        );
        // Neutral and empty rollouts rate zero.
        assert_eq!(explicit_emotion_reward(&ids, Emotion::Neutral, &lex), 0.0);
        assert_eq!(explicit_emotion_reward(&[], Emotion::Happy, &lex), 0.0);
    }

    #[test]
    fn implicit_reward_is_the_classifier_probability() {
        let (corpus, _, vocab) = generate_synthetic_corpus(120, 60, 3).unwrap();
        let config = ClassifierConfig {
            vocab_size: vocab.len(),
            embed_dim: 10,
            filters_per_width: 4,
            epochs: 1,
            lr: 1e-2,
            ..ClassifierConfig::default()
        };
        let (cls, _) = crate::classifier::train_classifier(&corpus, config, 5).unwrap();
        let ids = &corpus.pairs[0].response.ids;
        for e in Emotion::ALL {
            let r = implicit_emotion_reward(&cls, ids, e).unwrap();
            assert_eq!(r, cls.predict_proba(ids).unwrap()[e.id()]);
            assert!((0.0..=1.0).contains(&r));
        }
        assert_eq!(implicit_emotion_reward(&cls, &[], Emotion::Happy).unwrap(), 0.0);
    }

    #[test]
    fn content_reward_of_a_uniform_model_is_inverse_vocab() {
        let (lex, vocab) = tiny_world();
        let config = ModelConfig {
            vocab_size: vocab.len(),
            encoder_layers: 2,
            decoder_layers: 2,
            hidden_size: 5,
            word_embed_dim: 4,
            emotion_embed_dim: 3,
            num_emotions: 6,
            max_decode_len: 8,
            min_decode_len: 3,
        };
        let mut dual = SeqModel::new(config, Direction::Backward, 9).unwrap();
        dual.zero_output_heads();
        let v = vocab.len() as f64;
        let stone = vocab.id_of("stone").unwrap();
        let river = vocab.id_of("river").unwrap();
        // Neutral conditioning has no emotion head, so the zeroed generic
        // head makes every step exactly uniform.
        let r = content_reward(&dual, &[stone, river], &[river, stone, river], Emotion::Neutral, &lex)
            .unwrap();
        assert_relative_eq!(r, 1.0 / v, epsilon = 1e-12);

        // Geometric-mean form: any model, any rollout stays in (0, 1].
        let dual = SeqModel::new(
            ModelConfig {
                vocab_size: vocab.len(),
                hidden_size: 5,
                word_embed_dim: 4,
                emotion_embed_dim: 3,
                max_decode_len: 8,
                ..ModelConfig::default()
            },
            Direction::Backward,
            17,
        )
        .unwrap();
        let r = content_reward(&dual, &[stone], &[stone, stone, stone], Emotion::Happy, &lex).unwrap();
        assert!(r > 0.0 && r <= 1.0);

        assert!(content_reward(&dual, &[stone], &[], Emotion::Happy, &lex).is_err());
    }

    #[test]
    fn context_scores_compose_and_ablate_consistently() {
        let (corpus, lexicon, vocab) = generate_synthetic_corpus(120, 60, 11).unwrap();
        let lex = IndexedLexicon::new(&lexicon, &vocab);
        let cls_config = ClassifierConfig {
            vocab_size: vocab.len(),
            embed_dim: 10,
            filters_per_width: 4,
            epochs: 1,
            lr: 1e-2,
            ..ClassifierConfig::default()
        };
        let (cls, _) = crate::classifier::train_classifier(&corpus, cls_config, 5).unwrap();
        let dual = SeqModel::new(
            ModelConfig {
                vocab_size: vocab.len(),
                hidden_size: 6,
                word_embed_dim: 5,
                emotion_embed_dim: 4,
                ..ModelConfig::default()
            },
            Direction::Backward,
            23,
        )
        .unwrap();

        let full = RewardContext {
            config: RewardConfig::default(),
            cls: &cls,
            dual: &dual,
            lex: &lex,
        };
        let emo_only = RewardContext {
            config: RewardConfig {
                content_enabled: false,
                ..RewardConfig::default()
            },
            cls: &cls,
            dual: &dual,
            lex: &lex,
        };
        let con_only = RewardContext {
            config: RewardConfig {
                emotion_enabled: false,
                ..RewardConfig::default()
            },
            cls: &cls,
            dual: &dual,
            lex: &lex,
        };

        for pair in corpus.pairs.iter().take(25) {
            // Treat the gold response as a "rollout" for the forward role.
            let rollout = &pair.response.ids;
            let f = full
                .score(rollout, pair.e_r, &pair.query.ids, pair.e_q)
                .unwrap();
            assert!((0.0..=1.0).contains(&f.r_e1));
            assert!((0.0..=1.0).contains(&f.r_e2));
            assert!((0.0..=1.5).contains(&f.r_e));
            assert!(f.r_c > 0.0 && f.r_c <= 1.0);
            assert!((0.0..=2.5).contains(&f.total));
            assert_relative_eq!(f.r_e, f.r_e1 + 0.5 * f.r_e2, epsilon = 1e-12);
            assert_relative_eq!(f.total, f.r_c + f.r_e, epsilon = 1e-12);

            let e = emo_only
                .score(rollout, pair.e_r, &pair.query.ids, pair.e_q)
                .unwrap();
            assert_eq!(e.r_c, 0.0);
            assert_relative_eq!(e.total, f.r_e, epsilon = 1e-12);

            let c = con_only
                .score(rollout, pair.e_r, &pair.query.ids, pair.e_q)
                .unwrap();
            assert_eq!((c.r_e1, c.r_e2, c.r_e), (0.0, 0.0, 0.0));
            assert_relative_eq!(c.total, f.r_c, epsilon = 1e-12);
        }
    }

    #[test]
    fn advantage_is_sampled_minus_baseline() {
        let sampled = RewardParts {
            r_e1: 0.6,
            r_e2: 0.25,
            r_e: 0.725,
            r_c: 0.3,
            total: 1.025,
        };
        let b = RewardBreakdown::with_baseline(sampled, 0.9);
        assert_relative_eq!(b.advantage, 0.125, epsilon = 1e-12);
        assert_eq!(b.baseline, 0.9);

        // Identical rollouts produce a zero advantage.
        let same = RewardBreakdown::with_baseline(sampled, sampled.total);
        assert_eq!(same.advantage, 0.0);

        let rec = RewardTraceRecord::new(7, "forward", &b);
        let line = serde_json::to_string(&rec).unwrap();
        let back: RewardTraceRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.step, 7);
        assert_eq!(back.advantage, b.advantage);
    }
}
