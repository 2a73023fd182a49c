//! REINFORCE sanity check on a three-armed bandit.
//!
//! The smallest possible policy-gradient problem for a sequence model: a
//! three-word vocabulary, generation capped at a single token, and a reward
//! of 1 for emitting the lucky word and 0 otherwise. Each step samples a
//! handful of one-token rollouts, subtracts the greedy rollout's reward as a
//! self-critical baseline, and applies the same batched policy-gradient
//! update the full trainer uses.
//!
//! Watch the probability of the lucky word climb from near-uniform (the
//! softmax also covers the four bookkeeping symbols, so chance is ~1/7)
//! past 0.9 — if this ever stops working, nothing downstream can learn
//! either.
//! Standalone; no pipeline artifacts needed. Run with:
//!
//! ```text
//! cargo run --release --example bandit_reinforce
//! ```

use cdl::corpus::{Emotion, EmotionLexicon, IndexedLexicon, Vocabulary};
use cdl::ecm::{Direction, ModelConfig, PolicyItem, SeqModel};
use cdl::optim::Adam;

fn main() -> anyhow::Result<()> {
    let vocab = Vocabulary::from_tokens(["win", "lose", "meh"].map(String::from));
    let lex = IndexedLexicon::new(&EmotionLexicon::new(), &vocab);
    let lucky = vocab.id_of("win").expect("vocabulary has the lucky word");
    let query = vocab.encode(&["meh".to_string()]);

    let config = ModelConfig {
        vocab_size: vocab.len(),
        hidden_size: 8,
        word_embed_dim: 6,
        emotion_embed_dim: 4,
        encoder_layers: 1,
        decoder_layers: 1,
        max_decode_len: 1,
        min_decode_len: 1,
        ..ModelConfig::default()
    };
    let mut model = SeqModel::new(config, Direction::Forward, 3)?;
    let mut opt = Adam::new(model.params(), 0.02);

    let p_lucky = |m: &SeqModel| -> anyhow::Result<f64> {
        let (_, trace) = m.forward_loss_traced(&query.ids, &[lucky], Emotion::Neutral, &lex)?;
        Ok(trace.gold_probs[0])
    };

    let reward = |ids: &[usize]| f64::from(ids.first() == Some(&lucky));

    println!("p(win) by policy-gradient step:");
    println!("  step {:>4}: {:.3}", 0, p_lucky(&model)?);
    let samples_per_step = 4;
    for step in 1..=500u64 {
        let greedy = model.generate_greedy(&query.ids, Emotion::Neutral, &lex)?;
        let baseline = reward(&greedy.ids);

        let rollouts: Vec<Vec<usize>> = (0..samples_per_step)
            .map(|s| {
                let seed = step * samples_per_step + s;
                Ok(model
                    .generate_sample(&query.ids, Emotion::Neutral, &lex, 1.0, seed)?
                    .ids)
            })
            .collect::<anyhow::Result<_>>()?;
        let items: Vec<PolicyItem> = rollouts
            .iter()
            .map(|ids| PolicyItem {
                input: &query.ids,
                emotion: Emotion::Neutral,
                sampled: ids,
                advantage: reward(ids) - baseline,
            })
            .collect();
        model.policy_gradient_batch(&items, &lex, &mut opt, Some(5.0))?;

        if step % 50 == 0 {
            println!("  step {:>4}: {:.3}", step, p_lucky(&model)?);
        }
    }

    let final_p = p_lucky(&model)?;
    if final_p >= 0.9 {
        println!("\nthe policy learned the lucky arm (p = {final_p:.3})");
    } else {
        println!("\np(win) = {final_p:.3} after 500 steps — expected >= 0.9");
    }
    Ok(())
}
