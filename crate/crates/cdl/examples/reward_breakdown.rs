//! Anatomy of the training reward on real rollouts.
//!
//! For one test query the forward model produces a sampled rollout and the
//! greedy rollout that serves as its self-critical baseline. Both are scored
//! the way the trainer scores them:
//!
//! - implicit emotion reward — frozen classifier's probability of the target
//!   emotion on the rollout,
//! - explicit emotion reward — fraction of rollout tokens that are lexicon
//!   words of the target category,
//! - content reward — length-normalized probability that the backward model
//!   reconstructs the original query from the rollout.
//!
//! The example prints each term, the combined totals, and the advantage the
//! policy gradient would use, then re-scores the same rollout under the
//! emotion-only and content-only ablations to show how the flags compose.
//!
//! Needs the `gen_data` and `pretrain` artifacts. Run with:
//!
//! ```text
//! cargo run --release --example reward_breakdown [DEMO_DIR]
//! ```

use std::path::PathBuf;

use cdl::classifier::EmotionClassifier;
use cdl::corpus::{load_corpus, EmotionLexicon, IndexedLexicon, Split, Vocabulary};
use cdl::ecm::SeqModel;
use cdl::rewards::{RewardBreakdown, RewardConfig, RewardContext};
use cdl::trainer::{BACKWARD_DIR, CLASSIFIER_DIR, FORWARD_DIR};

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cdl-demo".into()));
    let data = root.join("data");
    let pre = root.join("pretrain");
    if !pre.join(FORWARD_DIR).is_dir() {
        anyhow::bail!(
            "no pretrained checkpoints at {}; run `cargo run --release --example pretrain` first",
            pre.display()
        );
    }

    let vocab = Vocabulary::load(&data.join("vocab.json"))?;
    let lexicon = EmotionLexicon::load(&data.join("lexicon.json"))?;
    let (test, _) = load_corpus(&data.join("test.tsv"), Some(&vocab), Split::Test)?;
    let lex = IndexedLexicon::new(&lexicon, &vocab);
    let vocab_hash = vocab.content_hash();
    let (forward, _) = SeqModel::load(&pre.join(FORWARD_DIR), Some(&vocab_hash))?;
    let (backward, _) = SeqModel::load(&pre.join(BACKWARD_DIR), Some(&vocab_hash))?;
    let (classifier, _) = EmotionClassifier::load(&pre.join(CLASSIFIER_DIR), Some(&vocab_hash))?;

    let pair = &test.pairs[0];
    println!("query:          {}", pair.query.tokens.join(" "));
    println!("target emotion: {}", pair.e_r.name());
    println!("gold response:  {}", pair.response.tokens.join(" "));

    let sampled = forward.generate_sample(&pair.query.ids, pair.e_r, &lex, 1.0, 42)?;
    let greedy = forward.generate_greedy(&pair.query.ids, pair.e_r, &lex)?;
    println!("\nsampled rollout: {}", vocab.decode(&sampled.ids).join(" "));
    println!("greedy rollout:  {}", vocab.decode(&greedy.ids).join(" "));

    // Score exactly as the trainer does: sampled and greedy each get the
    // full reward; greedy's total is the baseline.
    let ctx = RewardContext {
        config: RewardConfig::default(),
        cls: &classifier,
        dual: &backward,
        lex: &lex,
    };
    let sampled_parts = ctx.score(&sampled.ids, pair.e_r, &pair.query.ids, pair.e_q)?;
    let greedy_parts = ctx.score(&greedy.ids, pair.e_r, &pair.query.ids, pair.e_q)?;
    let b = RewardBreakdown::with_baseline(sampled_parts, greedy_parts.total);

    println!("\nreward breakdown of the sampled rollout:");
    println!("  implicit emotion r_e1          {:.4}", b.r_e1);
    println!("  explicit emotion r_e2          {:.4}", b.r_e2);
    println!(
        "  emotion r_e = r_e1 + {:.1}*r_e2   {:.4}",
        ctx.config.lambda, b.r_e
    );
    println!("  content  r_c                   {:.4}", b.r_c);
    println!(
        "  total    r_c + {:.1}*r_e          {:.4}",
        ctx.config.gamma, b.total
    );
    println!("  greedy baseline                {:.4}", b.baseline);
    println!("  advantage                      {:+.4}", b.advantage);

    // Ablations disable a term entirely rather than zero-weighting it.
    let emo_only = RewardContext {
        config: RewardConfig {
            content_enabled: false,
            ..RewardConfig::default()
        },
        ..ctx
    };
    let con_only = RewardContext {
        config: RewardConfig {
            emotion_enabled: false,
            ..RewardConfig::default()
        },
        ..ctx
    };
    let emo = emo_only.score(&sampled.ids, pair.e_r, &pair.query.ids, pair.e_q)?;
    let con = con_only.score(&sampled.ids, pair.e_r, &pair.query.ids, pair.e_q)?;
    println!("\nsame rollout under the ablations:");
    println!("  emotion-only total {:.4} (= gamma * r_e = {:.4})", emo.total, ctx.config.gamma * b.r_e);
    println!("  content-only total {:.4} (= r_c = {:.4})", con.total, b.r_c);
    Ok(())
}
