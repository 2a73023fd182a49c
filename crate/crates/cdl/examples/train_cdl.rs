//! Dual REINFORCE fine-tuning on top of the pretrained checkpoints.
//!
//! Each iteration updates the forward model and then the backward model:
//! sample rollouts from a curriculum batch, score them with the frozen
//! classifier (emotion reward) and the dual model (content reward), apply a
//! policy gradient weighted by the self-critical advantage, then a teacher
//! forcing step on the same gold pairs. Validation measures how often the
//! classifier agrees with the requested emotion on greedy decodes.
//!
//! Needs the `gen_data` and `pretrain` artifacts. Run with:
//!
//! ```text
//! cargo run --release --example train_cdl [DEMO_DIR] [ABLATION]
//! ```
//!
//! `ABLATION` is one of `full` (default), `emo` (emotion reward only),
//! `con` (content reward only), or `dl` (no curriculum).

use std::path::PathBuf;

use cdl::classifier::EmotionClassifier;
use cdl::cli::{PretrainSummary, PRETRAIN_SUMMARY_FILE};
use cdl::corpus::{load_corpus, EmotionLexicon, IndexedLexicon, Split, Vocabulary};
use cdl::curriculum::CurriculumConfig;
use cdl::ecm::SeqModel;
use cdl::trainer::{
    AblationMode, DualTrainer, Pretrained, StepRecord, TrainerConfig, BACKWARD_DIR,
    CLASSIFIER_DIR, FORWARD_DIR, STEP_LOG_FILE,
};

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cdl-demo".into()));
    let ablation = match std::env::args().nth(2) {
        Some(label) => AblationMode::from_label(&label)?,
        None => AblationMode::Full,
    };
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
    let (train, _) = load_corpus(&data.join("train.tsv"), Some(&vocab), Split::Train)?;
    let (valid, _) = load_corpus(&data.join("valid.tsv"), Some(&vocab), Split::Valid)?;
    let lex = IndexedLexicon::new(&lexicon, &vocab);
    let vocab_hash = vocab.content_hash();

    let (forward, _) = SeqModel::load(&pre.join(FORWARD_DIR), Some(&vocab_hash))?;
    let (backward, _) = SeqModel::load(&pre.join(BACKWARD_DIR), Some(&vocab_hash))?;
    let (classifier, _) = EmotionClassifier::load(&pre.join(CLASSIFIER_DIR), Some(&vocab_hash))?;
    let summary: PretrainSummary =
        serde_json::from_str(&std::fs::read_to_string(pre.join(PRETRAIN_SUMMARY_FILE))?)?;
    let pretrained = Pretrained {
        forward,
        backward,
        classifier,
        classifier_summary: summary.classifier,
        epochs: summary.epochs,
        forward_nll_floor: summary.forward_nll_floor,
        backward_nll_floor: summary.backward_nll_floor,
        seeds: summary.seeds,
    };

    // Short demo run with the competence schedule compressed to match, so
    // the frontier sweeps from a tenth of the corpus to all of it.
    let config = TrainerConfig {
        cdl_lr: 1e-3,
        batch_size: 8,
        max_steps: 60,
        validation_interval: 10,
        patience: 5,
        ablation,
        curriculum: CurriculumConfig {
            total_steps: 50,
            ..CurriculumConfig::default()
        },
        seed: 0,
        ..TrainerConfig::default()
    };
    println!(
        "dual fine-tuning: {} iterations, batch {}, ablation {}",
        config.max_steps,
        config.batch_size,
        config.ablation.label()
    );

    let out = root.join("train");
    std::fs::create_dir_all(&out)?;
    let mut trainer = DualTrainer::new(pretrained, train, valid, lex, vocab_hash, config)?;
    let outcome = trainer.run(Some(&out))?;

    // The run streamed one record per direction per iteration; show the
    // forward trajectory at a glance.
    println!("\nforward-direction trajectory (every 10th iteration):");
    println!("  step  frontier  reward  baseline  advantage  tf-nll");
    let steps = std::fs::read_to_string(out.join(STEP_LOG_FILE))?;
    for line in steps.lines() {
        let r: StepRecord = serde_json::from_str(line)?;
        if r.direction == "forward" && r.step % 10 == 0 {
            println!(
                "  {:>4}  {:>8}  {:>6.3}  {:>8.3}  {:>+9.3}  {:>6.3}",
                r.step, r.frontier, r.mean_reward, r.mean_baseline, r.mean_advantage, r.tf_nll
            );
        }
    }

    println!("\nvalidation emotion accuracy:");
    for v in &outcome.validations {
        let marker = if v.improved { "  <- best so far" } else { "" };
        println!("  step {:>4}: {:.3}{marker}", v.step, v.emotion_accuracy);
    }
    match (outcome.best_accuracy, outcome.best_step) {
        (Some(acc), Some(step)) => {
            println!("\nbest accuracy {acc:.3} at step {step} (checkpoint saved)")
        }
        _ => println!("\nno validation improvement recorded"),
    }
    if outcome.stopped_early {
        println!("stopped early after {} stale validations", trainer.config().patience);
    }
    println!("logs and checkpoint in {}", out.display());
    println!("next: cargo run --release --example evaluate");
    Ok(())
}
