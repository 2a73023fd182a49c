//! Maximum-likelihood pretraining of the three components.
//!
//! Fits the forward model (query -> response, conditioned on the response
//! emotion), the backward model (response -> query, conditioned on the query
//! emotion), and the convolutional emotion classifier that later freezes
//! into the reward. The final-epoch losses become the collapse-guard floors
//! for the dual phase.
//!
//! Needs the corpus from the `gen_data` example; takes under a minute at the
//! demo scale. Run with:
//!
//! ```text
//! cargo run --release --example pretrain [DEMO_DIR]
//! ```

use std::path::{Path, PathBuf};

use cdl::classifier::ClassifierConfig;
use cdl::cli::{PretrainSummary, PRETRAIN_SUMMARY_FILE};
use cdl::corpus::{load_corpus, EmotionLexicon, IndexedLexicon, Split, Vocabulary};
use cdl::ecm::ModelConfig;
use cdl::trainer::{pretrain, TrainerConfig, BACKWARD_DIR, CLASSIFIER_DIR, FORWARD_DIR};

/// Demo-scale dimensions: big enough that pretraining visibly converges and
/// the classifier saturates, small enough for a coffee-free wait.
fn demo_configs(vocab_size: usize) -> (ModelConfig, ClassifierConfig, TrainerConfig) {
    let model = ModelConfig {
        vocab_size,
        hidden_size: 32,
        word_embed_dim: 24,
        emotion_embed_dim: 16,
        max_decode_len: 12,
        ..ModelConfig::default()
    };
    let classifier = ClassifierConfig {
        vocab_size,
        embed_dim: 24,
        filters_per_width: 16,
        epochs: 6,
        lr: 1e-2,
        ..ClassifierConfig::default()
    };
    let trainer = TrainerConfig {
        pretrain_epochs: 6,
        pretrain_lr: 2e-3,
        batch_size: 16,
        seed: 0,
        ..TrainerConfig::default()
    };
    (model, classifier, trainer)
}

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cdl-demo".into()));
    let data = root.join("data");
    if !data.join("vocab.json").is_file() {
        anyhow::bail!(
            "no corpus at {}; run `cargo run --release --example gen_data` first",
            data.display()
        );
    }

    let vocab = Vocabulary::load(&data.join("vocab.json"))?;
    let lexicon = EmotionLexicon::load(&data.join("lexicon.json"))?;
    let (train, _) = load_corpus(&data.join("train.tsv"), Some(&vocab), Split::Train)?;
    let lex = IndexedLexicon::new(&lexicon, &vocab);
    println!("pretraining on {} pairs (vocabulary {})", train.len(), vocab.len());

    let (model_config, cls_config, trainer_config) = demo_configs(vocab.len());
    let trained = pretrain(&train, &model_config, &cls_config, &trainer_config, &lex)?;

    println!("\nmean sequence NLL by epoch:");
    for direction in ["forward", "backward"] {
        let curve: Vec<String> = trained
            .epochs
            .iter()
            .filter(|e| e.direction == direction)
            .map(|e| format!("{:.3}", e.mean_nll))
            .collect();
        println!("  {:<8} {}", direction, curve.join(" -> "));
    }
    println!(
        "collapse-guard floors: forward {:.3}, backward {:.3}",
        trained.forward_nll_floor.unwrap_or(f64::NAN),
        trained.backward_nll_floor.unwrap_or(f64::NAN)
    );
    let cls = &trained.classifier_summary;
    println!(
        "classifier: {} train / {} holdout, best holdout accuracy {:.3} over {} epochs",
        cls.pool_size,
        cls.holdout_size,
        cls.best_holdout_accuracy,
        cls.epochs.len()
    );

    let out = root.join("pretrain");
    let vocab_hash = vocab.content_hash();
    for sub in [FORWARD_DIR, BACKWARD_DIR, CLASSIFIER_DIR] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    trained.forward.save(&out.join(FORWARD_DIR), &vocab_hash, 0)?;
    trained.backward.save(&out.join(BACKWARD_DIR), &vocab_hash, 0)?;
    trained.classifier.save(&out.join(CLASSIFIER_DIR), &vocab_hash)?;
    let summary = PretrainSummary {
        epochs: trained.epochs.clone(),
        classifier: trained.classifier_summary.clone(),
        forward_nll_floor: trained.forward_nll_floor,
        backward_nll_floor: trained.backward_nll_floor,
        seeds: trained.seeds,
    };
    write_json(&out.join(PRETRAIN_SUMMARY_FILE), &summary)?;
    println!("\nwrote checkpoints and summary to {}", out.display());
    println!("next: cargo run --release --example train_cdl");
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
