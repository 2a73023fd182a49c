//! Score a trained model on the held-out test split.
//!
//! Greedy-decodes a response for every test query (conditioned on the gold
//! response emotion) and reports emotion accuracy, emotion word rate,
//! BLEU-1..4, Distinct-1/2, and the embedding relevance metrics
//! (average, extrema, greedy matching, query coherence).
//!
//! Uses the dual-phase checkpoint when one exists, otherwise the pretrained
//! one — run it after `pretrain` for a baseline, again after `train_cdl`,
//! and compare the two tables. Run with:
//!
//! ```text
//! cargo run --release --example evaluate [DEMO_DIR]
//! ```

use std::path::PathBuf;

use cdl::classifier::EmotionClassifier;
use cdl::corpus::{load_corpus, EmotionLexicon, IndexedLexicon, Split, Vocabulary};
use cdl::ecm::SeqModel;
use cdl::eval::{full_report, write_generations_jsonl, WordVectors};
use cdl::trainer::{CHECKPOINT_DIR, CLASSIFIER_DIR, FORWARD_DIR};

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cdl-demo".into()));
    let data = root.join("data");
    if !data.join("vocab.json").is_file() {
        anyhow::bail!(
            "no corpus at {}; run `cargo run --release --example gen_data` first",
            data.display()
        );
    }

    let trained = root.join("train").join(CHECKPOINT_DIR);
    let pretrained = root.join("pretrain");
    let source = if trained.join(FORWARD_DIR).is_dir() {
        trained
    } else if pretrained.join(FORWARD_DIR).is_dir() {
        pretrained
    } else {
        anyhow::bail!(
            "no checkpoints under {}; run `cargo run --release --example pretrain` first",
            root.display()
        );
    };
    println!("evaluating models from {}", source.display());

    let vocab = Vocabulary::load(&data.join("vocab.json"))?;
    let lexicon = EmotionLexicon::load(&data.join("lexicon.json"))?;
    let (test, _) = load_corpus(&data.join("test.tsv"), Some(&vocab), Split::Test)?;
    let lex = IndexedLexicon::new(&lexicon, &vocab);
    let vocab_hash = vocab.content_hash();

    let (forward, _) = SeqModel::load(&source.join(FORWARD_DIR), Some(&vocab_hash))?;
    let (classifier, _) = EmotionClassifier::load(&source.join(CLASSIFIER_DIR), Some(&vocab_hash))?;

    // No external word vectors at demo scale: reuse the model's own word
    // embeddings for the embedding metrics.
    let vectors = WordVectors::from_model(&forward, &vocab)?;
    let (report, generations) = full_report(&forward, &classifier, &test, &lex, &vocab, &vectors)?;

    println!("\n{}", report.table());
    println!("sample generations:");
    for g in generations.iter().take(3) {
        println!("  [{:>7}] {}  =>  {}", g.e_r, g.query, g.response);
    }

    let out = root.join("eval");
    std::fs::create_dir_all(&out)?;
    report.write_json(&out.join("report.json"))?;
    write_generations_jsonl(&generations, &out.join("generations.jsonl"))?;
    println!("\nwrote report.json and generations.jsonl to {}", out.display());
    Ok(())
}
