//! Terminal chat with emotion-controlled responses.
//!
//! Reads queries from stdin; for each one, the classifier guesses the
//! query's emotion (it is not observable at inference time) and the forward
//! model greedy-decodes one response per emotion category, so the same query
//! can be answered neutrally, happily, angrily, and so on.
//!
//! Uses the dual-phase checkpoint when one exists, otherwise the pretrained
//! one. Run with:
//!
//! ```text
//! cargo run --release --example chat [DEMO_DIR]
//! ```
//!
//! Type a query and press enter; blank line, `quit`, or ctrl-d ends the
//! session. Piped input works too:
//!
//! ```text
//! echo "park larb mirn vex" | cargo run --release --example chat
//! ```

use std::io::BufRead;
use std::path::PathBuf;

use cdl::classifier::EmotionClassifier;
use cdl::cli::{respond_to_query, EmotionSelection};
use cdl::corpus::{EmotionLexicon, IndexedLexicon, Vocabulary};
use cdl::ecm::SeqModel;
use cdl::trainer::{CHECKPOINT_DIR, CLASSIFIER_DIR, FORWARD_DIR};

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cdl-demo".into()));
    let data = root.join("data");
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

    let vocab = Vocabulary::load(&data.join("vocab.json"))?;
    let lexicon = EmotionLexicon::load(&data.join("lexicon.json"))?;
    let lex = IndexedLexicon::new(&lexicon, &vocab);
    let vocab_hash = vocab.content_hash();
    let (forward, _) = SeqModel::load(&source.join(FORWARD_DIR), Some(&vocab_hash))?;
    let (classifier, _) = EmotionClassifier::load(&source.join(CLASSIFIER_DIR), Some(&vocab_hash))?;

    println!("chatting with models from {}", source.display());
    println!("vocabulary sample: {}", vocab.decode(&[4, 5, 6, 7, 8, 9, 10, 11]).join(" "));
    println!("type a query (blank line or ctrl-d to quit)\n");

    for line in std::io::stdin().lock().lines() {
        let line = line?;
        let query = line.trim();
        if query.is_empty() || query == "quit" || query == "exit" {
            break;
        }
        match respond_to_query(&forward, &classifier, &vocab, &lex, query, EmotionSelection::All) {
            Ok(reply) => {
                println!(
                    "[query read as {} ({:.2})]",
                    reply.query_emotion, reply.query_confidence
                );
                for (emotion, text) in &reply.responses {
                    println!("  {emotion:>7}: {text}");
                }
                println!();
            }
            Err(e) => println!("cannot answer: {e}\n"),
        }
    }
    Ok(())
}
