//! Generate a synthetic emotion-labeled dialogue corpus.
//!
//! The generator builds a vocabulary with per-category emotion words, a
//! matching emotion lexicon, and query/response pairs whose response emotion
//! is both classifiable from the whole sentence and marked by overt lexicon
//! words — the two signals the training rewards later score.
//!
//! This is the first stop of the pipeline tour; later examples read its
//! output. Run with:
//!
//! ```text
//! cargo run --release --example gen_data [DEMO_DIR]
//! ```
//!
//! Artifacts land in `DEMO_DIR/data` (default `cdl-demo/data`): the full
//! corpus, its train/valid/test splits (TSV), the lexicon, and the
//! vocabulary.

use std::path::PathBuf;

use cdl::corpus::{
    generate_synthetic_corpus, reference_emotion_marginals, save_corpus, split_corpus, Emotion,
};

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cdl-demo".into()));
    let out = root.join("data");
    std::fs::create_dir_all(&out)?;

    let n_pairs = 600;
    let vocab_size = 120;
    let seed = 0;
    let (corpus, lexicon, vocab) = generate_synthetic_corpus(n_pairs, vocab_size, seed)?;
    let (train, valid, test) = split_corpus(&corpus, (0.8, 0.1, 0.1), seed)?;

    println!(
        "generated {} pairs over a vocabulary of {} (seed {seed})",
        corpus.len(),
        vocab.len()
    );
    println!(
        "splits: train {}, valid {}, test {}",
        train.len(),
        valid.len(),
        test.len()
    );

    // The response-emotion marginal is skewed on purpose (Neutral-heavy, the
    // way conversational corpora are); compare the draw against its target.
    let (_, response_target) = reference_emotion_marginals();
    println!("\nresponse emotion marginals (observed vs target):");
    for emotion in Emotion::ALL {
        let observed = corpus
            .pairs
            .iter()
            .filter(|p| p.e_r == emotion)
            .count() as f64
            / corpus.len() as f64;
        println!(
            "  {:<8} {:>5.3} vs {:>5.3}   lexicon words: {}",
            emotion.name(),
            observed,
            response_target[emotion as usize],
            lexicon.words(emotion).len()
        );
    }

    println!("\nsample pairs:");
    for pair in corpus.pairs.iter().take(3) {
        println!(
            "  [{} -> {}] {}  =>  {}",
            pair.e_q.name(),
            pair.e_r.name(),
            pair.query.tokens.join(" "),
            pair.response.tokens.join(" ")
        );
    }

    save_corpus(&corpus, &out.join("corpus.tsv"))?;
    save_corpus(&train, &out.join("train.tsv"))?;
    save_corpus(&valid, &out.join("valid.tsv"))?;
    save_corpus(&test, &out.join("test.tsv"))?;
    lexicon.save(&out.join("lexicon.json"))?;
    vocab.save(&out.join("vocab.json"))?;
    println!("\nwrote corpus, splits, lexicon, and vocabulary to {}", out.display());
    println!("next: cargo run --release --example pretrain");
    Ok(())
}
