//! Difficulty ranking and the competence schedule that consumes it.
//!
//! The curriculum orders training pairs by how confidently the frozen
//! classifier recovers the gold emotion of the side being generated
//! (response for the forward model, query for the backward model) — high
//! confidence means cleanly expressed emotion, which is easier to learn
//! from. The competence function then decides how much of that easiest-first
//! ranking is available at step t, and batches sample uniformly inside the
//! frontier.
//!
//! Needs the `gen_data` and `pretrain` artifacts. Run with:
//!
//! ```text
//! cargo run --release --example rank_curriculum [DEMO_DIR]
//! ```

use std::path::PathBuf;

use cdl::classifier::EmotionClassifier;
use cdl::corpus::{load_corpus, Split, Vocabulary};
use cdl::curriculum::{competence, rank_by_difficulty, sample_batch, CurriculumConfig};
use cdl::ecm::Direction;
use cdl::trainer::{CLASSIFIER_DIR, FORWARD_DIR};

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
    let (train, _) = load_corpus(&data.join("train.tsv"), Some(&vocab), Split::Train)?;
    let (classifier, _) =
        EmotionClassifier::load(&pre.join(CLASSIFIER_DIR), Some(&vocab.content_hash()))?;

    let ranked = rank_by_difficulty(&train, &classifier, Direction::Forward)?;
    println!("ranked {} pairs for the forward direction", ranked.entries.len());

    let show = |label: &str, entries: &[cdl::curriculum::RankedEntry]| {
        println!("\n{label}:");
        for e in entries {
            let pair = &train.pairs[e.corpus_index];
            println!(
                "  confidence {:.3}  [{}] {}",
                e.confidence,
                pair.e_r.name(),
                pair.response.tokens.join(" ")
            );
        }
    };
    show("easiest (classifier most confident in the gold emotion)", &ranked.entries[..3]);
    show("hardest", &ranked.entries[ranked.entries.len() - 3..]);

    // The schedule: competence grows as sqrt(t/T (1 - c0^2) + c0^2), so the
    // frontier starts at a tenth of the corpus and reaches all of it at T.
    let config = CurriculumConfig::default();
    let t_points = [
        0,
        config.total_steps / 4,
        config.total_steps / 2,
        3 * config.total_steps / 4,
        config.total_steps,
    ];
    println!("\ncompetence schedule (T = {}):", config.total_steps);
    println!("  {:>10}  {:>10}  {:>8}", "t", "competence", "frontier");
    for t in t_points {
        println!(
            "  {:>10}  {:>10.4}  {:>8}",
            t,
            competence(t, &config),
            ranked.frontier_len(t, &config, 8)
        );
    }

    // Early batches draw only from the easy end of the ranking.
    let batch = sample_batch(&ranked, 0, &config, 8, 0)?;
    let mut drawn: Vec<usize> = batch
        .iter()
        .map(|&corpus_index| {
            ranked
                .entries
                .iter()
                .position(|e| e.corpus_index == corpus_index)
                .expect("drawn index is in the ranking")
        })
        .collect();
    drawn.sort_unstable();
    println!(
        "\nbatch at t=0 draws ranks {:?} (frontier {})",
        drawn,
        ranked.frontier_len(0, &config, 8)
    );

    let out = root.join("train");
    std::fs::create_dir_all(&out)?;
    let backward = rank_by_difficulty(&train, &classifier, Direction::Backward)?;
    ranked.write_csv(&out.join("curriculum_forward.csv"))?;
    backward.write_csv(&out.join("curriculum_backward.csv"))?;
    println!("wrote both rankings to {}", out.display());
    Ok(())
}
