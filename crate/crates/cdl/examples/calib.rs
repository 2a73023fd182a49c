//! Scratch calibration probe. Not part of the tour; deleted before release.

use cdl::classifier::ClassifierConfig;
use cdl::corpus::{generate_synthetic_corpus, split_corpus, Corpus, IndexedLexicon};
use cdl::curriculum::CurriculumConfig;
use cdl::ecm::{ModelConfig, SeqModel};
use cdl::eval::{emotion_accuracy, emotion_word_rate};
use cdl::trainer::{pretrain, AblationMode, DualTrainer, Pretrained, TrainerConfig};

fn test_metrics(
    forward: &SeqModel,
    cls: &cdl::classifier::EmotionClassifier,
    test: &Corpus,
    lex: &IndexedLexicon,
) -> anyhow::Result<(f64, f64)> {
    let mut gens = Vec::new();
    for pair in &test.pairs {
        let g = forward.generate_greedy(&pair.query.ids, pair.e_r, lex)?;
        gens.push((g.ids, pair.e_r));
    }
    Ok((emotion_accuracy(cls, &gens)?, emotion_word_rate(&gens, lex)?))
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let pretrain_epochs: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(2);
    let steps: u64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let pretrain_lr: f64 = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(2e-3);
    let cdl_lr: f64 = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(1e-3);

    for seed in [1u64, 2, 3] {
        let t0 = std::time::Instant::now();
        let (corpus, lexicon, vocab) = generate_synthetic_corpus(600, 120, seed)?;
        let (train, valid, test) = split_corpus(&corpus, (0.7, 0.15, 0.15), seed)?;
        let lex = IndexedLexicon::new(&lexicon, &vocab);
        let vocab_hash = vocab.content_hash();

        let model = ModelConfig {
            vocab_size: vocab.len(),
            hidden_size: 32,
            word_embed_dim: 24,
            emotion_embed_dim: 16,
            max_decode_len: 12,
            ..ModelConfig::default()
        };
        let cls_config = ClassifierConfig {
            vocab_size: vocab.len(),
            embed_dim: 32,
            filters_per_width: 24,
            epochs: 10,
            lr: 1e-2,
            ..ClassifierConfig::default()
        };
        let trainer_config = TrainerConfig {
            pretrain_epochs,
            pretrain_lr,
            cdl_lr,
            batch_size: 8,
            max_steps: steps,
            validation_interval: 50,
            patience: 1000,
            curriculum: CurriculumConfig {
                total_steps: 2000,
                ..CurriculumConfig::default()
            },
            seed,
            ..TrainerConfig::default()
        };

        let pre = pretrain(&train, &model, &cls_config, &trainer_config, &lex)?;
        let cls_acc = pre.classifier.accuracy(&test)?.overall;
        let (pre_acc, pre_ewr) = test_metrics(&pre.forward, &pre.classifier, &test, &lex)?;
        let (pre_val_acc, _) = test_metrics(&pre.forward, &pre.classifier, &valid, &lex)?;
        let fwd_nlls: Vec<String> = pre
            .epochs
            .iter()
            .filter(|e| e.direction == "forward")
            .map(|e| format!("{:.2}", e.mean_nll))
            .collect();
        println!(
            "seed {seed}: cls test acc {cls_acc:.3}; pretrain acc {pre_acc:.3} (val {pre_val_acc:.3}) ewr {pre_ewr:.3} nll {} ({:.0?})",
            fwd_nlls.join(">"),
            t0.elapsed()
        );
        for pair in test.pairs.iter().take(2) {
            let g = pre.forward.generate_greedy(&pair.query.ids, pair.e_r, &lex)?;
            println!(
                "    [{:?}] {} => {}",
                pair.e_r,
                vocab.decode(&pair.query.ids).join(" "),
                vocab.decode(&g.ids).join(" ")
            );
        }

        let mut curves: Vec<(AblationMode, Vec<f64>)> = Vec::new();
        let mut results: Vec<(AblationMode, f64, f64)> = Vec::new();
        for ablation in [AblationMode::Full, AblationMode::EmotionOnly, AblationMode::NoCurriculum]
        {
            let t1 = std::time::Instant::now();
            let dir = tempfile::tempdir()?;
            let config = TrainerConfig {
                ablation,
                ..trainer_config.clone()
            };
            let mut tr = DualTrainer::new(
                Pretrained::clone(&pre),
                train.clone(),
                valid.clone(),
                IndexedLexicon::new(&lexicon, &vocab),
                vocab_hash.clone(),
                config,
            )?;
            let outcome = tr.run(Some(dir.path()))?;
            // Score the checkpoint the run would ship: the best one.
            let best = dir.path().join("checkpoint").join("forward");
            let (fwd, _) = SeqModel::load(&best, Some(&vocab_hash))?;
            let (acc, ewr) = test_metrics(&fwd, &pre.classifier, &test, &lex)?;
            let curve: Vec<f64> = outcome
                .validations
                .iter()
                .map(|v| v.emotion_accuracy)
                .collect();
            let shown: Vec<String> = curve.iter().map(|v| format!("{v:.2}")).collect();
            println!(
                "  {:>4}: test acc {acc:.3} ewr {ewr:.3} best@{:?} ({:.0?})  val: {}",
                ablation.label(),
                outcome.best_step,
                t1.elapsed(),
                shown.join(" ")
            );
            curves.push((ablation, curve));
            results.push((ablation, acc, ewr));
        }
        let full_curve = &curves[0].1;
        let dl_curve = &curves[2].1;
        let n = full_curve.len().min(dl_curve.len());
        let wins = (0..n).filter(|&i| full_curve[i] >= dl_curve[i]).count();
        let full_acc = results[0].1;
        let emo_ewr = results[1].2;
        println!(
            "  => 8b gain {:+.3} ({}) | 8c emo ewr {:.3} vs {:.3} ({}) | 9 full>=dl {}/{} = {:.0}% ({})",
            full_acc - pre_acc,
            if full_acc - pre_acc >= 0.05 { "PASS" } else { "fail" },
            emo_ewr,
            pre_ewr,
            if emo_ewr > pre_ewr { "PASS" } else { "fail" },
            wins,
            n,
            100.0 * wins as f64 / n as f64,
            if (wins as f64 / n as f64) >= 0.7 { "PASS" } else { "fail" },
        );
    }
    Ok(())
}
