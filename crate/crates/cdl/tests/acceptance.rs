//! End-to-end acceptance checks for the training framework.
//!
//! Each check prints exactly one `acceptance NN <name>: PASS|FAIL` line on
//! stderr (bypassing libtest capture so the lines always appear) and fails
//! the build on FAIL. Tolerances and runtime budgets are pinned as constants
//! next to each check. The two training-run checks (08, 09) each build their
//! own set of seeded fixtures on first use; each builder's cost is charged
//! against its check's budget.

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cdl::classifier::{ClassifierConfig, EmotionClassifier};
use cdl::corpus::{
    generate_synthetic_corpus, split_corpus, Corpus, DialoguePair, Emotion, EmotionLexicon,
    IndexedLexicon, Vocabulary,
};
use cdl::curriculum::{competence, sample_batch, CurriculumConfig, RankedDataset, RankedEntry};
use cdl::ecm::{Direction, LossBreakdown, ModelConfig, PolicyItem, SeqModel};
use cdl::eval::{
    bleu_n, coherence, distinct_n, embedding_average, emotion_accuracy, emotion_word_rate,
    greedy_matching, vector_extrema, WordVectors,
};
use cdl::optim::Adam;
use cdl::rewards::{
    combine_emotion_reward, combine_total_reward, content_reward, explicit_emotion_reward,
    implicit_emotion_reward, RewardConfig, RewardTraceRecord,
};
use cdl::trainer::{
    pretrain, AblationMode, DualTrainer, Pretrained, TrainerConfig, REWARD_TRACE_FILE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

/// Prints the one-line verdict for a check and panics on failure. Exceeding
/// the budget is itself a failure.
fn report(number: usize, name: &str, started: Instant, budget: Duration, mut failures: Vec<String>) {
    let elapsed = started.elapsed();
    if elapsed > budget {
        failures.push(format!("over budget: {elapsed:.1?} > {budget:.0?}"));
    }
    let verdict = if failures.is_empty() {
        format!("PASS ({elapsed:.1?})")
    } else {
        format!("FAIL ({elapsed:.1?}) — {}", failures.join("; "))
    };
    // Raw-handle write: libtest only captures the print macros, so this line
    // is visible in a plain `cargo test` run. The leading newline detaches it
    // from libtest's in-progress `test ...` line.
    let _ = writeln!(std::io::stderr(), "\nacceptance {number:02} {name}: {verdict}");
    assert!(
        failures.is_empty(),
        "acceptance {number:02} {name} failed: {}",
        failures.join("; ")
    );
}

/// Runs a fallible check body, turning an error into a single failure entry.
fn run_check(body: impl FnOnce() -> anyhow::Result<Vec<String>>) -> Vec<String> {
    match body() {
        Ok(failures) => failures,
        Err(e) => vec![format!("setup error: {e:#}")],
    }
}

// ---------------------------------------------------------------------------
// 01: single-step loss hand oracle
// ---------------------------------------------------------------------------

const LOSS_ORACLE_EXPECTED: f64 = 0.37850;
const LOSS_ORACLE_TOL: f64 = 1e-5;
const LOSS_ORACLE_BUDGET: Duration = Duration::from_secs(1);

#[test]
fn c01_single_step_loss_matches_hand_computation() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        // One decode step: gold-token probability 0.9, the gold token is an
        // emotion word read through gate weight 0.8, and the leftover internal
        // memory norm is 0.05. By hand:
        //   -ln(0.9) - ln(0.8) + 0.05 = 0.105361 + 0.223144 + 0.05 = 0.378504
        let b = LossBreakdown::from_steps(&[0.9], &[(0.8, true)], 0.05);
        if (b.total - LOSS_ORACLE_EXPECTED).abs() > LOSS_ORACLE_TOL {
            failures.push(format!(
                "total {} differs from {LOSS_ORACLE_EXPECTED} by more than {LOSS_ORACLE_TOL}",
                b.total
            ));
        }
        // Component identities, much tighter than the headline tolerance.
        let parts = [
            ("nll", b.nll, -(0.9f64.ln())),
            ("type_loss", b.type_loss, -(0.8f64.ln())),
            ("memory_reg", b.memory_reg, 0.05),
        ];
        for (label, got, want) in parts {
            if (got - want).abs() > 1e-12 {
                failures.push(format!("{label} = {got}, expected {want}"));
            }
        }
        if (b.total - (b.nll + b.type_loss + b.memory_reg)).abs() > 1e-12 {
            failures.push("total is not the sum of its components".into());
        }
        Ok(failures)
    });
    report(1, "single-step loss hand oracle", t0, LOSS_ORACLE_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// 02: analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

const GRADCHECK_REL_TOL: f64 = 1e-3;
/// Gradients below this magnitude sit at the finite-difference noise floor
/// (truncation error is O(step²) = 1e-10); they are held to absolute
/// agreement instead of the relative tolerance.
const GRADCHECK_ABS_FLOOR: f64 = 1e-6;
const GRADCHECK_ABS_TOL: f64 = 1e-8;
const GRADCHECK_FD_STEP: f64 = 1e-5;
const GRADCHECK_MIN_PARAMS: usize = 10;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);

#[test]
fn c02_analytic_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        let tokens: Vec<String> = ["joy", "glee", "gloom", "tear"]
            .into_iter()
            .map(str::to_string)
            .chain((0..12).map(|i| format!("t{i}")))
            .collect();
        let vocab = Vocabulary::from_tokens(tokens);
        assert_eq!(vocab.len(), 20);
        let mut lexicon = EmotionLexicon::new();
        lexicon.insert(Emotion::Happy, "joy".into())?;
        lexicon.insert(Emotion::Happy, "glee".into())?;
        lexicon.insert(Emotion::Sad, "gloom".into())?;
        lexicon.insert(Emotion::Sad, "tear".into())?;
        let lex = IndexedLexicon::new(&lexicon, &vocab);

        let config = ModelConfig {
            vocab_size: vocab.len(),
            hidden_size: 8,
            word_embed_dim: 6,
            emotion_embed_dim: 4,
            max_decode_len: 8,
            min_decode_len: 1,
            ..ModelConfig::default()
        };
        let mut model = SeqModel::new(config, Direction::Forward, 7)?;
        let encode = |toks: &[&str]| {
            vocab.encode(&toks.iter().map(|t| t.to_string()).collect::<Vec<_>>())
        };
        let pair = DialoguePair {
            query: encode(&["t0", "t1", "t2", "t3"]),
            response: encode(&["joy", "t4", "t5", "t6"]),
            e_q: Emotion::Neutral,
            e_r: Emotion::Happy,
            index: 0,
        };

        let (_, grads) = model.loss_gradients(&pair, Emotion::Happy, &lex)?;
        // Two probe elements per parameter tensor: the first entry and one
        // from the middle, covering every weight family in the model.
        let probes: Vec<(cdl::tensor::ParamId, usize)> = model
            .params()
            .ids()
            .flat_map(|id| {
                let len = model.params().get(id).len();
                let mid = len / 2;
                if mid == 0 {
                    vec![(id, 0)]
                } else {
                    vec![(id, 0), (id, mid)]
                }
            })
            .collect();

        let mut informative = 0usize;
        for (id, elem) in probes {
            let analytic = grads
                .get(id)
                .and_then(|t| t.iter().nth(elem).copied())
                .unwrap_or(0.0);
            let mut eval_at = |delta: f64| -> anyhow::Result<f64> {
                let slot = model
                    .params_mut()
                    .get_mut(id)
                    .iter_mut()
                    .nth(elem)
                    .expect("probe element exists");
                *slot += delta;
                let total = model.forward_loss(&pair, Emotion::Happy, &lex)?.total;
                let slot = model
                    .params_mut()
                    .get_mut(id)
                    .iter_mut()
                    .nth(elem)
                    .expect("probe element exists");
                *slot -= delta;
                Ok(total)
            };
            let plus = eval_at(GRADCHECK_FD_STEP)?;
            let minus = eval_at(-GRADCHECK_FD_STEP)?;
            let fd = (plus - minus) / (2.0 * GRADCHECK_FD_STEP);
            let abs_err = (analytic - fd).abs();
            if analytic.abs().max(fd.abs()) > GRADCHECK_ABS_FLOOR {
                informative += 1;
                let rel_err = abs_err / analytic.abs().max(fd.abs());
                if rel_err > GRADCHECK_REL_TOL {
                    failures.push(format!(
                        "{}[{elem}]: analytic {analytic:.6e} vs fd {fd:.6e} (rel {rel_err:.2e})",
                        model.params().name(id)
                    ));
                }
            } else if abs_err > GRADCHECK_ABS_TOL {
                failures.push(format!(
                    "{}[{elem}]: near-zero disagreement {abs_err:.2e}",
                    model.params().name(id)
                ));
            }
        }
        if informative < GRADCHECK_MIN_PARAMS {
            failures.push(format!(
                "only {informative} informative parameters checked, need {GRADCHECK_MIN_PARAMS}"
            ));
        }
        Ok(failures)
    });
    report(2, "analytic gradients match finite differences", t0, GRADCHECK_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// 03: competence schedule values and monotonicity
// ---------------------------------------------------------------------------

const COMPETENCE_END_TOL: f64 = 1e-9;
const COMPETENCE_QUARTER_EXPECTED: f64 = 0.507445;
const COMPETENCE_QUARTER_TOL: f64 = 1e-6;
const COMPETENCE_PAIRS: usize = 1000;
const COMPETENCE_BUDGET: Duration = Duration::from_secs(1);

#[test]
fn c03_competence_schedule_values_and_monotonicity() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        let total = 1000u64;
        let cfg = CurriculumConfig {
            c0_squared: 0.01,
            total_steps: total,
            enabled: true,
        };
        let start = competence(0, &cfg);
        if start != 0.1 {
            failures.push(format!("competence(0) = {start}, expected exactly 0.1"));
        }
        let end = competence(total, &cfg);
        if (end - 1.0).abs() > COMPETENCE_END_TOL {
            failures.push(format!("competence(T) = {end}, expected 1.0 ± {COMPETENCE_END_TOL}"));
        }
        let quarter = competence(total / 4, &cfg);
        if (quarter - COMPETENCE_QUARTER_EXPECTED).abs() > COMPETENCE_QUARTER_TOL {
            failures.push(format!(
                "competence(T/4) = {quarter}, expected {COMPETENCE_QUARTER_EXPECTED} ± {COMPETENCE_QUARTER_TOL}"
            ));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..COMPETENCE_PAIRS {
            // Sample past T as well to cover the saturated tail.
            let a = rng.random_range(0..=2 * total);
            let b = rng.random_range(0..=2 * total);
            let (lo, hi) = (a.min(b), a.max(b));
            let (c_lo, c_hi) = (competence(lo, &cfg), competence(hi, &cfg));
            if c_lo > c_hi {
                failures.push(format!("competence({lo}) = {c_lo} > competence({hi}) = {c_hi}"));
                break;
            }
            if !(0.1..=1.0).contains(&c_lo) || !(0.1..=1.0).contains(&c_hi) {
                failures.push(format!("competence out of [0.1, 1] at t = {lo} or {hi}"));
                break;
            }
        }
        Ok(failures)
    });
    report(3, "competence schedule values and monotonicity", t0, COMPETENCE_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// 04: curriculum sampling stays inside the frontier, uniformly
// ---------------------------------------------------------------------------

const CURRICULUM_DRAWS: usize = 10_000;
const CURRICULUM_BATCH: usize = 10;
const CURRICULUM_FRONTIER: usize = 50;
const CURRICULUM_P_MIN: f64 = 0.01;
const CURRICULUM_BUDGET: Duration = Duration::from_secs(10);

#[test]
fn c04_curriculum_sampling_respects_frontier_and_uniformity() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        let n = 500usize;
        // Easiest-first ranking over a shuffled corpus-index space, so that a
        // corpus index says nothing about its rank position.
        let mut corpus_indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            corpus_indices.swap(i, j);
        }
        let entries: Vec<RankedEntry> = corpus_indices
            .iter()
            .enumerate()
            .map(|(rank, &corpus_index)| RankedEntry {
                corpus_index,
                confidence: 1.0 - rank as f64 * 1e-3,
            })
            .collect();
        let mut rank_of = vec![0usize; n];
        for (rank, &ci) in corpus_indices.iter().enumerate() {
            rank_of[ci] = rank;
        }
        let ranked = RankedDataset {
            direction: Direction::Forward,
            entries,
        };
        let cfg = CurriculumConfig {
            c0_squared: 0.01,
            total_steps: 1000,
            enabled: true,
        };

        // Containment: every sampled corpus index maps to a rank position
        // inside the frontier for its step.
        let batches = CURRICULUM_DRAWS / CURRICULUM_BATCH;
        'containment: for k in 0..batches {
            let t = rng.random_range(0..=1500u64);
            let frontier = ranked.frontier_len(t, &cfg, CURRICULUM_BATCH);
            let batch = sample_batch(&ranked, t, &cfg, CURRICULUM_BATCH, 10_000 + k as u64)?;
            for ci in batch {
                if rank_of[ci] >= frontier {
                    failures.push(format!(
                        "draw at t={t}: corpus index {ci} has rank {} outside frontier {frontier}",
                        rank_of[ci]
                    ));
                    break 'containment;
                }
            }
        }

        // Uniformity: at t=0 the frontier is exactly ceil(0.1 * 500) = 50;
        // a chi-squared test over 10,000 draws must not reject uniformity.
        let frontier0 = ranked.frontier_len(0, &cfg, CURRICULUM_BATCH);
        if frontier0 != CURRICULUM_FRONTIER {
            failures.push(format!("frontier at t=0 is {frontier0}, expected {CURRICULUM_FRONTIER}"));
        } else {
            let mut counts = vec![0u64; CURRICULUM_FRONTIER];
            for k in 0..batches {
                let batch = sample_batch(&ranked, 0, &cfg, CURRICULUM_BATCH, 50_000 + k as u64)?;
                for ci in batch {
                    counts[rank_of[ci]] += 1;
                }
            }
            let expected = CURRICULUM_DRAWS as f64 / CURRICULUM_FRONTIER as f64;
            let chi2: f64 = counts
                .iter()
                .map(|&o| {
                    let d = o as f64 - expected;
                    d * d / expected
                })
                .sum();
            let dist = ChiSquared::new((CURRICULUM_FRONTIER - 1) as f64)?;
            let p = 1.0 - dist.cdf(chi2);
            if p <= CURRICULUM_P_MIN {
                failures.push(format!(
                    "chi-squared {chi2:.1} over {} cells gives p = {p:.4} <= {CURRICULUM_P_MIN}",
                    CURRICULUM_FRONTIER
                ));
            }
        }
        Ok(failures)
    });
    report(4, "curriculum sampling respects frontier and uniformity", t0, CURRICULUM_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// 05: reward arithmetic, bounds, and ablation composition
// ---------------------------------------------------------------------------

const REWARD_FUZZ_CASES: usize = 1000;
const REWARD_BUDGET: Duration = Duration::from_secs(10);

#[test]
fn c05_reward_arithmetic_bounds_and_ablation_composition() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();

        // Hand arithmetic, exact: both cases are sums and products of
        // dyadic-friendly inputs and reproduce bit-identically.
        let r_e = combine_emotion_reward(0.6, 0.25, 0.5);
        if r_e != 0.725 {
            failures.push(format!("emotion combination gave {r_e}, expected exactly 0.725"));
        }
        let total = combine_total_reward(&RewardConfig::default(), 0.3, 0.725);
        if total != 1.025 {
            failures.push(format!("total combination gave {total}, expected exactly 1.025"));
        }

        // Bounds fuzz on untrained models: every reward term lives in [0,1].
        let (corpus, lexicon, vocab) = generate_synthetic_corpus(60, 60, 9)?;
        drop(corpus);
        let lex = IndexedLexicon::new(&lexicon, &vocab);
        let cls = EmotionClassifier::new(
            ClassifierConfig {
                vocab_size: vocab.len(),
                embed_dim: 8,
                filters_per_width: 4,
                ..ClassifierConfig::default()
            },
            21,
        )?;
        let dual = SeqModel::new(
            ModelConfig {
                vocab_size: vocab.len(),
                hidden_size: 8,
                word_embed_dim: 6,
                emotion_embed_dim: 4,
                max_decode_len: 8,
                ..ModelConfig::default()
            },
            Direction::Backward,
            22,
        )?;
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let random_ids = |rng: &mut ChaCha12Rng| -> Vec<usize> {
            let len = rng.random_range(1..=12usize);
            (0..len).map(|_| rng.random_range(0..vocab.len())).collect()
        };
        let random_emotion =
            |rng: &mut ChaCha12Rng| Emotion::ALL[rng.random_range(0..Emotion::ALL.len())];
        for case in 0..REWARD_FUZZ_CASES {
            let rollout = random_ids(&mut rng);
            let original = random_ids(&mut rng);
            let target = random_emotion(&mut rng);
            let original_emotion = random_emotion(&mut rng);
            let r_e1 = implicit_emotion_reward(&cls, &rollout, target)?;
            let r_e2 = explicit_emotion_reward(&rollout, target, &lex);
            let r_c = content_reward(&dual, &rollout, &original, original_emotion, &lex)?;
            for (label, value) in [("r_e1", r_e1), ("r_e2", r_e2), ("r_c", r_c)] {
                if !(0.0..=1.0).contains(&value) {
                    failures.push(format!("case {case}: {label} = {value} outside [0,1]"));
                }
            }
            if failures.len() > 4 {
                break;
            }
        }

        // Ablation composition: short training runs under each reward ablation
        // must log breakdowns obeying that ablation's composition law exactly.
        let (corpus, lexicon, vocab) = generate_synthetic_corpus(60, 60, 9)?;
        let (train, valid, _test) = split_corpus(&corpus, (0.8, 0.1, 0.1), 9)?;
        let model_cfg = ModelConfig {
            vocab_size: vocab.len(),
            hidden_size: 8,
            word_embed_dim: 6,
            emotion_embed_dim: 4,
            max_decode_len: 8,
            ..ModelConfig::default()
        };
        let cls_cfg = ClassifierConfig {
            vocab_size: vocab.len(),
            embed_dim: 8,
            filters_per_width: 4,
            epochs: 2,
            lr: 1e-2,
            ..ClassifierConfig::default()
        };
        for ablation in [AblationMode::Full, AblationMode::EmotionOnly, AblationMode::ContentOnly] {
            let trainer_cfg = TrainerConfig {
                pretrain_epochs: 0,
                cdl_lr: 1e-3,
                batch_size: 4,
                max_steps: 3,
                validation_interval: 100,
                patience: 100,
                ablation,
                seed: 9,
                ..TrainerConfig::default()
            };
            let lambda = trainer_cfg.reward.lambda;
            let pre = pretrain(&train, &model_cfg, &cls_cfg, &trainer_cfg, &IndexedLexicon::new(&lexicon, &vocab))?;
            let dir = tempfile::tempdir()?;
            let mut tr = DualTrainer::new(
                pre,
                train.clone(),
                valid.clone(),
                IndexedLexicon::new(&lexicon, &vocab),
                vocab.content_hash(),
                trainer_cfg.clone(),
            )?;
            tr.run(Some(dir.path()))?;
            let raw = std::fs::read_to_string(dir.path().join(REWARD_TRACE_FILE))?;
            let mut effective = trainer_cfg.reward.clone();
            match ablation {
                AblationMode::EmotionOnly => effective.content_enabled = false,
                AblationMode::ContentOnly => effective.emotion_enabled = false,
                _ => {}
            }
            let mut records = 0usize;
            for line in raw.lines() {
                let rec: RewardTraceRecord = serde_json::from_str(line)?;
                records += 1;
                let expected_r_e = if effective.emotion_enabled {
                    combine_emotion_reward(rec.r_e1, rec.r_e2, lambda)
                } else {
                    0.0
                };
                let expected_total = combine_total_reward(&effective, rec.r_c, expected_r_e);
                let label = ablation.label();
                match ablation {
                    AblationMode::EmotionOnly if rec.r_c != 0.0 => {
                        failures.push(format!("{label}: logged r_c = {} != 0", rec.r_c));
                    }
                    AblationMode::ContentOnly if rec.r_e1 != 0.0 || rec.r_e2 != 0.0 => {
                        failures.push(format!(
                            "{label}: logged r_e1/r_e2 = {}/{} != 0",
                            rec.r_e1, rec.r_e2
                        ));
                    }
                    _ => {}
                }
                if rec.total != expected_total {
                    failures.push(format!(
                        "{label}: logged total {} != recomposed {expected_total}",
                        rec.total
                    ));
                }
                if rec.advantage != rec.total - rec.baseline {
                    failures.push(format!(
                        "{label}: advantage {} != total - baseline {}",
                        rec.advantage,
                        rec.total - rec.baseline
                    ));
                }
                if failures.len() > 8 {
                    break;
                }
            }
            if records == 0 {
                failures.push(format!("{}: no reward traces logged", ablation.label()));
            }
        }
        Ok(failures)
    });
    report(5, "reward arithmetic, bounds, and ablation composition", t0, REWARD_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// 06: REINFORCE drives a one-step bandit to the rewarded token
// ---------------------------------------------------------------------------

const BANDIT_STEPS: usize = 500;
const BANDIT_SAMPLES_PER_STEP: usize = 4;
const BANDIT_WINDOW: usize = 50;
const BANDIT_START_MAX: f64 = 0.4;
const BANDIT_END_MIN: f64 = 0.9;
const BANDIT_MONOTONE_SLACK: f64 = 1e-6;
const BANDIT_BUDGET: Duration = Duration::from_secs(60);

#[test]
fn c06_reinforce_drives_bandit_to_rewarded_token() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        let vocab = Vocabulary::from_tokens(["win", "lose", "meh"].map(str::to_string));
        let lex = IndexedLexicon::new(&EmotionLexicon::new(), &vocab);
        let config = ModelConfig {
            vocab_size: vocab.len(),
            encoder_layers: 1,
            decoder_layers: 1,
            hidden_size: 8,
            word_embed_dim: 6,
            emotion_embed_dim: 4,
            max_decode_len: 1,
            min_decode_len: 1,
            ..ModelConfig::default()
        };
        let mut model = SeqModel::new(config, Direction::Forward, 3)?;
        let mut opt = Adam::new(model.params(), 0.02);
        let query = vocab.encode(&["meh".to_string()]);
        let lucky = vocab.id_of("win").expect("token in vocabulary");

        let p_win = |model: &SeqModel| -> anyhow::Result<f64> {
            let (_, trace) = model.forward_loss_traced(&query.ids, &[lucky], Emotion::Neutral, &lex)?;
            Ok(trace.gold_probs[0])
        };

        let mut probs = Vec::with_capacity(BANDIT_STEPS);
        for step in 0..BANDIT_STEPS {
            probs.push(p_win(&model)?);
            let greedy = model.generate_greedy(&query.ids, Emotion::Neutral, &lex)?;
            let baseline = f64::from(greedy.ids.first() == Some(&lucky));
            let mut sampled = Vec::with_capacity(BANDIT_SAMPLES_PER_STEP);
            for s in 0..BANDIT_SAMPLES_PER_STEP {
                let seed = (step * BANDIT_SAMPLES_PER_STEP + s) as u64;
                sampled.push(model.generate_sample(&query.ids, Emotion::Neutral, &lex, 1.0, seed)?);
            }
            let items: Vec<PolicyItem> = sampled
                .iter()
                .map(|g| PolicyItem {
                    input: &query.ids,
                    emotion: Emotion::Neutral,
                    sampled: &g.ids,
                    advantage: f64::from(g.ids.first() == Some(&lucky)) - baseline,
                })
                .collect();
            model.policy_gradient_batch(&items, &lex, &mut opt, Some(5.0))?;
        }

        if probs[0] > BANDIT_START_MAX {
            failures.push(format!(
                "initial probability {:.3} exceeds {BANDIT_START_MAX}",
                probs[0]
            ));
        }
        let window_means: Vec<f64> = probs
            .chunks(BANDIT_WINDOW)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        for pair in window_means.windows(2) {
            if pair[1] < pair[0] - BANDIT_MONOTONE_SLACK {
                failures.push(format!(
                    "smoothed probability decreased: {:.4} -> {:.4}",
                    pair[0], pair[1]
                ));
            }
        }
        let last = *window_means.last().expect("at least one window");
        if last < BANDIT_END_MIN {
            failures.push(format!(
                "final smoothed probability {last:.3} below {BANDIT_END_MIN}"
            ));
        }
        Ok(failures)
    });
    report(6, "reinforce drives bandit to rewarded token", t0, BANDIT_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// 07: frozen-parameter contract across dual updates
// ---------------------------------------------------------------------------

const FROZEN_STEPS: usize = 200;
const FROZEN_BUDGET: Duration = Duration::from_secs(600);

#[test]
fn c07_frozen_parameter_contract_across_dual_updates() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        let (corpus, lexicon, vocab) = generate_synthetic_corpus(60, 60, 5)?;
        let (train, valid, _test) = split_corpus(&corpus, (0.8, 0.1, 0.1), 5)?;
        let lex = IndexedLexicon::new(&lexicon, &vocab);
        let model_cfg = ModelConfig {
            vocab_size: vocab.len(),
            hidden_size: 16,
            word_embed_dim: 12,
            emotion_embed_dim: 8,
            max_decode_len: 10,
            ..ModelConfig::default()
        };
        let cls_cfg = ClassifierConfig {
            vocab_size: vocab.len(),
            embed_dim: 12,
            filters_per_width: 6,
            epochs: 2,
            lr: 1e-2,
            ..ClassifierConfig::default()
        };
        let trainer_cfg = TrainerConfig {
            pretrain_epochs: 1,
            pretrain_lr: 1e-3,
            cdl_lr: 3e-4,
            batch_size: 8,
            max_steps: FROZEN_STEPS as u64,
            validation_interval: 1000,
            patience: 1000,
            curriculum: CurriculumConfig {
                total_steps: FROZEN_STEPS as u64,
                ..CurriculumConfig::default()
            },
            seed: 5,
            ..TrainerConfig::default()
        };
        let pre = pretrain(&train, &model_cfg, &cls_cfg, &trainer_cfg, &lex)?;
        let mut tr = DualTrainer::new(
            pre,
            train,
            valid,
            lex,
            vocab.content_hash(),
            trainer_cfg,
        )?;

        let classifier_hash = tr.classifier().content_hash();
        let mut forward_changed = false;
        let mut backward_changed = false;
        for step in 0..FROZEN_STEPS {
            let backward_before = tr.backward().content_hash();
            let forward_before = tr.forward().content_hash();
            tr.rl_step_forward()?;
            if tr.backward().content_hash() != backward_before {
                failures.push(format!("step {step}: dual model changed during the forward phase"));
            }
            if tr.classifier().content_hash() != classifier_hash {
                failures.push(format!("step {step}: classifier changed during the forward phase"));
            }
            forward_changed |= tr.forward().content_hash() != forward_before;

            let forward_frozen = tr.forward().content_hash();
            let backward_at_phase_start = tr.backward().content_hash();
            tr.rl_step_backward()?;
            if tr.forward().content_hash() != forward_frozen {
                failures.push(format!("step {step}: forward model changed during the backward phase"));
            }
            if tr.classifier().content_hash() != classifier_hash {
                failures.push(format!("step {step}: classifier changed during the backward phase"));
            }
            backward_changed |= tr.backward().content_hash() != backward_at_phase_start;
            tr.advance_clock();
            if failures.len() > 4 {
                break;
            }
        }
        if !forward_changed {
            failures.push("forward model never updated across the whole run".into());
        }
        if !backward_changed {
            failures.push("dual model never updated across the whole run".into());
        }
        Ok(failures)
    });
    report(7, "frozen-parameter contract across dual updates", t0, FROZEN_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// Fixtures for the two training-run checks (08, 09)
// ---------------------------------------------------------------------------

const RUN_SEEDS: [u64; 3] = [1, 2, 3];
const RUN_PAIRS: usize = 600;
const RUN_VOCAB: usize = 120;
const RUN_SPLIT: (f64, f64, f64) = (0.7, 0.15, 0.15);
const RUN_PRETRAIN_LR: f64 = 3e-2;
const RUN_CDL_LR: f64 = 3e-4;
const RUN_STEPS: u64 = 2000;
const RUN_TOTAL_STEPS: u64 = 2000;
const RUN_VALIDATION_INTERVAL: u64 = 50;
/// Pretrain depth for the gain check: converged enough to be a fair MLE
/// baseline, shallow enough that emotion metrics keep headroom for the
/// fine-tuning stage to claim.
const GAIN_PRETRAIN_EPOCHS: usize = 5;
/// Pretrain depth for the curriculum-ordering check: one epoch shallower,
/// where the hard tail of the corpus is still unlearned and batch ordering
/// visibly separates the two schedules.
const CURVE_PRETRAIN_EPOCHS: usize = 4;

/// Corpus, splits, configs, and the pretrained bundle for one seed.
struct SeedSetup {
    train: Corpus,
    valid: Corpus,
    test: Corpus,
    lexicon: EmotionLexicon,
    vocab: Vocabulary,
    trainer_cfg: TrainerConfig,
    pre: Pretrained,
}

fn seed_setup(seed: u64, pretrain_epochs: usize) -> anyhow::Result<SeedSetup> {
    let (corpus, lexicon, vocab) = generate_synthetic_corpus(RUN_PAIRS, RUN_VOCAB, seed)?;
    let (train, valid, test) = split_corpus(&corpus, RUN_SPLIT, seed)?;
    let lex = IndexedLexicon::new(&lexicon, &vocab);
    let model_cfg = ModelConfig {
        vocab_size: vocab.len(),
        hidden_size: 32,
        word_embed_dim: 24,
        emotion_embed_dim: 16,
        max_decode_len: 12,
        ..ModelConfig::default()
    };
    let cls_cfg = ClassifierConfig {
        vocab_size: vocab.len(),
        embed_dim: 32,
        filters_per_width: 24,
        epochs: 10,
        lr: 1e-2,
        ..ClassifierConfig::default()
    };
    let trainer_cfg = TrainerConfig {
        pretrain_epochs,
        pretrain_lr: RUN_PRETRAIN_LR,
        cdl_lr: RUN_CDL_LR,
        batch_size: 8,
        max_steps: RUN_STEPS,
        validation_interval: RUN_VALIDATION_INTERVAL,
        patience: 1000,
        curriculum: CurriculumConfig {
            total_steps: RUN_TOTAL_STEPS,
            ..CurriculumConfig::default()
        },
        seed,
        ..TrainerConfig::default()
    };
    let pre = pretrain(&train, &model_cfg, &cls_cfg, &trainer_cfg, &lex)?;
    Ok(SeedSetup {
        train,
        valid,
        test,
        lexicon,
        vocab,
        trainer_cfg,
        pre,
    })
}

fn greedy_test_metrics(
    forward: &SeqModel,
    cls: &EmotionClassifier,
    test: &Corpus,
    lex: &IndexedLexicon,
) -> anyhow::Result<(f64, f64)> {
    let mut generations = Vec::with_capacity(test.pairs.len());
    for pair in &test.pairs {
        let g = forward.generate_greedy(&pair.query.ids, pair.e_r, lex)?;
        generations.push((g.ids, pair.e_r));
    }
    Ok((
        emotion_accuracy(cls, &generations)?,
        emotion_word_rate(&generations, lex)?,
    ))
}

/// Runs one fine-tuning configuration and reports the best checkpoint's
/// test metrics plus the validation emotion-accuracy curve.
fn run_ablation(
    setup: &SeedSetup,
    ablation: AblationMode,
) -> anyhow::Result<((f64, f64), Vec<f64>)> {
    let dir = tempfile::tempdir()?;
    let cfg = TrainerConfig {
        ablation,
        ..setup.trainer_cfg.clone()
    };
    let mut tr = DualTrainer::new(
        Pretrained::clone(&setup.pre),
        setup.train.clone(),
        setup.valid.clone(),
        IndexedLexicon::new(&setup.lexicon, &setup.vocab),
        setup.vocab.content_hash(),
        cfg,
    )?;
    let outcome = tr.run(Some(dir.path()))?;
    let best = dir.path().join("checkpoint").join("forward");
    let (best_forward, _) = SeqModel::load(&best, Some(&setup.vocab.content_hash()))?;
    let lex = IndexedLexicon::new(&setup.lexicon, &setup.vocab);
    let metrics = greedy_test_metrics(&best_forward, &setup.pre.classifier, &setup.test, &lex)?;
    let curve = outcome
        .validations
        .iter()
        .map(|v| v.emotion_accuracy)
        .collect();
    Ok((metrics, curve))
}

/// Everything check 08 asserts on, reduced to plain numbers.
struct GainOutcome {
    seed: u64,
    classifier_test_accuracy: f64,
    pretrain_accuracy: f64,
    pretrain_word_rate: f64,
    full_accuracy: f64,
    emo_word_rate: f64,
}

struct GainFixtures {
    outcomes: Vec<GainOutcome>,
    build_time: Duration,
}

static GAIN_FIXTURES: OnceLock<Result<GainFixtures, String>> = OnceLock::new();

fn gain_fixtures() -> &'static Result<GainFixtures, String> {
    GAIN_FIXTURES.get_or_init(|| build_gain_fixtures().map_err(|e| format!("{e:#}")))
}

fn build_gain_fixtures() -> anyhow::Result<GainFixtures> {
    let build_start = Instant::now();
    let mut outcomes = Vec::new();
    for seed in RUN_SEEDS {
        let setup = seed_setup(seed, GAIN_PRETRAIN_EPOCHS)?;
        let lex = IndexedLexicon::new(&setup.lexicon, &setup.vocab);
        let classifier_test_accuracy = setup.pre.classifier.accuracy(&setup.test)?.overall;
        let (pretrain_accuracy, pretrain_word_rate) =
            greedy_test_metrics(&setup.pre.forward, &setup.pre.classifier, &setup.test, &lex)?;
        let ((full_accuracy, _), _) = run_ablation(&setup, AblationMode::Full)?;
        let ((_, emo_word_rate), _) = run_ablation(&setup, AblationMode::EmotionOnly)?;
        outcomes.push(GainOutcome {
            seed,
            classifier_test_accuracy,
            pretrain_accuracy,
            pretrain_word_rate,
            full_accuracy,
            emo_word_rate,
        });
    }
    Ok(GainFixtures {
        outcomes,
        build_time: build_start.elapsed(),
    })
}

/// Everything check 09 asserts on: matched validation curves per seed.
struct CurveOutcome {
    seed: u64,
    full_curve: Vec<f64>,
    plain_curve: Vec<f64>,
}

struct CurveFixtures {
    outcomes: Vec<CurveOutcome>,
    build_time: Duration,
}

static CURVE_FIXTURES: OnceLock<Result<CurveFixtures, String>> = OnceLock::new();

fn curve_fixtures() -> &'static Result<CurveFixtures, String> {
    CURVE_FIXTURES.get_or_init(|| build_curve_fixtures().map_err(|e| format!("{e:#}")))
}

fn build_curve_fixtures() -> anyhow::Result<CurveFixtures> {
    let build_start = Instant::now();
    let mut outcomes = Vec::new();
    for seed in RUN_SEEDS {
        let setup = seed_setup(seed, CURVE_PRETRAIN_EPOCHS)?;
        let (_, full_curve) = run_ablation(&setup, AblationMode::Full)?;
        let (_, plain_curve) = run_ablation(&setup, AblationMode::NoCurriculum)?;
        outcomes.push(CurveOutcome {
            seed,
            full_curve,
            plain_curve,
        });
    }
    Ok(CurveFixtures {
        outcomes,
        build_time: build_start.elapsed(),
    })
}

// ---------------------------------------------------------------------------
// 08: synthetic end-to-end gains over the pretrained checkpoint
// ---------------------------------------------------------------------------

const END_TO_END_MIN_CLS: f64 = 0.95;
const END_TO_END_MIN_GAIN: f64 = 0.05;
const END_TO_END_SEEDS_NEEDED: usize = 2;
const END_TO_END_BUDGET: Duration = Duration::from_secs(1800);

#[test]
fn c08_synthetic_end_to_end_classifier_and_cdl_gains() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        let fixtures = match gain_fixtures() {
            Ok(f) => f,
            Err(e) => return Ok(vec![format!("fixture build failed: {e}")]),
        };
        if fixtures.build_time > END_TO_END_BUDGET {
            failures.push(format!(
                "fixture build took {:.0?}, over the {END_TO_END_BUDGET:.0?} budget",
                fixtures.build_time
            ));
        }
        let mut cls_ok = 0usize;
        let mut gain_ok = 0usize;
        let mut rate_ok = 0usize;
        for o in &fixtures.outcomes {
            let gain = o.full_accuracy - o.pretrain_accuracy;
            if o.classifier_test_accuracy >= END_TO_END_MIN_CLS {
                cls_ok += 1;
            }
            if gain >= END_TO_END_MIN_GAIN - 1e-9 {
                gain_ok += 1;
            }
            if o.emo_word_rate > o.pretrain_word_rate {
                rate_ok += 1;
            }
            let _ = writeln!(
                std::io::stderr(),
                "  seed {}: classifier {:.3}, emotion accuracy {:.3} -> {:.3} (gain {gain:+.3}), \
                 word rate {:.3} -> {:.3}",
                o.seed,
                o.classifier_test_accuracy,
                o.pretrain_accuracy,
                o.full_accuracy,
                o.pretrain_word_rate,
                o.emo_word_rate,
            );
        }
        for (label, ok) in [
            ("classifier accuracy >= 0.95", cls_ok),
            ("emotion-accuracy gain >= 5 points", gain_ok),
            ("emotion-word rate strictly up under emotion-only rewards", rate_ok),
        ] {
            if ok < END_TO_END_SEEDS_NEEDED {
                failures.push(format!(
                    "{label} held in {ok}/{} seeds, need {END_TO_END_SEEDS_NEEDED}",
                    fixtures.outcomes.len()
                ));
            }
        }
        Ok(failures)
    });
    report(8, "synthetic end-to-end classifier and training gains", t0, END_TO_END_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// 09: curriculum outperforms plain dual learning on validation
// ---------------------------------------------------------------------------

const CURRICULUM_WIN_FRACTION: f64 = 0.7;
const CURRICULUM_SEEDS_NEEDED: usize = 2;
const CURRICULUM_RUN_BUDGET: Duration = Duration::from_secs(2700);

#[test]
fn c09_curriculum_beats_plain_dual_learning_on_validation() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        let fixtures = match curve_fixtures() {
            Ok(f) => f,
            Err(e) => return Ok(vec![format!("fixture build failed: {e}")]),
        };
        if fixtures.build_time > CURRICULUM_RUN_BUDGET {
            failures.push(format!(
                "fixture build took {:.0?}, over the {CURRICULUM_RUN_BUDGET:.0?} budget",
                fixtures.build_time
            ));
        }
        let mut seeds_ok = 0usize;
        for o in &fixtures.outcomes {
            let n = o.full_curve.len().min(o.plain_curve.len());
            if n == 0 {
                failures.push(format!("seed {}: no matched validation points", o.seed));
                continue;
            }
            let wins = (0..n)
                .filter(|&i| o.full_curve[i] >= o.plain_curve[i])
                .count();
            let fraction = wins as f64 / n as f64;
            if fraction >= CURRICULUM_WIN_FRACTION {
                seeds_ok += 1;
            }
            let _ = writeln!(
                std::io::stderr(),
                "  seed {}: curriculum >= plain dual learning at {wins}/{n} validation points ({:.0}%)",
                o.seed,
                100.0 * fraction
            );
        }
        if seeds_ok < CURRICULUM_SEEDS_NEEDED {
            failures.push(format!(
                "curriculum won >= {:.0}% of points in {seeds_ok}/{} seeds, need {CURRICULUM_SEEDS_NEEDED}",
                100.0 * CURRICULUM_WIN_FRACTION,
                fixtures.outcomes.len()
            ));
        }
        Ok(failures)
    });
    report(9, "curriculum beats plain dual learning on validation", t0, CURRICULUM_RUN_BUDGET, failures);
}

// ---------------------------------------------------------------------------
// 10: metric hand oracles
// ---------------------------------------------------------------------------

const METRIC_BUDGET: Duration = Duration::from_secs(1);

#[test]
fn c10_metric_hand_oracles() {
    let t0 = Instant::now();
    let failures = run_check(|| {
        let mut failures = Vec::new();
        let toks = |s: &[&str]| -> Vec<String> { s.iter().map(|t| t.to_string()).collect() };

        // BLEU-1: 3 of 4 unigrams overlap.
        let b = bleu_n(&[toks(&["a", "b", "c", "d"])], &[toks(&["a", "b", "x", "d"])], 1)?;
        if b != 0.75 {
            failures.push(format!("BLEU-1 hand case gave {b}, expected exactly 0.75"));
        }
        // Distinct-1: 2 unique of 3 tokens.
        let d = distinct_n(&[toks(&["a", "b", "a"])], 1);
        if d != 2.0 / 3.0 {
            failures.push(format!("distinct-1 hand case gave {d}, expected exactly 2/3"));
        }

        // Identity inputs score exactly 1 on BLEU and every embedding metric.
        let tokens: Vec<String> = ["joy", "glee", "gloom", "tear"]
            .into_iter()
            .map(str::to_string)
            .chain((0..12).map(|i| format!("t{i}")))
            .collect();
        let vocab = Vocabulary::from_tokens(tokens);
        let model = SeqModel::new(
            ModelConfig {
                vocab_size: vocab.len(),
                hidden_size: 8,
                word_embed_dim: 6,
                emotion_embed_dim: 4,
                max_decode_len: 8,
                ..ModelConfig::default()
            },
            Direction::Forward,
            7,
        )?;
        let wv = WordVectors::from_model(&model, &vocab)?;
        let sides = vec![
            toks(&["t0", "t1", "t2", "t3"]),
            toks(&["joy", "t4"]),
            toks(&["gloom", "t5", "t6", "t7", "t8"]),
        ];
        for n in 1..=4 {
            let b = bleu_n(&sides, &sides, n)?;
            if b != 1.0 {
                failures.push(format!("BLEU-{n} on identical inputs gave {b}, expected 1.0"));
            }
        }
        let embedding_checks = [
            ("embedding average", embedding_average(&sides, &sides, &wv)?),
            ("vector extrema", vector_extrema(&sides, &sides, &wv)?),
            ("greedy matching", greedy_matching(&sides, &sides, &wv)?),
            ("coherence", coherence(&sides, &sides, &wv)?),
        ];
        for (label, stat) in embedding_checks {
            if stat.reported() != 1.0 {
                failures.push(format!(
                    "{label} on identical inputs gave {}, expected 1.0",
                    stat.reported()
                ));
            }
        }

        // Emotion-word rate: of four non-neutral generations, three contain a
        // token from their target category; the neutral one is excluded.
        let mut lexicon = EmotionLexicon::new();
        lexicon.insert(Emotion::Happy, "joy".into())?;
        lexicon.insert(Emotion::Happy, "glee".into())?;
        lexicon.insert(Emotion::Sad, "gloom".into())?;
        let lex = IndexedLexicon::new(&lexicon, &vocab);
        let id = |t: &str| vocab.id_of(t).expect("token in vocabulary");
        let generations = vec![
            (vec![id("joy"), id("glee")], Emotion::Happy),
            (vec![id("joy"), id("gloom")], Emotion::Happy),
            (vec![id("glee")], Emotion::Happy),
            (vec![id("gloom"), id("gloom")], Emotion::Happy),
            (vec![id("gloom"), id("gloom")], Emotion::Neutral),
        ];
        let rate = emotion_word_rate(&generations, &lex)?;
        if rate != 0.75 {
            failures.push(format!("emotion-word rate gave {rate}, expected exactly 0.75"));
        }
        Ok(failures)
    });
    report(10, "metric hand oracles", t0, METRIC_BUDGET, failures);
}
