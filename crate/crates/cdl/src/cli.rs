//! Command-line entry points.
//!
//! Six subcommands wire the pipeline together: `gen-data` writes a synthetic
//! corpus with its splits, lexicon, and vocabulary; `pretrain` fits both
//! seq2seq directions and the classifier by maximum likelihood; `train-cdl`
//! runs the dual REINFORCE phase; `evaluate` scores the test split;
//! `rank-curriculum` dumps the difficulty rankings; and `chat` is a terminal
//! REPL that answers a query with one response per requested emotion.
//!
//! Settings come from a JSON config file with flag overrides (flags > file >
//! defaults). Every artifact-producing command writes a `meta.json` holding
//! the fully resolved configuration and seeds, so a run can be reproduced
//! from its output directory alone. Log verbosity is controlled by the
//! `CDL_LOG_LEVEL` environment variable.

use std::fs;
use std::io::{BufRead, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, EmotionClassifier, TrainSummary};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{
    load_corpus, save_corpus, split_corpus, Corpus, CorpusError, Emotion, EmotionLexicon,
    IndexedLexicon, Split, Vocabulary,
};
use crate::curriculum::{rank_by_difficulty, CurriculumError};
use crate::ecm::{Direction, ModelError, SeqModel};
use crate::eval::{full_report, write_generations_jsonl, EvalError, WordVectors};
use crate::trainer::{
    pretrain, DualTrainer, PretrainEpoch, Pretrained, SeedPlan, TrainerError,
    BACKWARD_DIR, CHECKPOINT_DIR, CLASSIFIER_DIR, FORWARD_DIR,
};

/// File names under the data directory.
pub const CORPUS_FILE: &str = "corpus.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const VOCAB_FILE: &str = "vocab.json";
/// Resolved-config manifest written by every artifact-producing command.
pub const RUN_META_FILE: &str = "meta.json";
/// Pretraining loss curves and collapse-guard floors.
pub const PRETRAIN_SUMMARY_FILE: &str = "summary.json";
/// Dual-phase outcome summary.
pub const TRAIN_SUMMARY_FILE: &str = "summary.json";
/// Evaluation artifacts.
pub const REPORT_FILE: &str = "report.json";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
/// Curriculum ranking dumps.
pub const RANK_FORWARD_FILE: &str = "curriculum_forward.csv";
pub const RANK_BACKWARD_FILE: &str = "curriculum_backward.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error("no checkpoint at {path}; {hint}")]
    MissingCheckpoint { path: String, hint: String },
    #[error("missing data artifact {path}; run `gen-data` first")]
    MissingData { path: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

/// Emotion selector for `chat`: one category or all six.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmotionSelection {
    All,
    One(Emotion),
}

fn parse_emotion_selection(s: &str) -> Result<EmotionSelection, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(EmotionSelection::All);
    }
    Emotion::from_name(s)
        .map(EmotionSelection::One)
        .map_err(|e| e.to_string())
}

fn parse_ablation(s: &str) -> Result<crate::trainer::AblationMode, String> {
    crate::trainer::AblationMode::from_label(s).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "cdl",
    about = "Emotion-controllable dialogue generation via curriculum dual learning",
    version
)]
pub struct Cli {
    /// JSON config file; defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed override (applies to data generation and training).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory override for the subcommand's artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus, splits, emotion lexicon, and vocabulary.
    GenData {
        /// Number of dialogue pairs (overrides the config).
        #[arg(long, value_name = "N")]
        n: Option<usize>,
    },
    /// Maximum-likelihood training of both seq2seq directions and the classifier.
    Pretrain,
    /// Dual REINFORCE training on top of the pretrained checkpoints.
    TrainCdl {
        /// Ablation: full, emo (emotion reward only), con (content reward
        /// only), or dl (no curriculum).
        #[arg(long, value_parser = parse_ablation)]
        ablation: Option<crate::trainer::AblationMode>,
    },
    /// Score the test split and write the metric report.
    Evaluate,
    /// Write the easiest-first difficulty rankings for both directions.
    RankCurriculum,
    /// Terminal REPL: type a query, get one response per requested emotion.
    Chat {
        /// Emotion to respond with, or "all" for one response per category.
        #[arg(long, value_parser = parse_emotion_selection, default_value = "all")]
        emotion: EmotionSelection,
    },
}

/// Parse the process arguments, run the command, and map errors to a
/// non-zero exit code with the full cause chain on stderr.
pub fn run() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CDL_LOG_LEVEL", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Run one parsed command to completion. Separated from [`run`] so tests can
/// drive commands without a process boundary.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.data.seed = seed;
        config.trainer.seed = seed;
    }
    match cli.command {
        Command::GenData { n } => {
            if let Some(n) = n {
                config.data.n_pairs = n;
            }
            config.validate()?;
            let out = cli.out.unwrap_or_else(|| config.paths.data_dir.clone());
            cmd_gen_data(&config, &out)
        }
        Command::Pretrain => {
            config.validate()?;
            let out = cli.out.unwrap_or_else(|| config.paths.pretrain_dir.clone());
            cmd_pretrain(&config, &out)
        }
        Command::TrainCdl { ablation } => {
            if let Some(mode) = ablation {
                config.trainer.ablation = mode;
            }
            config.validate()?;
            let out = cli.out.unwrap_or_else(|| config.paths.train_dir.clone());
            cmd_train_cdl(&config, &out)
        }
        Command::Evaluate => {
            config.validate()?;
            let out = cli.out.unwrap_or_else(|| config.paths.eval_dir.clone());
            cmd_evaluate(&config, &out)
        }
        Command::RankCurriculum => {
            config.validate()?;
            let out = cli.out.unwrap_or_else(|| config.paths.train_dir.clone());
            cmd_rank_curriculum(&config, &out)
        }
        Command::Chat { emotion } => {
            config.validate()?;
            let stdin = std::io::stdin();
            let mut out = std::io::stdout();
            cmd_chat(&config, emotion, cli.out.as_deref(), &mut stdin.lock(), &mut out)
        }
    }
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Reproducibility manifest: the command, the fully resolved configuration,
/// and the seeds that drove it. Deliberately excludes timestamps and host
/// details so equal manifests imply equal outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub config: RunConfig,
    pub seeds: SeedPlan,
    pub vocab_hash: Option<String>,
}

fn write_run_meta(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    vocab_hash: Option<String>,
) -> Result<(), CliError> {
    let meta = RunMeta {
        command: command.to_string(),
        config: config.clone(),
        seeds: SeedPlan::derive(config.trainer.seed),
        vocab_hash,
    };
    write_json(&dir.join(RUN_META_FILE), &meta)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Invalid(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("cannot parse {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn cmd_gen_data(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    use crate::corpus::generate_synthetic_corpus;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let d = &config.data;
    let (corpus, lexicon, vocab) = generate_synthetic_corpus(d.n_pairs, d.vocab_size, d.seed)?;
    let (train, valid, test) = split_corpus(&corpus, d.split.as_tuple(), d.seed)?;
    save_corpus(&corpus, &out.join(CORPUS_FILE))?;
    save_corpus(&train, &out.join(TRAIN_FILE))?;
    save_corpus(&valid, &out.join(VALID_FILE))?;
    save_corpus(&test, &out.join(TEST_FILE))?;
    lexicon.save(&out.join(LEXICON_FILE))?;
    vocab.save(&out.join(VOCAB_FILE))?;
    write_run_meta(out, "gen-data", config, Some(vocab.content_hash()))?;
    log::info!(
        "wrote {} pairs (train {}, valid {}, test {}), vocabulary {} to {}",
        corpus.len(),
        train.len(),
        valid.len(),
        test.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared artifact loading
// ---------------------------------------------------------------------------

struct DataArtifacts {
    train: Corpus,
    valid: Corpus,
    test: Corpus,
    lexicon: EmotionLexicon,
    vocab: Vocabulary,
}

fn load_data(config: &RunConfig) -> Result<DataArtifacts, CliError> {
    let dir = &config.paths.data_dir;
    let require = |name: &str| -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingData {
                path: path.display().to_string(),
            })
        }
    };
    let vocab = Vocabulary::load(&require(VOCAB_FILE)?)?;
    let lexicon = EmotionLexicon::load(&require(LEXICON_FILE)?)?;
    let (train, _) = load_corpus(&require(TRAIN_FILE)?, Some(&vocab), Split::Train)?;
    let (valid, _) = load_corpus(&require(VALID_FILE)?, Some(&vocab), Split::Valid)?;
    let (test, _) = load_corpus(&require(TEST_FILE)?, Some(&vocab), Split::Test)?;
    Ok(DataArtifacts {
        train,
        valid,
        test,
        lexicon,
        vocab,
    })
}

/// Pretraining summary: loss curves plus everything `train-cdl` needs to
/// reconstruct the trainer (collapse floors and the seed plan).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub epochs: Vec<PretrainEpoch>,
    pub classifier: TrainSummary,
    pub forward_nll_floor: Option<f64>,
    pub backward_nll_floor: Option<f64>,
    pub seeds: SeedPlan,
}

fn missing_checkpoint(path: &Path, hint: &str) -> CliError {
    CliError::MissingCheckpoint {
        path: path.display().to_string(),
        hint: hint.to_string(),
    }
}

fn load_pretrained(config: &RunConfig, vocab_hash: &str) -> Result<Pretrained, CliError> {
    let dir = &config.paths.pretrain_dir;
    for sub in [FORWARD_DIR, BACKWARD_DIR, CLASSIFIER_DIR] {
        let path = dir.join(sub);
        if !path.is_dir() {
            return Err(missing_checkpoint(&path, "run `pretrain` first"));
        }
    }
    let (forward, _) = SeqModel::load(&dir.join(FORWARD_DIR), Some(vocab_hash))?;
    let (backward, _) = SeqModel::load(&dir.join(BACKWARD_DIR), Some(vocab_hash))?;
    let (classifier, _) = EmotionClassifier::load(&dir.join(CLASSIFIER_DIR), Some(vocab_hash))?;
    let summary: PretrainSummary = read_json(&dir.join(PRETRAIN_SUMMARY_FILE))?;
    Ok(Pretrained {
        forward,
        backward,
        classifier,
        classifier_summary: summary.classifier,
        epochs: summary.epochs,
        forward_nll_floor: summary.forward_nll_floor,
        backward_nll_floor: summary.backward_nll_floor,
        seeds: summary.seeds,
    })
}

/// The models a read-only command works with, preferring the dual-phase
/// checkpoint and falling back to the pretrained one.
struct LoadedModels {
    forward: SeqModel,
    classifier: EmotionClassifier,
    source: PathBuf,
}

fn load_models_for_inference(config: &RunConfig, vocab_hash: &str) -> Result<LoadedModels, CliError> {
    let trained = config.paths.train_dir.join(CHECKPOINT_DIR);
    let pretrained = config.paths.pretrain_dir.clone();
    let source = if trained.join(FORWARD_DIR).is_dir() {
        trained
    } else if pretrained.join(FORWARD_DIR).is_dir() {
        pretrained
    } else {
        return Err(missing_checkpoint(
            &trained.join(FORWARD_DIR),
            &format!(
                "also tried {}; run `pretrain` (and optionally `train-cdl`) first",
                pretrained.join(FORWARD_DIR).display()
            ),
        ));
    };
    let (forward, _) = SeqModel::load(&source.join(FORWARD_DIR), Some(vocab_hash))?;
    let (classifier, _) = EmotionClassifier::load(&source.join(CLASSIFIER_DIR), Some(vocab_hash))?;
    log::info!("using models from {}", source.display());
    Ok(LoadedModels {
        forward,
        classifier,
        source,
    })
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

fn cmd_pretrain(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = load_data(config)?;
    let resolved = config.with_vocab_size(data.vocab.len());
    let lex = IndexedLexicon::new(&data.lexicon, &data.vocab);
    let vocab_hash = data.vocab.content_hash();

    let trained = pretrain(
        &data.train,
        &resolved.model,
        &resolved.classifier,
        &resolved.trainer,
        &lex,
    )?;

    for sub in [FORWARD_DIR, BACKWARD_DIR, CLASSIFIER_DIR] {
        fs::create_dir_all(out.join(sub)).map_err(io_err(&out.join(sub)))?;
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
    write_run_meta(out, "pretrain", &resolved, Some(vocab_hash))?;
    log::info!(
        "pretrained {} epochs per direction (classifier holdout accuracy {:.3}); checkpoints in {}",
        resolved.trainer.pretrain_epochs,
        trained.classifier_summary.best_holdout_accuracy,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-cdl
// ---------------------------------------------------------------------------

fn cmd_train_cdl(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = load_data(config)?;
    let resolved = config.with_vocab_size(data.vocab.len());
    let vocab_hash = data.vocab.content_hash();
    let lex = IndexedLexicon::new(&data.lexicon, &data.vocab);
    let pretrained = load_pretrained(&resolved, &vocab_hash)?;

    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut trainer = DualTrainer::new(
        pretrained,
        data.train,
        data.valid,
        lex,
        vocab_hash.clone(),
        resolved.trainer.clone(),
    )?;
    let outcome = trainer.run(Some(out))?;
    write_json(&out.join(TRAIN_SUMMARY_FILE), &outcome)?;
    write_run_meta(out, "train-cdl", &resolved, Some(vocab_hash))?;
    log::info!(
        "ran {} iterations (ablation {}); best validation emotion accuracy {:?} at step {:?}; artifacts in {}",
        outcome.steps_run,
        resolved.trainer.ablation.label(),
        outcome.best_accuracy,
        outcome.best_step,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn cmd_evaluate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = load_data(config)?;
    let resolved = config.with_vocab_size(data.vocab.len());
    let vocab_hash = data.vocab.content_hash();
    let lex = IndexedLexicon::new(&data.lexicon, &data.vocab);
    let models = load_models_for_inference(&resolved, &vocab_hash)?;

    let vectors = match &resolved.paths.word_vectors {
        Some(path) => WordVectors::load(path)?,
        None => WordVectors::from_model(&models.forward, &data.vocab)?,
    };
    let (report, generations) = full_report(
        &models.forward,
        &models.classifier,
        &data.test,
        &lex,
        &data.vocab,
        &vectors,
    )?;

    fs::create_dir_all(out).map_err(io_err(out))?;
    report.write_json(&out.join(REPORT_FILE))?;
    write_generations_jsonl(&generations, &out.join(GENERATIONS_FILE))?;
    write_run_meta(out, "evaluate", &resolved, Some(vocab_hash))?;
    println!("{}", report.table());
    log::info!(
        "evaluated {} pairs with models from {}; report in {}",
        report.pairs,
        models.source.display(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// rank-curriculum
// ---------------------------------------------------------------------------

fn cmd_rank_curriculum(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = load_data(config)?;
    let resolved = config.with_vocab_size(data.vocab.len());
    let vocab_hash = data.vocab.content_hash();
    let models = load_models_for_inference(&resolved, &vocab_hash)?;

    let forward = rank_by_difficulty(&data.train, &models.classifier, Direction::Forward)?;
    let backward = rank_by_difficulty(&data.train, &models.classifier, Direction::Backward)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    forward.write_csv(&out.join(RANK_FORWARD_FILE))?;
    backward.write_csv(&out.join(RANK_BACKWARD_FILE))?;
    write_run_meta(out, "rank-curriculum", &resolved, Some(vocab_hash))?;
    log::info!(
        "ranked {} training pairs per direction; CSVs in {}",
        data.train.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// chat
// ---------------------------------------------------------------------------

/// One chat turn: the classifier's read of the query plus one generated
/// response per requested emotion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatReply {
    pub query: String,
    pub query_emotion: String,
    pub query_confidence: f64,
    /// `(emotion name, response text)` pairs in category order.
    pub responses: Vec<(String, String)>,
}

/// Answer a single query line. The query's emotion is predicted with the
/// classifier (it is not observable at inference time); responses are greedy
/// decodes conditioned on each requested emotion.
pub fn respond_to_query(
    forward: &SeqModel,
    classifier: &EmotionClassifier,
    vocab: &Vocabulary,
    lex: &IndexedLexicon,
    line: &str,
    selection: EmotionSelection,
) -> Result<ChatReply, CliError> {
    let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(CliError::Invalid("empty query".into()));
    }
    let query = vocab.encode(&tokens);
    let (e_q, confidence) = classifier.predict(&query.ids)?;
    let targets: Vec<Emotion> = match selection {
        EmotionSelection::All => Emotion::ALL.to_vec(),
        EmotionSelection::One(e) => vec![e],
    };
    let mut responses = Vec::with_capacity(targets.len());
    for &emotion in &targets {
        let generated = forward.generate_greedy(&query.ids, emotion, lex)?;
        let text = generated.into_utterance(vocab).tokens.join(" ");
        responses.push((emotion.name().to_string(), text));
    }
    Ok(ChatReply {
        query: line.to_string(),
        query_emotion: e_q.name().to_string(),
        query_confidence: confidence,
        responses,
    })
}

fn cmd_chat(
    config: &RunConfig,
    selection: EmotionSelection,
    out: Option<&Path>,
    input: &mut dyn BufRead,
    output: &mut dyn IoWrite,
) -> Result<(), CliError> {
    let data = load_data(config)?;
    let resolved = config.with_vocab_size(data.vocab.len());
    let vocab_hash = data.vocab.content_hash();
    let lex = IndexedLexicon::new(&data.lexicon, &data.vocab);
    let models = load_models_for_inference(&resolved, &vocab_hash)?;

    // With an output directory the session is also recorded: the manifest up
    // front, then one JSONL line per turn.
    let mut transcript = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            write_run_meta(dir, "chat", &resolved, Some(vocab_hash))?;
            let path = dir.join("transcript.jsonl");
            Some((
                std::io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?),
                path,
            ))
        }
        None => None,
    };

    writeln!(output, "type a query (blank line or EOF to quit)").map_err(stdout_err)?;
    let mut line = String::new();
    loop {
        write!(output, "> ").map_err(stdout_err)?;
        output.flush().map_err(stdout_err)?;
        line.clear();
        if input.read_line(&mut line).map_err(stdout_err)? == 0 {
            break;
        }
        let query = line.trim();
        if query.is_empty() || query == "quit" || query == "exit" {
            break;
        }
        match respond_to_query(&models.forward, &models.classifier, &data.vocab, &lex, query, selection) {
            Ok(reply) => {
                writeln!(
                    output,
                    "[query read as {} ({:.2})]",
                    reply.query_emotion, reply.query_confidence
                )
                .map_err(stdout_err)?;
                for (emotion, text) in &reply.responses {
                    writeln!(output, "{emotion}: {text}").map_err(stdout_err)?;
                }
                if let Some((w, path)) = transcript.as_mut() {
                    let json = serde_json::to_string(&reply)
                        .map_err(|e| CliError::Invalid(e.to_string()))?;
                    writeln!(w, "{json}").map_err(io_err(path))?;
                }
            }
            Err(e) => writeln!(output, "cannot answer: {e}").map_err(stdout_err)?,
        }
    }
    if let Some((w, path)) = transcript.as_mut() {
        w.flush().map_err(io_err(path))?;
    }
    Ok(())
}

fn stdout_err(source: std::io::Error) -> CliError {
    CliError::Io {
        path: "terminal".to_string(),
        source,
    }
}
