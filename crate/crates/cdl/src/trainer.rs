//! Pretraining and the alternating dual REINFORCE training loop.
//!
//! Training proceeds in two phases. Pretraining fits the forward model
//! (query -> response), the backward model (response -> query), and the
//! emotion classifier by plain maximum likelihood. The dual phase then
//! alternates between the two directions every iteration: draw a curriculum
//! batch, sample one rollout per input, reward it against a greedy baseline
//! (self-critical REINFORCE), apply one policy-gradient step, and follow with
//! one teacher-forcing step on the same gold tuples so the policy stays
//! anchored to the data. The classifier is frozen throughout the dual phase;
//! each direction's update never touches the other direction's parameters.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    train_classifier, ClassifierConfig, ClassifierError, EmotionClassifier, TrainSummary,
};
use crate::corpus::{Corpus, DialoguePair, IndexedLexicon};
use crate::curriculum::{
    competence, rank_by_difficulty, sample_batch, CurriculumConfig, CurriculumError, RankedDataset,
};
use crate::ecm::{Direction, ModelConfig, ModelError, PolicyItem, SeqModel};
use crate::eval::{emotion_accuracy, EvalError};
use crate::optim::{Adam, AdamState};
use crate::rewards::{
    RewardBreakdown, RewardConfig, RewardContext, RewardError, RewardTraceRecord,
};

/// A teacher-forcing loss this many times above its pretraining floor is
/// treated as policy collapse and halts training with a diagnostic.
pub const COLLAPSE_FACTOR: f64 = 3.0;

/// File names used inside a run directory / checkpoint directory.
pub const STEP_LOG_FILE: &str = "steps.jsonl";
pub const VALIDATION_LOG_FILE: &str = "validation.jsonl";
pub const REWARD_TRACE_FILE: &str = "reward_trace.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const FORWARD_DIR: &str = "forward";
pub const BACKWARD_DIR: &str = "backward";
pub const CLASSIFIER_DIR: &str = "classifier";
pub const META_FILE: &str = "meta.json";
pub const OPTIMIZER_FILE: &str = "optimizer.json";

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid trainer configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("serialization failed: {0}")]
    Serialization(#[from] serde_json::Error),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "teacher-forcing loss collapsed in the {direction} model at step {step}: \
         nll {nll:.4} exceeds {factor}x the pretraining floor {reference:.4}"
    )]
    Collapse {
        direction: &'static str,
        step: u64,
        nll: f64,
        reference: f64,
        factor: f64,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainerError + '_ {
    move |source| TrainerError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which parts of the full method a run exercises. `Full` is the complete
/// method; `EmotionOnly` / `ContentOnly` keep a single reward term; and
/// `NoCurriculum` keeps the full reward but samples batches uniformly instead
/// of by competence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AblationMode {
    #[default]
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "emo")]
    EmotionOnly,
    #[serde(rename = "con")]
    ContentOnly,
    #[serde(rename = "dl")]
    NoCurriculum,
}

impl AblationMode {
    pub fn label(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::EmotionOnly => "emo",
            AblationMode::ContentOnly => "con",
            AblationMode::NoCurriculum => "dl",
        }
    }

    pub fn from_label(s: &str) -> Result<Self, TrainerError> {
        match s {
            "full" => Ok(AblationMode::Full),
            "emo" => Ok(AblationMode::EmotionOnly),
            "con" => Ok(AblationMode::ContentOnly),
            "dl" => Ok(AblationMode::NoCurriculum),
            other => Err(TrainerError::Invalid(format!(
                "unknown ablation mode {other:?}; expected full, emo, con, or dl"
            ))),
        }
    }
}

/// Hyperparameters of both training phases. Defaults are the full-scale
/// values; desk-scale runs and tests override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Maximum-likelihood epochs per direction before the dual phase.
    pub pretrain_epochs: usize,
    /// Adam learning rate during pretraining.
    pub pretrain_lr: f64,
    /// Adam learning rate during the dual phase (policy and teacher forcing).
    pub cdl_lr: f64,
    /// Pairs per batch in both phases.
    pub batch_size: usize,
    /// Dual-phase iterations to run (each iteration updates both directions).
    pub max_steps: u64,
    /// Validate (and possibly checkpoint) every this many iterations.
    pub validation_interval: u64,
    /// Stop after this many consecutive validations without improvement.
    pub patience: usize,
    /// Global gradient-norm clip applied to every update.
    pub grad_clip: f64,
    /// Softmax temperature for rollout sampling.
    pub sample_temperature: f64,
    /// Which reward terms / curriculum the run uses.
    pub ablation: AblationMode,
    /// Reward weights; the enabled flags are overridden by `ablation`.
    pub reward: RewardConfig,
    /// Competence schedule; `enabled` is overridden by `ablation`.
    pub curriculum: CurriculumConfig,
    /// Master seed; every random choice in training derives from it.
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 10,
            pretrain_lr: 0.05,
            cdl_lr: 1e-5,
            batch_size: 64,
            max_steps: 10_000,
            validation_interval: 200,
            patience: 5,
            grad_clip: 5.0,
            sample_temperature: 1.0,
            ablation: AblationMode::Full,
            reward: RewardConfig::default(),
            curriculum: CurriculumConfig::default(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(TrainerError::Invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive(self.pretrain_lr, "pretrain_lr")?;
        positive(self.cdl_lr, "cdl_lr")?;
        positive(self.grad_clip, "grad_clip")?;
        positive(self.sample_temperature, "sample_temperature")?;
        if self.batch_size == 0 {
            return Err(TrainerError::Invalid("batch_size must be at least 1".into()));
        }
        if self.validation_interval == 0 {
            return Err(TrainerError::Invalid("validation_interval must be at least 1".into()));
        }
        if !(self.reward.lambda.is_finite() && self.reward.lambda >= 0.0) {
            return Err(TrainerError::Invalid(format!(
                "reward lambda must be finite and non-negative, got {}",
                self.reward.lambda
            )));
        }
        if !(self.reward.gamma.is_finite() && self.reward.gamma >= 0.0) {
            return Err(TrainerError::Invalid(format!(
                "reward gamma must be finite and non-negative, got {}",
                self.reward.gamma
            )));
        }
        self.curriculum
            .validate()
            .map_err(|e| TrainerError::Invalid(e.to_string()))
    }

    /// Reward configuration with the enabled flags implied by the ablation.
    pub fn effective_reward_config(&self) -> RewardConfig {
        let mut r = self.reward;
        match self.ablation {
            AblationMode::Full | AblationMode::NoCurriculum => {
                r.emotion_enabled = true;
                r.content_enabled = true;
            }
            AblationMode::EmotionOnly => {
                r.emotion_enabled = true;
                r.content_enabled = false;
            }
            AblationMode::ContentOnly => {
                r.emotion_enabled = false;
                r.content_enabled = true;
            }
        }
        r
    }

    /// Curriculum configuration with `enabled` implied by the ablation.
    pub fn effective_curriculum(&self) -> CurriculumConfig {
        let mut c = self.curriculum;
        c.enabled = c.enabled && self.ablation != AblationMode::NoCurriculum;
        c
    }
}

// ---------------------------------------------------------------------------
// Seeds and derived random streams
// ---------------------------------------------------------------------------

/// Every seed a run uses, derived from one master seed in a fixed order so a
/// whole run is reproducible from a single number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub forward_init: u64,
    pub backward_init: u64,
    pub classifier: u64,
    pub pretrain_forward: u64,
    pub pretrain_backward: u64,
}

impl SeedPlan {
    pub fn derive(master: u64) -> SeedPlan {
        let mut rng = ChaCha12Rng::seed_from_u64(master);
        SeedPlan {
            master,
            forward_init: rng.random(),
            backward_init: rng.random(),
            classifier: rng.random(),
            pretrain_forward: rng.random(),
            pretrain_backward: rng.random(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum StreamKind {
    BatchDraw = 0,
    Rollout = 1,
}

/// Stateless per-event seed: the same `(master, step, direction, sample,
/// kind)` tuple always yields the same stream, so training can resume from a
/// checkpoint mid-run and replay identical randomness.
fn stream_seed(master: u64, step: u64, direction: Direction, sample: u64, kind: StreamKind) -> u64 {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&step.to_le_bytes());
    seed[16..24].copy_from_slice(&sample.to_le_bytes());
    seed[24] = match direction {
        Direction::Forward => 0,
        Direction::Backward => 1,
    };
    seed[25] = kind as u8;
    ChaCha12Rng::from_seed(seed).random()
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

/// Per-epoch pretraining statistics (batch-size-weighted means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub direction: String,
    pub epoch: usize,
    pub mean_nll: f64,
    pub mean_total: f64,
}

/// Everything pretraining produces: both directions, the frozen classifier,
/// and the final-epoch loss floors the collapse guard compares against.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub forward: SeqModel,
    pub backward: SeqModel,
    pub classifier: EmotionClassifier,
    pub classifier_summary: TrainSummary,
    pub epochs: Vec<PretrainEpoch>,
    /// Final-epoch mean teacher-forcing nll per direction; `None` when no
    /// pretraining ran, which disables the collapse guard.
    pub forward_nll_floor: Option<f64>,
    pub backward_nll_floor: Option<f64>,
    pub seeds: SeedPlan,
}

/// Maximum-likelihood pretraining of both directions plus classifier
/// training. With `pretrain_epochs == 0` the seq2seq models are returned at
/// their seeded initialization (the classifier still trains — rewards,
/// ranking, and validation need it).
pub fn pretrain(
    train: &Corpus,
    model_config: &ModelConfig,
    cls_config: &ClassifierConfig,
    trainer_config: &TrainerConfig,
    lex: &IndexedLexicon,
) -> Result<Pretrained, TrainerError> {
    model_config.validate()?;
    trainer_config.validate()?;
    if train.is_empty() {
        return Err(TrainerError::Invalid("training corpus is empty".into()));
    }
    if lex.vocab_size() != model_config.vocab_size {
        return Err(TrainerError::Invalid(format!(
            "lexicon is indexed against vocabulary size {} but the model expects {}",
            lex.vocab_size(),
            model_config.vocab_size
        )));
    }

    let seeds = SeedPlan::derive(trainer_config.seed);
    let mut forward = SeqModel::new(model_config.clone(), Direction::Forward, seeds.forward_init)?;
    let mut backward =
        SeqModel::new(model_config.clone(), Direction::Backward, seeds.backward_init)?;
    let (classifier, classifier_summary) =
        train_classifier(train, cls_config.clone(), seeds.classifier)?;

    let mut epochs = Vec::new();
    let forward_nll_floor =
        pretrain_direction(&mut forward, train, lex, trainer_config, seeds.pretrain_forward, &mut epochs)?;
    let backward_nll_floor = pretrain_direction(
        &mut backward,
        train,
        lex,
        trainer_config,
        seeds.pretrain_backward,
        &mut epochs,
    )?;

    Ok(Pretrained {
        forward,
        backward,
        classifier,
        classifier_summary,
        epochs,
        forward_nll_floor,
        backward_nll_floor,
        seeds,
    })
}

fn pretrain_direction(
    model: &mut SeqModel,
    train: &Corpus,
    lex: &IndexedLexicon,
    config: &TrainerConfig,
    seed: u64,
    epochs_out: &mut Vec<PretrainEpoch>,
) -> Result<Option<f64>, TrainerError> {
    if config.pretrain_epochs == 0 {
        return Ok(None);
    }
    let mut opt = Adam::new(model.params(), config.pretrain_lr);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_nll = f64::NAN;
    for epoch in 0..config.pretrain_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut nll_sum = 0.0;
        let mut total_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&DialoguePair> = chunk.iter().map(|&i| &train.pairs[i]).collect();
            let loss = model.mle_update(&batch, lex, &mut opt, Some(config.grad_clip))?;
            nll_sum += loss.nll * chunk.len() as f64;
            total_sum += loss.total * chunk.len() as f64;
        }
        let mean_nll = nll_sum / train.len() as f64;
        epochs_out.push(PretrainEpoch {
            direction: model.direction().label().to_string(),
            epoch,
            mean_nll,
            mean_total: total_sum / train.len() as f64,
        });
        last_nll = mean_nll;
    }
    Ok(Some(last_nll))
}

// ---------------------------------------------------------------------------
// Dual-phase records
// ---------------------------------------------------------------------------

/// One line of the step log: what a single direction's update did at one
/// iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub direction: String,
    /// Competence schedule value f(t) at this iteration.
    pub competence: f64,
    /// Number of easiest-first samples the batch was drawn from.
    pub frontier: usize,
    pub batch: usize,
    /// Rollouts that contributed to the policy update / were skipped.
    pub rl_scored: usize,
    pub rl_skipped: usize,
    pub mean_reward: f64,
    pub mean_baseline: f64,
    pub mean_advantage: f64,
    pub mean_logprob: f64,
    /// Policy-gradient global norm after batch averaging, before clipping.
    pub grad_norm: f64,
    pub tf_nll: f64,
    pub tf_type_loss: f64,
    pub tf_memory_reg: f64,
    pub tf_total: f64,
}

/// One line of the validation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    /// Fraction of greedy validation responses the frozen classifier assigns
    /// to the requested emotion.
    pub emotion_accuracy: f64,
    pub best_so_far: f64,
    pub improved: bool,
}

/// Result of one direction's update: the step-log line plus the per-sample
/// reward traces behind it.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: StepRecord,
    pub traces: Vec<RewardTraceRecord>,
}

/// What a whole [`DualTrainer::run`] call did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Iterations executed by this call (not counting resumed history).
    pub steps_run: u64,
    pub final_step: u64,
    pub validations: Vec<ValidationRecord>,
    pub best_accuracy: Option<f64>,
    pub best_step: Option<u64>,
    pub stopped_early: bool,
}

/// Checkpoint manifest tying the three component checkpoints together.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerCheckpointMeta {
    pub kind: String,
    pub step: u64,
    pub seeds: SeedPlan,
    pub config: TrainerConfig,
    pub vocab_hash: String,
    pub classifier_hash: String,
    pub forward_nll_floor: Option<f64>,
    pub backward_nll_floor: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub best_step: Option<u64>,
    pub stale_checks: usize,
}

const TRAINER_META_KIND: &str = "cdl-trainer";

// ---------------------------------------------------------------------------
// Dual trainer
// ---------------------------------------------------------------------------

/// The dual-phase training loop. Owns both directions, the frozen
/// classifier, the optimizers, and the curriculum state.
#[derive(Debug)]
pub struct DualTrainer {
    config: TrainerConfig,
    forward: SeqModel,
    backward: SeqModel,
    classifier: EmotionClassifier,
    opt_forward: Adam,
    opt_backward: Adam,
    train: Corpus,
    validation: Corpus,
    lex: IndexedLexicon,
    vocab_hash: String,
    ranked_forward: RankedDataset,
    ranked_backward: RankedDataset,
    reward_config: RewardConfig,
    curriculum: CurriculumConfig,
    seeds: SeedPlan,
    /// Iteration counter; also the curriculum clock t.
    t: u64,
    forward_nll_floor: Option<f64>,
    backward_nll_floor: Option<f64>,
    best_accuracy: Option<f64>,
    best_step: Option<u64>,
    stale_checks: usize,
}

impl DualTrainer {
    pub fn new(
        pretrained: Pretrained,
        train: Corpus,
        validation: Corpus,
        lex: IndexedLexicon,
        vocab_hash: String,
        config: TrainerConfig,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        let opt_forward = Adam::new(pretrained.forward.params(), config.cdl_lr);
        let opt_backward = Adam::new(pretrained.backward.params(), config.cdl_lr);
        Self::assemble(
            config,
            pretrained.forward,
            pretrained.backward,
            pretrained.classifier,
            opt_forward,
            opt_backward,
            train,
            validation,
            lex,
            vocab_hash,
            pretrained.seeds,
            0,
            pretrained.forward_nll_floor,
            pretrained.backward_nll_floor,
            None,
            None,
            0,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainerConfig,
        forward: SeqModel,
        backward: SeqModel,
        classifier: EmotionClassifier,
        opt_forward: Adam,
        opt_backward: Adam,
        train: Corpus,
        validation: Corpus,
        lex: IndexedLexicon,
        vocab_hash: String,
        seeds: SeedPlan,
        t: u64,
        forward_nll_floor: Option<f64>,
        backward_nll_floor: Option<f64>,
        best_accuracy: Option<f64>,
        best_step: Option<u64>,
        stale_checks: usize,
    ) -> Result<Self, TrainerError> {
        if train.is_empty() {
            return Err(TrainerError::Invalid("training corpus is empty".into()));
        }
        if validation.is_empty() {
            return Err(TrainerError::Invalid("validation corpus is empty".into()));
        }
        if forward.direction() != Direction::Forward || backward.direction() != Direction::Backward
        {
            return Err(TrainerError::Invalid(
                "models passed in the wrong order: expected (forward, backward)".into(),
            ));
        }
        for model in [&forward, &backward] {
            if model.config.vocab_size != lex.vocab_size() {
                return Err(TrainerError::Invalid(format!(
                    "{} model expects vocabulary size {} but the lexicon is indexed against {}",
                    model.direction().label(),
                    model.config.vocab_size,
                    lex.vocab_size()
                )));
            }
        }
        let ranked_forward = rank_by_difficulty(&train, &classifier, Direction::Forward)?;
        let ranked_backward = rank_by_difficulty(&train, &classifier, Direction::Backward)?;
        let reward_config = config.effective_reward_config();
        let curriculum = config.effective_curriculum();
        Ok(Self {
            config,
            forward,
            backward,
            classifier,
            opt_forward,
            opt_backward,
            train,
            validation,
            lex,
            vocab_hash,
            ranked_forward,
            ranked_backward,
            reward_config,
            curriculum,
            seeds,
            t,
            forward_nll_floor,
            backward_nll_floor,
            best_accuracy,
            best_step,
            stale_checks,
        })
    }

    pub fn forward(&self) -> &SeqModel {
        &self.forward
    }

    pub fn backward(&self) -> &SeqModel {
        &self.backward
    }

    pub fn classifier(&self) -> &EmotionClassifier {
        &self.classifier
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn seeds(&self) -> SeedPlan {
        self.seeds
    }

    /// Iterations completed so far (the curriculum clock).
    pub fn current_step(&self) -> u64 {
        self.t
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.best_accuracy
    }

    pub fn ranked(&self, direction: Direction) -> &RankedDataset {
        match direction {
            Direction::Forward => &self.ranked_forward,
            Direction::Backward => &self.ranked_backward,
        }
    }

    /// One policy + teacher-forcing update of the forward model. Does not
    /// advance the curriculum clock; [`DualTrainer::step`] does.
    pub fn rl_step_forward(&mut self) -> Result<StepOutcome, TrainerError> {
        self.direction_step(Direction::Forward)
    }

    /// One policy + teacher-forcing update of the backward model.
    pub fn rl_step_backward(&mut self) -> Result<StepOutcome, TrainerError> {
        self.direction_step(Direction::Backward)
    }

    /// One full iteration: forward update, backward update, clock advance.
    pub fn step(&mut self) -> Result<(StepOutcome, StepOutcome), TrainerError> {
        let f = self.direction_step(Direction::Forward)?;
        let b = self.direction_step(Direction::Backward)?;
        self.advance_clock();
        Ok((f, b))
    }

    /// Advance the curriculum clock by one iteration. [`DualTrainer::step`]
    /// calls this after both phase updates; callers driving
    /// [`DualTrainer::rl_step_forward`] and [`DualTrainer::rl_step_backward`]
    /// directly must advance the clock themselves to keep the competence
    /// schedule moving.
    pub fn advance_clock(&mut self) {
        self.t += 1;
    }

    fn direction_step(&mut self, dir: Direction) -> Result<StepOutcome, TrainerError> {
        let t = self.t;
        let batch_size = self.config.batch_size;
        let temperature = self.config.sample_temperature;
        let clip = Some(self.config.grad_clip);
        let master = self.seeds.master;

        let (ranked, floor) = match dir {
            Direction::Forward => (&self.ranked_forward, self.forward_nll_floor),
            Direction::Backward => (&self.ranked_backward, self.backward_nll_floor),
        };
        let frontier = ranked.frontier_len(t, &self.curriculum, batch_size);
        let comp = competence(t, &self.curriculum);
        let indices = sample_batch(
            ranked,
            t,
            &self.curriculum,
            batch_size,
            stream_seed(master, t, dir, 0, StreamKind::BatchDraw),
        )?;

        // Rollout and reward every batch element against its greedy baseline.
        // The acting model and the dual (reconstruction) model are only read
        // here; all parameter updates happen below.
        let (model, dual) = match dir {
            Direction::Forward => (&self.forward, &self.backward),
            Direction::Backward => (&self.backward, &self.forward),
        };
        let ctx = RewardContext {
            config: self.reward_config,
            cls: &self.classifier,
            dual,
            lex: &self.lex,
        };
        let mut rollouts: Vec<(Vec<usize>, f64)> = Vec::with_capacity(indices.len());
        let mut traces = Vec::with_capacity(indices.len());
        let (mut reward_sum, mut baseline_sum, mut advantage_sum) = (0.0, 0.0, 0.0);
        for (k, &idx) in indices.iter().enumerate() {
            let pair = &self.train.pairs[idx];
            let (input, target_emotion, original_emotion) = match dir {
                Direction::Forward => (pair.query.ids.as_slice(), pair.e_r, pair.e_q),
                Direction::Backward => (pair.response.ids.as_slice(), pair.e_q, pair.e_r),
            };
            let sampled = model.generate_sample(
                input,
                target_emotion,
                &self.lex,
                temperature,
                stream_seed(master, t, dir, k as u64, StreamKind::Rollout),
            )?;
            let greedy = model.generate_greedy(input, target_emotion, &self.lex)?;
            let parts = ctx.score(&sampled.ids, target_emotion, input, original_emotion)?;
            let baseline = ctx.score(&greedy.ids, target_emotion, input, original_emotion)?;
            let b = RewardBreakdown::with_baseline(parts, baseline.total);
            traces.push(RewardTraceRecord::new(t, dir.label(), &b));
            reward_sum += b.total;
            baseline_sum += b.baseline;
            advantage_sum += b.advantage;
            rollouts.push((sampled.ids, b.advantage));
        }

        let items: Vec<PolicyItem<'_>> = indices
            .iter()
            .zip(&rollouts)
            .map(|(&idx, (sampled, advantage))| {
                let pair = &self.train.pairs[idx];
                let (input, emotion) = match dir {
                    Direction::Forward => (pair.query.ids.as_slice(), pair.e_r),
                    Direction::Backward => (pair.response.ids.as_slice(), pair.e_q),
                };
                PolicyItem {
                    input,
                    emotion,
                    sampled,
                    advantage: *advantage,
                }
            })
            .collect();

        let (model, opt) = match dir {
            Direction::Forward => (&mut self.forward, &mut self.opt_forward),
            Direction::Backward => (&mut self.backward, &mut self.opt_backward),
        };
        let stats = model.policy_gradient_batch(&items, &self.lex, opt, clip)?;
        drop(items);

        // Teacher forcing on the same gold tuples keeps the policy anchored.
        let batch_refs: Vec<&DialoguePair> =
            indices.iter().map(|&i| &self.train.pairs[i]).collect();
        let tf = model.mle_update(&batch_refs, &self.lex, opt, clip)?;

        if let Some(reference) = floor {
            if tf.nll > COLLAPSE_FACTOR * reference {
                return Err(TrainerError::Collapse {
                    direction: dir.label(),
                    step: t,
                    nll: tf.nll,
                    reference,
                    factor: COLLAPSE_FACTOR,
                });
            }
        }

        let n = indices.len() as f64;
        Ok(StepOutcome {
            record: StepRecord {
                step: t,
                direction: dir.label().to_string(),
                competence: comp,
                frontier,
                batch: indices.len(),
                rl_scored: stats.scored,
                rl_skipped: stats.skipped,
                mean_reward: reward_sum / n,
                mean_baseline: baseline_sum / n,
                mean_advantage: advantage_sum / n,
                mean_logprob: stats.mean_logprob,
                grad_norm: stats.grad_norm,
                tf_nll: tf.nll,
                tf_type_loss: tf.type_loss,
                tf_memory_reg: tf.memory_reg,
                tf_total: tf.total,
            },
            traces,
        })
    }

    /// Emotion accuracy of greedy forward generations on the validation set.
    pub fn validate(&self) -> Result<f64, TrainerError> {
        let mut generations = Vec::with_capacity(self.validation.len());
        for pair in self.validation.iter() {
            let g = self
                .forward
                .generate_greedy(&pair.query.ids, pair.e_r, &self.lex)?;
            generations.push((g.ids, pair.e_r));
        }
        Ok(emotion_accuracy(&self.classifier, &generations)?)
    }

    /// Train until `max_steps`, early stop, or collapse. With an output
    /// directory this appends JSONL step / validation / reward-trace logs and
    /// keeps a checkpoint of the best-validation state (or, if validation
    /// never ran, of the final state).
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<RunOutcome, TrainerError> {
        let mut logs = match out_dir {
            Some(dir) => Some(RunLogs::open(dir)?),
            None => None,
        };
        let start = self.t;
        let mut validations = Vec::new();
        let mut stopped_early = false;
        while self.t < self.config.max_steps {
            let (f, b) = self.step()?;
            if let Some(l) = logs.as_mut() {
                l.write_step(&f.record)?;
                l.write_step(&b.record)?;
                for trace in f.traces.iter().chain(b.traces.iter()) {
                    l.write_trace(trace)?;
                }
            }
            if self.t % self.config.validation_interval == 0 {
                let accuracy = self.validate()?;
                let improved = accuracy > self.best_accuracy.unwrap_or(f64::NEG_INFINITY);
                if improved {
                    self.best_accuracy = Some(accuracy);
                    self.best_step = Some(self.t);
                    self.stale_checks = 0;
                    if let Some(dir) = out_dir {
                        self.save_checkpoint(&dir.join(CHECKPOINT_DIR))?;
                    }
                } else {
                    self.stale_checks += 1;
                }
                let record = ValidationRecord {
                    step: self.t,
                    emotion_accuracy: accuracy,
                    best_so_far: self.best_accuracy.unwrap_or(f64::NEG_INFINITY),
                    improved,
                };
                if let Some(l) = logs.as_mut() {
                    l.write_validation(&record)?;
                }
                validations.push(record);
                if self.stale_checks > self.config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        if let Some(dir) = out_dir {
            // A run that never validated still leaves a usable checkpoint;
            // never overwrite a best-validation checkpoint with a worse end
            // state.
            if self.best_step.is_none() {
                self.save_checkpoint(&dir.join(CHECKPOINT_DIR))?;
            }
        }
        if let Some(l) = logs.as_mut() {
            l.flush()?;
        }
        Ok(RunOutcome {
            steps_run: self.t - start,
            final_step: self.t,
            validations,
            best_accuracy: self.best_accuracy,
            best_step: self.best_step,
            stopped_early,
        })
    }

    /// Write models, classifier, optimizer moments, and the manifest under
    /// `dir` (`forward/`, `backward/`, `classifier/`, `meta.json`).
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainerError> {
        let forward_dir = dir.join(FORWARD_DIR);
        let backward_dir = dir.join(BACKWARD_DIR);
        let classifier_dir = dir.join(CLASSIFIER_DIR);
        for sub in [&forward_dir, &backward_dir, &classifier_dir] {
            fs::create_dir_all(sub).map_err(io_err(sub))?;
        }
        self.forward.save(&forward_dir, &self.vocab_hash, self.t)?;
        self.backward.save(&backward_dir, &self.vocab_hash, self.t)?;
        self.classifier.save(&classifier_dir, &self.vocab_hash)?;
        write_json(&forward_dir.join(OPTIMIZER_FILE), &self.opt_forward.to_state())?;
        write_json(&backward_dir.join(OPTIMIZER_FILE), &self.opt_backward.to_state())?;
        let meta = TrainerCheckpointMeta {
            kind: TRAINER_META_KIND.to_string(),
            step: self.t,
            seeds: self.seeds,
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            classifier_hash: self.classifier.content_hash(),
            forward_nll_floor: self.forward_nll_floor,
            backward_nll_floor: self.backward_nll_floor,
            best_accuracy: self.best_accuracy,
            best_step: self.best_step,
            stale_checks: self.stale_checks,
        };
        write_json(&dir.join(META_FILE), &meta)
    }

    /// Rebuild a trainer from [`DualTrainer::save_checkpoint`] output.
    /// Stepping the result continues the original run exactly: parameters,
    /// optimizer moments, the curriculum clock, and early-stopping state all
    /// come from the checkpoint, and the random streams are derived from
    /// `(seed, step)` rather than from in-memory generator state.
    pub fn load_checkpoint(
        dir: &Path,
        train: Corpus,
        validation: Corpus,
        lex: IndexedLexicon,
    ) -> Result<Self, TrainerError> {
        let meta: TrainerCheckpointMeta = read_json(&dir.join(META_FILE))?;
        if meta.kind != TRAINER_META_KIND {
            return Err(TrainerError::Checkpoint(format!(
                "{} holds a {:?} checkpoint, expected {TRAINER_META_KIND:?}",
                dir.display(),
                meta.kind
            )));
        }
        meta.config.validate()?;
        let forward_dir = dir.join(FORWARD_DIR);
        let backward_dir = dir.join(BACKWARD_DIR);
        let classifier_dir = dir.join(CLASSIFIER_DIR);
        let (forward, _) = SeqModel::load(&forward_dir, Some(&meta.vocab_hash))?;
        let (backward, _) = SeqModel::load(&backward_dir, Some(&meta.vocab_hash))?;
        let (classifier, _) = EmotionClassifier::load(&classifier_dir, Some(&meta.vocab_hash))?;
        if classifier.content_hash() != meta.classifier_hash {
            return Err(TrainerError::Checkpoint(format!(
                "classifier parameters do not match the manifest hash {}",
                meta.classifier_hash
            )));
        }
        let forward_state: AdamState = read_json(&forward_dir.join(OPTIMIZER_FILE))?;
        let backward_state: AdamState = read_json(&backward_dir.join(OPTIMIZER_FILE))?;
        let opt_forward =
            Adam::from_state(forward.params(), &forward_state).map_err(TrainerError::Checkpoint)?;
        let opt_backward = Adam::from_state(backward.params(), &backward_state)
            .map_err(TrainerError::Checkpoint)?;
        Self::assemble(
            meta.config,
            forward,
            backward,
            classifier,
            opt_forward,
            opt_backward,
            train,
            validation,
            lex,
            meta.vocab_hash,
            meta.seeds,
            meta.step,
            meta.forward_nll_floor,
            meta.backward_nll_floor,
            meta.best_accuracy,
            meta.best_step,
            meta.stale_checks,
        )
    }
}

// ---------------------------------------------------------------------------
// Log and JSON helpers
// ---------------------------------------------------------------------------

struct RunLogs {
    steps: BufWriter<File>,
    validations: BufWriter<File>,
    traces: BufWriter<File>,
}

impl RunLogs {
    /// Opens the three JSONL logs in append mode so a resumed run extends
    /// them instead of truncating history.
    fn open(dir: &Path) -> Result<Self, TrainerError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let open = |name: &str| -> Result<BufWriter<File>, TrainerError> {
            let path = dir.join(name);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            Ok(BufWriter::new(file))
        };
        Ok(Self {
            steps: open(STEP_LOG_FILE)?,
            validations: open(VALIDATION_LOG_FILE)?,
            traces: open(REWARD_TRACE_FILE)?,
        })
    }

    fn write_step(&mut self, record: &StepRecord) -> Result<(), TrainerError> {
        write_jsonl(&mut self.steps, record)
    }

    fn write_validation(&mut self, record: &ValidationRecord) -> Result<(), TrainerError> {
        write_jsonl(&mut self.validations, record)
    }

    fn write_trace(&mut self, record: &RewardTraceRecord) -> Result<(), TrainerError> {
        write_jsonl(&mut self.traces, record)
    }

    fn flush(&mut self) -> Result<(), TrainerError> {
        for w in [&mut self.steps, &mut self.validations, &mut self.traces] {
            w.flush().map_err(|source| TrainerError::Io {
                path: "run log".to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

fn write_jsonl<T: Serialize>(w: &mut BufWriter<File>, value: &T) -> Result<(), TrainerError> {
    let line = serde_json::to_string(value)?;
    writeln!(w, "{line}").map_err(|source| TrainerError::Io {
        path: "run log".to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainerError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, TrainerError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, split_corpus, EmotionLexicon, Vocabulary};
    use once_cell::sync::Lazy;

    struct Setup {
        train: Corpus,
        validation: Corpus,
        lexicon: EmotionLexicon,
        vocab: Vocabulary,
        model_config: ModelConfig,
        cls_config: ClassifierConfig,
    }

    impl Setup {
        // The indexed lexicon holds shared masks that are not thread-safe, so
        // the static fixture stores the plain lexicon and every test indexes
        // its own copy.
        fn lex(&self) -> IndexedLexicon {
            IndexedLexicon::new(&self.lexicon, &self.vocab)
        }
    }

    fn desk_model_config(vocab_size: usize) -> ModelConfig {
        let mut c = ModelConfig::with_vocab(vocab_size);
        c.hidden_size = 16;
        c.word_embed_dim = 10;
        c.emotion_embed_dim = 8;
        c.max_decode_len = 12;
        c
    }

    fn desk_cls_config(vocab_size: usize) -> ClassifierConfig {
        let mut c = ClassifierConfig::with_vocab(vocab_size);
        c.embed_dim = 10;
        c.filters_per_width = 6;
        c.epochs = 3;
        c.lr = 1e-2;
        c.batch_size = 16;
        c.dropout = 0.2;
        c
    }

    fn desk_trainer_config() -> TrainerConfig {
        let mut c = TrainerConfig::default();
        c.pretrain_epochs = 2;
        c.pretrain_lr = 2e-3;
        c.cdl_lr = 1e-3;
        c.batch_size = 4;
        c.max_steps = 4;
        c.validation_interval = 100;
        c.patience = 3;
        c.curriculum.total_steps = 100;
        c.seed = 11;
        c
    }

    static SETUP: Lazy<Setup> = Lazy::new(|| {
        let (corpus, lexicon, vocab) = generate_synthetic_corpus(60, 60, 5).unwrap();
        let (train, validation, _test) = split_corpus(&corpus, (0.7, 0.15, 0.15), 5).unwrap();
        let model_config = desk_model_config(vocab.len());
        let cls_config = desk_cls_config(vocab.len());
        Setup {
            train,
            validation,
            lexicon,
            vocab,
            model_config,
            cls_config,
        }
    });

    // Pretraining once and reloading per test keeps the suite fast; the
    // models themselves are not thread-safe, so the shared state is the
    // on-disk checkpoint plus plain scalars.
    struct PretrainFixture {
        dir: tempfile::TempDir,
        classifier_summary: TrainSummary,
        epochs: Vec<PretrainEpoch>,
        forward_nll_floor: Option<f64>,
        backward_nll_floor: Option<f64>,
        seeds: SeedPlan,
    }

    static PRETRAIN_FIXTURE: Lazy<PretrainFixture> = Lazy::new(|| {
        let s = &*SETUP;
        let p = pretrain(
            &s.train,
            &s.model_config,
            &s.cls_config,
            &desk_trainer_config(),
            &s.lex(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hash = s.vocab.content_hash();
        p.forward.save(&dir.path().join(FORWARD_DIR), &hash, 0).unwrap();
        p.backward.save(&dir.path().join(BACKWARD_DIR), &hash, 0).unwrap();
        p.classifier.save(&dir.path().join(CLASSIFIER_DIR), &hash).unwrap();
        PretrainFixture {
            dir,
            classifier_summary: p.classifier_summary,
            epochs: p.epochs,
            forward_nll_floor: p.forward_nll_floor,
            backward_nll_floor: p.backward_nll_floor,
            seeds: p.seeds,
        }
    });

    fn pretrained() -> Pretrained {
        let fx = &*PRETRAIN_FIXTURE;
        let base = fx.dir.path();
        let (forward, _) = SeqModel::load(&base.join(FORWARD_DIR), None).unwrap();
        let (backward, _) = SeqModel::load(&base.join(BACKWARD_DIR), None).unwrap();
        let (classifier, _) = EmotionClassifier::load(&base.join(CLASSIFIER_DIR), None).unwrap();
        Pretrained {
            forward,
            backward,
            classifier,
            classifier_summary: fx.classifier_summary.clone(),
            epochs: fx.epochs.clone(),
            forward_nll_floor: fx.forward_nll_floor,
            backward_nll_floor: fx.backward_nll_floor,
            seeds: fx.seeds,
        }
    }

    fn desk_trainer(config: TrainerConfig) -> DualTrainer {
        let s = &*SETUP;
        DualTrainer::new(
            pretrained(),
            s.train.clone(),
            s.validation.clone(),
            s.lex(),
            s.vocab.content_hash(),
            config,
        )
        .unwrap()
    }

    #[test]
    fn seed_plan_is_deterministic_and_streams_are_distinct() {
        assert_eq!(SeedPlan::derive(7), SeedPlan::derive(7));
        assert_ne!(SeedPlan::derive(7), SeedPlan::derive(8));
        let plan = SeedPlan::derive(7);
        let all = [
            plan.forward_init,
            plan.backward_init,
            plan.classifier,
            plan.pretrain_forward,
            plan.pretrain_backward,
        ];
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }

        let base = stream_seed(7, 3, Direction::Forward, 2, StreamKind::Rollout);
        assert_eq!(base, stream_seed(7, 3, Direction::Forward, 2, StreamKind::Rollout));
        assert_ne!(base, stream_seed(7, 4, Direction::Forward, 2, StreamKind::Rollout));
        assert_ne!(base, stream_seed(7, 3, Direction::Backward, 2, StreamKind::Rollout));
        assert_ne!(base, stream_seed(7, 3, Direction::Forward, 3, StreamKind::Rollout));
        assert_ne!(base, stream_seed(7, 3, Direction::Forward, 2, StreamKind::BatchDraw));
    }

    #[test]
    fn ablation_modes_select_reward_terms_and_curriculum() {
        let mut config = TrainerConfig::default();
        let cases = [
            (AblationMode::Full, true, true, true),
            (AblationMode::EmotionOnly, true, false, true),
            (AblationMode::ContentOnly, false, true, true),
            (AblationMode::NoCurriculum, true, true, false),
        ];
        for (mode, emotion, content, curriculum) in cases {
            config.ablation = mode;
            let r = config.effective_reward_config();
            assert_eq!(r.emotion_enabled, emotion, "{}", mode.label());
            assert_eq!(r.content_enabled, content, "{}", mode.label());
            assert_eq!(config.effective_curriculum().enabled, curriculum, "{}", mode.label());
            assert_eq!(AblationMode::from_label(mode.label()).unwrap(), mode);
        }
        assert!(AblationMode::from_label("bogus").is_err());

        let mut bad = TrainerConfig::default();
        bad.batch_size = 0;
        assert!(bad.validate().is_err());
        bad = TrainerConfig::default();
        bad.cdl_lr = 0.0;
        assert!(bad.validate().is_err());
        bad = TrainerConfig::default();
        bad.validation_interval = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pretrain_with_zero_epochs_keeps_initialization() {
        let s = &*SETUP;
        let mut config = desk_trainer_config();
        config.pretrain_epochs = 0;
        let out = pretrain(&s.train, &s.model_config, &s.cls_config, &config, &s.lex()).unwrap();
        let seeds = SeedPlan::derive(config.seed);
        let fresh_f =
            SeqModel::new(s.model_config.clone(), Direction::Forward, seeds.forward_init).unwrap();
        let fresh_b =
            SeqModel::new(s.model_config.clone(), Direction::Backward, seeds.backward_init)
                .unwrap();
        assert_eq!(out.forward.content_hash(), fresh_f.content_hash());
        assert_eq!(out.backward.content_hash(), fresh_b.content_hash());
        assert!(out.forward_nll_floor.is_none());
        assert!(out.backward_nll_floor.is_none());
        assert!(out.epochs.is_empty());
    }

    #[test]
    fn pretraining_lowers_teacher_forcing_loss_in_both_directions() {
        let p = &*PRETRAIN_FIXTURE;
        for dir in ["forward", "backward"] {
            let epochs: Vec<&PretrainEpoch> =
                p.epochs.iter().filter(|e| e.direction == dir).collect();
            assert_eq!(epochs.len(), 2, "{dir}");
            assert!(
                epochs.last().unwrap().mean_nll < epochs[0].mean_nll,
                "{dir}: {} -> {}",
                epochs[0].mean_nll,
                epochs.last().unwrap().mean_nll
            );
        }
        assert_eq!(p.forward_nll_floor.unwrap(), p.epochs[1].mean_nll);
        assert!(p.classifier_summary.best_holdout_accuracy > 0.0);
    }

    #[test]
    fn alternation_touches_only_the_active_model() {
        let mut trainer = desk_trainer(desk_trainer_config());
        let f0 = trainer.forward().content_hash();
        let b0 = trainer.backward().content_hash();
        let c0 = trainer.classifier().content_hash();

        let out_f = trainer.rl_step_forward().unwrap();
        assert_ne!(trainer.forward().content_hash(), f0);
        assert_eq!(trainer.backward().content_hash(), b0);
        assert_eq!(trainer.classifier().content_hash(), c0);
        assert_eq!(out_f.record.direction, "forward");
        assert_eq!(out_f.traces.len(), out_f.record.batch);

        let f1 = trainer.forward().content_hash();
        let out_b = trainer.rl_step_backward().unwrap();
        assert_eq!(trainer.forward().content_hash(), f1);
        assert_ne!(trainer.backward().content_hash(), b0);
        assert_eq!(trainer.classifier().content_hash(), c0);
        assert_eq!(out_b.record.direction, "backward");
    }

    #[test]
    fn stepping_is_deterministic_and_checkpoint_resume_matches() {
        let dir = tempfile::tempdir().unwrap();
        let s = &*SETUP;

        let mut straight = desk_trainer(desk_trainer_config());
        let mut records = Vec::new();
        for _ in 0..4 {
            records.push(straight.step().unwrap());
        }

        let mut resumed = desk_trainer(desk_trainer_config());
        assert_eq!(resumed.step().unwrap().0.record, records[0].0.record);
        resumed.step().unwrap();
        resumed.save_checkpoint(dir.path()).unwrap();
        let mut resumed = DualTrainer::load_checkpoint(
            dir.path(),
            s.train.clone(),
            s.validation.clone(),
            s.lex(),
        )
        .unwrap();
        assert_eq!(resumed.current_step(), 2);
        let (f2, b2) = resumed.step().unwrap();
        assert_eq!(f2.record, records[2].0.record);
        assert_eq!(b2.record, records[2].1.record);
        resumed.step().unwrap();

        assert_eq!(resumed.forward().content_hash(), straight.forward().content_hash());
        assert_eq!(resumed.backward().content_hash(), straight.backward().content_hash());
        assert_eq!(resumed.current_step(), straight.current_step());
    }

    #[test]
    fn collapse_guard_halts_when_loss_exceeds_floor() {
        let mut pretrained = pretrained();
        pretrained.forward_nll_floor = Some(1e-9);
        let s = &*SETUP;
        let mut trainer = DualTrainer::new(
            pretrained,
            s.train.clone(),
            s.validation.clone(),
            s.lex(),
            s.vocab.content_hash(),
            desk_trainer_config(),
        )
        .unwrap();
        match trainer.step() {
            Err(TrainerError::Collapse { direction, step, .. }) => {
                assert_eq!(direction, "forward");
                assert_eq!(step, 0);
            }
            other => panic!("expected collapse, got {other:?}"),
        }
    }

    #[test]
    fn run_writes_logs_and_checkpoint_and_stops_on_patience() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = desk_trainer_config();
        // Tiny learning rate keeps validation accuracy flat, so the second
        // check fails to improve and zero patience stops the run.
        config.cdl_lr = 1e-9;
        config.max_steps = 6;
        config.validation_interval = 1;
        config.patience = 0;
        let batch = config.batch_size;
        let mut trainer = desk_trainer(config);

        let outcome = trainer.run(Some(dir.path())).unwrap();
        assert!(outcome.stopped_early);
        assert_eq!(outcome.steps_run, 2);
        assert_eq!(outcome.validations.len(), 2);
        assert!(outcome.validations[0].improved);
        assert!(!outcome.validations[1].improved);
        assert_eq!(outcome.best_step, Some(1));
        let best = outcome.best_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&best));

        let read_lines = |name: &str| -> Vec<String> {
            std::fs::read_to_string(dir.path().join(name))
                .unwrap()
                .lines()
                .map(str::to_string)
                .collect()
        };
        let steps = read_lines(STEP_LOG_FILE);
        assert_eq!(steps.len(), 4);
        let first: StepRecord = serde_json::from_str(&steps[0]).unwrap();
        assert_eq!((first.step, first.direction.as_str()), (0, "forward"));
        assert_eq!(first.batch, batch);
        let validations = read_lines(VALIDATION_LOG_FILE);
        assert_eq!(validations.len(), 2);
        let v: ValidationRecord = serde_json::from_str(&validations[0]).unwrap();
        assert_eq!(v.emotion_accuracy, best);
        assert_eq!(read_lines(REWARD_TRACE_FILE).len(), 4 * batch);

        let ckpt = dir.path().join(CHECKPOINT_DIR);
        for sub in [FORWARD_DIR, BACKWARD_DIR, CLASSIFIER_DIR] {
            assert!(ckpt.join(sub).is_dir(), "{sub} missing");
        }
        assert!(ckpt.join(FORWARD_DIR).join(OPTIMIZER_FILE).is_file());
        let meta: TrainerCheckpointMeta = read_json(&ckpt.join(META_FILE)).unwrap();
        assert_eq!(meta.kind, TRAINER_META_KIND);
        assert_eq!(meta.step, 1);
        assert_eq!(meta.best_accuracy, Some(best));

        let s = &*SETUP;
        let restored = DualTrainer::load_checkpoint(
            &ckpt,
            s.train.clone(),
            s.validation.clone(),
            s.lex(),
        )
        .unwrap();
        assert_eq!(restored.current_step(), 1);
        assert_eq!(restored.best_accuracy(), Some(best));
    }
}
