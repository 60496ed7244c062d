//! Optimizers, learning-rate schedule, the training loop and resumable
//! training state.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::errorgen::CorruptedSentence;
use crate::evalmetrics::{evaluate_corpus, EvalReport};
use crate::model::checkpoint::save_checkpoint;
use crate::model::layers::Dropout;
use crate::model::{backward, is_matrix_name, CheckpointError, Corrector, ModelConfig, ModelError, ModelParams};
use crate::textdata::{encode, read_corpus, EncodedExample, TextDataError, Vocab, VocabBuilder, VocabLevel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] TextDataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at step {step} (batch {batch_digest})")]
    NonFiniteLoss { step: u64, batch_digest: String },
    #[error("non-finite parameters after step {step} (batch {batch_digest})")]
    NonFiniteParams { step: u64, batch_digest: String },
    #[error("training state: {0}")]
    State(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Lamb,
}

/// Polynomial decay with linear warmup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub power: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
}

/// Learning rate for the update that follows `step` completed updates.
pub fn lr_at(step: u64, base_lr: f64, schedule: &Schedule) -> f64 {
    let warmup = schedule.warmup_steps;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if schedule.total_steps <= warmup {
        return if step < schedule.total_steps.max(1) { base_lr } else { 0.0 };
    }
    let progress = (step - warmup) as f64 / (schedule.total_steps - warmup) as f64;
    let remaining = (1.0 - progress).max(0.0);
    base_lr * remaining.powf(schedule.power)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// 0 disables periodic checkpoints (the final one is always written).
    pub checkpoint_every: u64,
    /// Held-out detector F1 cadence; 0 disables it.
    pub eval_every: u64,
    pub log_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay, applied to weight matrices and embeddings.
    pub weight_decay: f64,
    /// Global gradient norm limit; 0 disables clipping.
    pub clip_norm: f64,
    /// Share of sentences withheld for held-out evaluation.
    pub held_out_fraction: f64,
    pub max_word_vocab: usize,
    pub max_char_vocab: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk(3000)
    }
}

impl TrainConfig {
    /// Adam with 1% warmup and linear decay to zero over `steps`.
    pub fn desk(steps: u64) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            schedule: Schedule {
                power: 1.0,
                total_steps: steps,
                warmup_steps: steps / 100,
            },
            batch_size: 16,
            max_steps: steps,
            seed: 0,
            checkpoint_every: 1000,
            eval_every: 500,
            log_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
            held_out_fraction: 0.05,
            max_word_vocab: 30_000,
            max_char_vocab: 1000,
        }
    }

    pub fn paper() -> TrainConfig {
        let steps = 500_000;
        TrainConfig {
            optimizer: OptimizerKind::Lamb,
            lr: 1.76e-3,
            schedule: Schedule {
                power: 1.0,
                total_steps: steps,
                warmup_steps: steps / 100,
            },
            batch_size: 512,
            max_steps: steps,
            checkpoint_every: 10_000,
            eval_every: 10_000,
            log_every: 100,
            ..TrainConfig::desk(steps)
        }
    }

    pub fn preset(name: &str) -> Option<TrainConfig> {
        match name {
            "desk" => Some(TrainConfig::desk(3000)),
            "paper" => Some(TrainConfig::paper()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr must be positive");
        }
        if self.schedule.power.is_nan() || self.schedule.power <= 0.0 {
            return err("schedule.power must be positive");
        }
        if self.schedule.warmup_steps > self.schedule.total_steps {
            return err("schedule.warmup_steps exceeds schedule.total_steps");
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err("beta1 and beta2 must be in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return err("epsilon must be positive; weight_decay and clip_norm non-negative");
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return err("held_out_fraction must be in [0, 1)");
        }
        if self.max_word_vocab < 3 || self.max_char_vocab < 3 {
            return err("vocabulary limits must leave room for real entries");
        }
        Ok(())
    }
}

/// Exponential moving averages of the loss parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningAverages {
    pub loss: f64,
    pub detect_loss: f64,
    pub correct_loss: f64,
    pub updates: u64,
}

const AVERAGE_DECAY: f64 = 0.98;

impl RunningAverages {
    fn update(&mut self, loss: f64, detect: f64, correct: f64) {
        let d = if self.updates == 0 { 0.0 } else { AVERAGE_DECAY };
        self.loss = d * self.loss + (1.0 - d) * loss;
        self.detect_loss = d * self.detect_loss + (1.0 - d) * detect;
        self.correct_loss = d * self.correct_loss + (1.0 - d) * correct;
        self.updates += 1;
    }
}

/// Everything that determines the rest of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub params: ModelParams<f32>,
    pub first_moment: ModelParams<f32>,
    pub second_moment: ModelParams<f32>,
    pub rng: ChaCha8Rng,
    /// Current epoch's example order and the position within it.
    pub order: Vec<u32>,
    pub cursor: usize,
    pub epoch: u64,
    pub averages: RunningAverages,
}

impl TrainState {
    pub fn new(params: ModelParams<f32>, seed: u64) -> TrainState {
        let zeros = params.zeros_like();
        TrainState {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed)),
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            averages: RunningAverages::default(),
        }
    }

    /// Indices of the next batch, reshuffling at epoch boundaries.
    pub fn next_batch(&mut self, n_examples: usize, batch_size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(batch_size);
        if n_examples == 0 {
            return batch;
        }
        while batch.len() < batch_size.min(n_examples) {
            if self.cursor >= self.order.len() {
                self.order = (0..n_examples as u32).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            batch.push(self.order[self.cursor] as usize);
            self.cursor += 1;
        }
        batch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub detect_loss: f64,
    pub correct_loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    pub detect_loss: f64,
    pub correct_loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub held_out_f1: Option<f64>,
}

fn batch_digest(batch: &[EncodedExample]) -> String {
    let mut h = Sha256::new();
    for ex in batch {
        for id in &ex.word_ids {
            h.update(id.to_le_bytes());
        }
    }
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Applies one optimizer update given gradients (already clipped).
pub fn apply_update(
    state: &mut TrainState,
    grads: &ModelParams<f32>,
    lr: f64,
    config: &TrainConfig,
) {
    let t = (state.step + 1) as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let names: Vec<String> = state.params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<&[f32]> = grads.named_tensors().into_iter().map(|(_, t)| t.data.as_slice()).collect();
    let params = state.params.tensors_mut();
    let ms = state.first_moment.tensors_mut();
    let vs = state.second_moment.tensors_mut();
    let mut update = Vec::new();
    for ((((name, p), m), v), g) in names.iter().zip(params).zip(ms).zip(vs).zip(grads) {
        let decay = if is_matrix_name(name) { config.weight_decay } else { 0.0 };
        update.clear();
        for (i, &gi) in g.iter().enumerate() {
            let gi = gi as f64;
            let mi = b1 * m.data[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v.data[i] as f64 + (1.0 - b2) * gi * gi;
            m.data[i] = mi as f32;
            v.data[i] = vi as f32;
            let mhat = mi / correction1;
            let vhat = vi / correction2;
            update.push(mhat / (vhat.sqrt() + config.epsilon) + decay * p.data[i] as f64);
        }
        let scale = match config.optimizer {
            OptimizerKind::Adam => lr,
            OptimizerKind::Lamb => {
                let weight_norm = p.sum_squares().sqrt();
                let update_norm = update.iter().map(|u| u * u).sum::<f64>().sqrt();
                if weight_norm > 0.0 && update_norm > 0.0 {
                    lr * weight_norm / update_norm
                } else {
                    lr
                }
            }
        };
        for (x, u) in p.data.iter_mut().zip(&update) {
            *x = (*x as f64 - scale * u) as f32;
        }
    }
}

/// Scales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut ModelParams<f32>, max_norm: f64) -> f64 {
    let norm = grads.named_tensors().iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        for t in grads.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Forward, loss, backward and one optimizer update.
pub fn train_step(
    state: &mut TrainState,
    batch: &[EncodedExample],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<StepMetrics, TrainError> {
    let lr = lr_at(state.step, config.lr, &config.schedule);
    let (parts, mut grads) = {
        let mut dropout = Dropout::new(model_config.dropout_rate, &mut state.rng);
        backward(&state.params, model_config, batch, &mut dropout)?
    };
    if !parts.total.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            step: state.step,
            batch_digest: batch_digest(batch),
        });
    }
    let grad_norm = clip_gradients(&mut grads, config.clip_norm);
    apply_update(state, &grads, lr, config);
    if !state.params.is_finite() {
        return Err(TrainError::NonFiniteParams {
            step: state.step,
            batch_digest: batch_digest(batch),
        });
    }
    state.step += 1;
    state.averages.update(parts.total, parts.detect_part, parts.correct_part);
    Ok(StepMetrics {
        step: state.step,
        loss: parts.total,
        detect_loss: parts.detect_part,
        correct_loss: parts.correct_part,
        lr,
        grad_norm,
    })
}

/// Word vocabulary from clean tokens; character vocabulary from both sides,
/// since corrupted text contains characters clean text lacks.
pub fn build_vocabs(sentences: &[CorruptedSentence], config: &TrainConfig) -> Result<(Vocab, Vocab), TrainError> {
    let mut words = VocabBuilder::new(VocabLevel::Word);
    let mut chars = VocabBuilder::new(VocabLevel::Char);
    for s in sentences {
        for t in &s.clean {
            words.add_token(t);
            chars.add_token(t);
        }
        for t in &s.noisy {
            chars.add_token(t);
        }
    }
    Ok((words.build(config.max_word_vocab)?, chars.build(config.max_char_vocab)?))
}

/// Deterministic split: every `1 / fraction`-th sentence is held out.
pub fn split_held_out(
    sentences: Vec<CorruptedSentence>,
    fraction: f64,
) -> (Vec<CorruptedSentence>, Vec<CorruptedSentence>) {
    if fraction <= 0.0 || sentences.len() < 2 {
        return (sentences, Vec::new());
    }
    let stride = ((1.0 / fraction).round() as usize).max(2);
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (i, s) in sentences.into_iter().enumerate() {
        if (i + 1) % stride == 0 {
            held.push(s);
        } else {
            train.push(s);
        }
    }
    (train, held)
}

/// A training run over an in-memory corpus.
pub struct Trainer {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub word_vocab: Vocab,
    pub char_vocab: Vocab,
    pub state: TrainState,
    examples: Vec<EncodedExample>,
    held_out: Vec<CorruptedSentence>,
}

impl Trainer {
    /// Builds vocabularies, sizes the model to them and initializes
    /// parameters from `train_config.seed`.
    pub fn new(
        sentences: Vec<CorruptedSentence>,
        mut model_config: ModelConfig,
        train_config: TrainConfig,
    ) -> Result<Trainer, TrainError> {
        train_config.validate()?;
        let (train, held_out) = split_held_out(sentences, train_config.held_out_fraction);
        let (word_vocab, char_vocab) = build_vocabs(&train, &train_config)?;
        model_config.v_word = word_vocab.len();
        model_config.v_char = char_vocab.len();
        model_config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
        let params = ModelParams::init(&model_config, &mut init_rng);
        let state = TrainState::new(params, train_config.seed);
        Ok(Trainer::assemble(model_config, train_config, word_vocab, char_vocab, state, train, held_out))
    }

    fn assemble(
        model_config: ModelConfig,
        train_config: TrainConfig,
        word_vocab: Vocab,
        char_vocab: Vocab,
        state: TrainState,
        train: Vec<CorruptedSentence>,
        held_out: Vec<CorruptedSentence>,
    ) -> Trainer {
        let examples = train
            .iter()
            .map(|s| encode(s, &word_vocab, &char_vocab, model_config.n_max, model_config.l_max))
            .collect();
        Trainer {
            model_config,
            train_config,
            word_vocab,
            char_vocab,
            state,
            examples,
            held_out,
        }
    }

    /// Continues from a saved state over the same corpus.
    pub fn resume(sentences: Vec<CorruptedSentence>, state_path: &Path) -> Result<Trainer, TrainError> {
        let saved = read_state(state_path)?;
        let (train, held_out) = split_held_out(sentences, saved.train_config.held_out_fraction);
        let trainer = Trainer::assemble(
            saved.model_config,
            saved.train_config,
            saved.word_vocab,
            saved.char_vocab,
            saved.state,
            train,
            held_out,
        );
        if trainer.state.order.len() > trainer.examples.len() {
            return Err(TrainError::State("saved example order does not fit this corpus".into()));
        }
        Ok(trainer)
    }

    pub fn examples(&self) -> &[EncodedExample] {
        &self.examples
    }

    pub fn held_out(&self) -> &[CorruptedSentence] {
        &self.held_out
    }

    pub fn step(&mut self) -> Result<StepMetrics, TrainError> {
        let idx = self.state.next_batch(self.examples.len(), self.train_config.batch_size);
        let batch: Vec<EncodedExample> = idx.iter().map(|i| self.examples[*i].clone()).collect();
        train_step(&mut self.state, &batch, &self.model_config, &self.train_config)
    }

    pub fn corrector(&self) -> Corrector {
        Corrector::new(
            self.model_config.clone(),
            self.state.params.clone(),
            self.word_vocab.clone(),
            self.char_vocab.clone(),
            self.state.step,
        )
        .expect("trainer keeps config, params and vocabularies consistent")
    }

    /// Detector and corrector scores on the held-out shard.
    pub fn evaluate_held_out(&self) -> Option<EvalReport> {
        if self.held_out.is_empty() {
            return None;
        }
        evaluate_corpus(&self.held_out, &self.corrector()).ok()
    }

    /// Runs until `max_steps`, writing checkpoints, resumable state and
    /// `metrics.jsonl` to `out_dir` when given.
    pub fn run(&mut self, out_dir: Option<&Path>, mut on_log: impl FnMut(&LogRecord)) -> Result<Corrector, TrainError> {
        let mut metrics = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                let path = dir.join("metrics.jsonl");
                let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
                Some((path, BufWriter::new(file)))
            }
            None => None,
        };
        let cfg = self.train_config.clone();
        while self.state.step < cfg.max_steps {
            let m = self.step()?;
            let eval_now = cfg.eval_every > 0 && m.step % cfg.eval_every == 0;
            let log_now = cfg.log_every > 0 && m.step % cfg.log_every == 0;
            if log_now || eval_now || m.step == cfg.max_steps {
                let held_out_f1 = if eval_now { self.evaluate_held_out().map(|r| r.f1) } else { None };
                let record = LogRecord {
                    step: m.step,
                    loss: m.loss,
                    detect_loss: m.detect_loss,
                    correct_loss: m.correct_loss,
                    lr: m.lr,
                    held_out_f1,
                };
                if let Some((path, w)) = metrics.as_mut() {
                    let line = serde_json::to_string(&record).expect("record serializes");
                    writeln!(w, "{line}").map_err(io_err(path))?;
                }
                info!(
                    "step {} loss {:.4} (detect {:.4}, correct {:.4}) lr {:.2e}",
                    m.step, m.loss, m.detect_loss, m.correct_loss, m.lr
                );
                on_log(&record);
            }
            if let Some(dir) = out_dir {
                if cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0 && m.step < cfg.max_steps {
                    save_checkpoint(dir.join(format!("checkpoint-{}.ckpt", m.step)), &self.corrector())?;
                    self.save_state(&dir.join("state.bin"))?;
                }
            }
        }
        if let Some((path, w)) = metrics.as_mut() {
            w.flush().map_err(io_err(path))?;
        }
        let model = self.corrector();
        if let Some(dir) = out_dir {
            save_checkpoint(dir.join("model.ckpt"), &model)?;
            self.save_state(&dir.join("state.bin"))?;
        }
        Ok(model)
    }

    pub fn save_state(&self, path: &Path) -> Result<(), TrainError> {
        write_state(
            path,
            &SavedState {
                model_config: self.model_config.clone(),
                train_config: self.train_config.clone(),
                word_vocab: self.word_vocab.clone(),
                char_vocab: self.char_vocab.clone(),
                state: self.state.clone(),
            },
        )
    }
}

/// Reads a corrupted corpus and trains on it. With `resume`, continues from
/// `out_dir/state.bin` if present.
pub fn train(
    corpus_path: &Path,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<Corrector, TrainError> {
    let sentences = read_corpus(corpus_path)?;
    let state_path = out_dir.join("state.bin");
    let mut trainer = if resume && state_path.exists() {
        let mut t = Trainer::resume(sentences, &state_path)?;
        t.train_config.max_steps = train_config.max_steps;
        t
    } else {
        Trainer::new(sentences, model_config, train_config)?
    };
    info!(
        "training on {} sentences, {} parameters, word vocab {}, char vocab {}",
        trainer.examples.len(),
        trainer.state.params.parameter_count(),
        trainer.word_vocab.len(),
        trainer.char_vocab.len()
    );
    trainer.run(Some(out_dir), |_| {})
}

const STATE_MAGIC: &[u8; 8] = b"VSPLSTAT";
const STATE_VERSION: u32 = 1;

/// Resumable training state together with what it was trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedState {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub word_vocab: Vocab,
    pub char_vocab: Vocab,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    model_config: ModelConfig,
    train_config: TrainConfig,
    word_vocab: Vec<String>,
    char_vocab: Vec<String>,
    step: u64,
    rng: ChaCha8Rng,
    order: Vec<u32>,
    cursor: usize,
    epoch: u64,
    averages: RunningAverages,
}

pub fn write_state_to<W: Write>(mut w: W, saved: &SavedState) -> std::io::Result<()> {
    let s = &saved.state;
    let header = StateHeader {
        model_config: saved.model_config.clone(),
        train_config: saved.train_config.clone(),
        word_vocab: saved.word_vocab.tokens().to_vec(),
        char_vocab: saved.char_vocab.tokens().to_vec(),
        step: s.step,
        rng: s.rng.clone(),
        order: s.order.clone(),
        cursor: s.cursor,
        epoch: s.epoch,
        averages: s.averages,
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    w.write_all(STATE_MAGIC)?;
    w.write_all(&STATE_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in [&s.params, &s.first_moment, &s.second_moment] {
        for (_, t) in p.named_tensors() {
            let bytes: Vec<u8> = t.data.iter().flat_map(|x| x.to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
    }
    w.flush()
}

pub fn read_state_from<R: Read>(mut r: R) -> Result<SavedState, TrainError> {
    let bad = |m: &str| TrainError::State(m.to_string());
    let mut pre = [0u8; 20];
    r.read_exact(&mut pre).map_err(|_| bad("file too short"))?;
    if &pre[..8] != STATE_MAGIC {
        return Err(bad("not a training state file"));
    }
    if u32::from_le_bytes(pre[8..12].try_into().expect("4 bytes")) != STATE_VERSION {
        return Err(bad("unsupported state version"));
    }
    let len = u64::from_le_bytes(pre[12..20].try_into().expect("8 bytes"));
    if len > 1 << 32 {
        return Err(bad("implausible header length"));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let h: StateHeader = serde_json::from_slice(&json).map_err(|e| TrainError::State(e.to_string()))?;
    h.model_config.validate()?;
    let word_vocab = Vocab::from_tokens(VocabLevel::Word, h.word_vocab)?;
    let char_vocab = Vocab::from_tokens(VocabLevel::Char, h.char_vocab)?;
    let mut tensors = [
        ModelParams::<f32>::zeros(&h.model_config),
        ModelParams::<f32>::zeros(&h.model_config),
        ModelParams::<f32>::zeros(&h.model_config),
    ];
    let mut bytes = Vec::new();
    for p in tensors.iter_mut() {
        for t in p.tensors_mut() {
            bytes.resize(t.len() * 4, 0);
            r.read_exact(&mut bytes).map_err(|_| bad("truncated tensor data"))?;
            for (x, c) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            }
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| TrainError::State(e.to_string()))? != 0 {
        return Err(bad("trailing bytes"));
    }
    if h.cursor > h.order.len() {
        return Err(bad("cursor beyond example order"));
    }
    let [params, first_moment, second_moment] = tensors;
    Ok(SavedState {
        model_config: h.model_config,
        train_config: h.train_config,
        word_vocab,
        char_vocab,
        state: TrainState {
            step: h.step,
            params,
            first_moment,
            second_moment,
            rng: h.rng,
            order: h.order,
            cursor: h.cursor,
            epoch: h.epoch,
            averages: h.averages,
        },
    })
}

pub fn write_state(path: &Path, saved: &SavedState) -> Result<(), TrainError> {
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(io_err(&tmp))?;
    write_state_to(BufWriter::new(file), saved).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_state(path: &Path) -> Result<SavedState, TrainError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_state_from(BufReader::new(file))
}
