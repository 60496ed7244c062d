//! Hierarchical Transformer corrector.
//!
//! Each word's characters go through a small character encoder and are
//! pooled to one vector, which is concatenated with the word embedding,
//! projected, and fed to the word encoder. Two heads read the word encoder
//! output: a binary error detector and a corrector over the word vocabulary
//! whose output matrix is the word embedding table itself.
//!
//! Batches are processed without padding: only unmasked words and non-`PAD`
//! characters are stacked into the activation matrices.

pub mod checkpoint;
pub mod layers;
pub mod predict;
pub mod tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textdata::{EncodedExample, PAD};
use layers::{Dropout, EncoderCache, EncoderLayer, LayerNorm, LayerNormCache, Linear, Segment};
use tensor::{gelu, gelu_grad, matmul, matmul_nt, matmul_tn, Real, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CheckpointHeader};
pub use predict::{Corrector, Suggestion, TokenPrediction};

/// Smoothing term in the loss denominators.
pub const LOSS_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("example does not match the model config: {0}")]
    Shape(String),
}

/// How a word's character vectors are reduced to one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    First,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub char_layers: usize,
    pub char_hidden: usize,
    pub char_heads: usize,
    pub word_layers: usize,
    pub word_hidden: usize,
    pub word_heads: usize,
    /// Width of the word embedding table (and of the correction head's
    /// hidden layer, since the output weights are that table).
    pub word_embed_dim: usize,
    pub ffn_multiplier: usize,
    pub n_max: usize,
    pub l_max: usize,
    pub v_word: usize,
    pub v_char: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
    /// Reuse one set of layer weights across depth in each encoder.
    pub share_layers: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk(0, 0)
    }
}

impl ModelConfig {
    pub fn desk(v_word: usize, v_char: usize) -> ModelConfig {
        ModelConfig {
            char_layers: 2,
            char_hidden: 64,
            char_heads: 4,
            word_layers: 4,
            word_hidden: 128,
            word_heads: 4,
            word_embed_dim: 128,
            ffn_multiplier: 4,
            n_max: 64,
            l_max: 16,
            v_word,
            v_char,
            dropout_rate: 0.1,
            pooling: Pooling::Mean,
            share_layers: false,
        }
    }

    pub fn paper(v_word: usize, v_char: usize) -> ModelConfig {
        ModelConfig {
            char_layers: 4,
            char_hidden: 256,
            char_heads: 4,
            word_layers: 12,
            word_hidden: 768,
            word_heads: 12,
            word_embed_dim: 768,
            ffn_multiplier: 4,
            n_max: 192,
            l_max: 16,
            v_word,
            v_char,
            dropout_rate: 0.1,
            pooling: Pooling::Mean,
            share_layers: false,
        }
    }

    /// One layer per encoder at toy widths; used for gradient checks.
    pub fn tiny(v_word: usize, v_char: usize) -> ModelConfig {
        ModelConfig {
            char_layers: 1,
            char_hidden: 8,
            char_heads: 2,
            word_layers: 1,
            word_hidden: 8,
            word_heads: 2,
            word_embed_dim: 6,
            ffn_multiplier: 2,
            n_max: 6,
            l_max: 4,
            v_word,
            v_char,
            dropout_rate: 0.0,
            pooling: Pooling::Mean,
            share_layers: false,
        }
    }

    pub fn preset(name: &str, v_word: usize, v_char: usize) -> Option<ModelConfig> {
        match name {
            "desk" => Some(ModelConfig::desk(v_word, v_char)),
            "paper" => Some(ModelConfig::paper(v_word, v_char)),
            "tiny" => Some(ModelConfig::tiny(v_word, v_char)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        let positive = [
            ("char_layers", self.char_layers),
            ("char_hidden", self.char_hidden),
            ("char_heads", self.char_heads),
            ("word_layers", self.word_layers),
            ("word_hidden", self.word_hidden),
            ("word_heads", self.word_heads),
            ("word_embed_dim", self.word_embed_dim),
            ("ffn_multiplier", self.ffn_multiplier),
            ("n_max", self.n_max),
            ("l_max", self.l_max),
        ];
        for (name, v) in positive {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if !self.char_hidden.is_multiple_of(self.char_heads) {
            return err(format!(
                "char_hidden {} is not divisible by char_heads {}",
                self.char_hidden, self.char_heads
            ));
        }
        if !self.word_hidden.is_multiple_of(self.word_heads) {
            return err(format!(
                "word_hidden {} is not divisible by word_heads {}",
                self.word_hidden, self.word_heads
            ));
        }
        if self.v_word < 2 || self.v_char < 2 {
            return err("vocabularies need at least the two special entries".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return err(format!("dropout_rate {} is not in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    fn stored_layers(&self, count: usize) -> usize {
        if self.share_layers {
            1
        } else {
            count
        }
    }

    pub fn check_example(&self, ex: &EncodedExample) -> Result<(), ModelError> {
        let shape = |m: String| Err(ModelError::Shape(m));
        if ex.n_max != self.n_max || ex.l_max != self.l_max {
            return shape(format!(
                "example is {}×{}, config expects {}×{}",
                ex.n_max, ex.l_max, self.n_max, self.l_max
            ));
        }
        let n = self.n_max;
        if ex.word_ids.len() != n
            || ex.detect_labels.len() != n
            || ex.correct_labels.len() != n
            || ex.attn_mask.len() != n
            || ex.char_ids.len() != n * self.l_max
        {
            return shape("buffer lengths disagree with n_max/l_max".into());
        }
        if let Some(id) = ex.word_ids.iter().chain(&ex.correct_labels).find(|i| **i as usize >= self.v_word) {
            return shape(format!("word id {id} ≥ v_word {}", self.v_word));
        }
        if let Some(id) = ex.char_ids.iter().find(|i| **i as usize >= self.v_char) {
            return shape(format!("char id {id} ≥ v_char {}", self.v_char));
        }
        if ex.attn_mask.iter().chain(&ex.detect_labels).any(|m| *m > 1) {
            return shape("attn_mask and detect_labels must be 0/1".into());
        }
        Ok(())
    }
}

/// All trainable tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    /// `[v_word, word_embed_dim]`; also the correction output matrix.
    pub word_embedding: Tensor<T>,
    /// `[n_max, word_embed_dim]`
    pub word_position: Tensor<T>,
    pub word_embed_norm: LayerNorm<T>,
    /// `[v_char, char_hidden]`
    pub char_embedding: Tensor<T>,
    /// `[l_max, char_hidden]`
    pub char_position: Tensor<T>,
    pub char_embed_norm: LayerNorm<T>,
    pub char_layers: Vec<EncoderLayer<T>>,
    pub projection: Linear<T>,
    pub projection_norm: LayerNorm<T>,
    pub word_layers: Vec<EncoderLayer<T>>,
    pub detect_hidden: Linear<T>,
    pub detect_out: Linear<T>,
    pub correct_hidden: Linear<T>,
    /// `[v_word]`
    pub correct_bias: Tensor<T>,
}

fn linear_tensors<'a, T>(prefix: &str, l: &'a Linear<T>, out: &mut Vec<(String, &'a Tensor<T>)>) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}

fn norm_tensors<'a, T>(prefix: &str, l: &'a LayerNorm<T>, out: &mut Vec<(String, &'a Tensor<T>)>) {
    out.push((format!("{prefix}.gamma"), &l.gamma));
    out.push((format!("{prefix}.beta"), &l.beta));
}

fn layer_tensors<'a, T>(prefix: &str, l: &'a EncoderLayer<T>, out: &mut Vec<(String, &'a Tensor<T>)>) {
    linear_tensors(&format!("{prefix}.qkv"), &l.qkv, out);
    linear_tensors(&format!("{prefix}.attn_out"), &l.attn_out, out);
    norm_tensors(&format!("{prefix}.attn_norm"), &l.attn_norm, out);
    linear_tensors(&format!("{prefix}.ffn_in"), &l.ffn_in, out);
    linear_tensors(&format!("{prefix}.ffn_out"), &l.ffn_out, out);
    norm_tensors(&format!("{prefix}.ffn_norm"), &l.ffn_norm, out);
}

fn linear_mut<T>(l: &mut Linear<T>) -> [&mut Tensor<T>; 2] {
    [&mut l.weight, &mut l.bias]
}

fn norm_mut<T>(l: &mut LayerNorm<T>) -> [&mut Tensor<T>; 2] {
    [&mut l.gamma, &mut l.beta]
}

fn layer_mut<T>(l: &mut EncoderLayer<T>) -> Vec<&mut Tensor<T>> {
    let mut v = Vec::with_capacity(12);
    v.extend(linear_mut(&mut l.qkv));
    v.extend(linear_mut(&mut l.attn_out));
    v.extend(norm_mut(&mut l.attn_norm));
    v.extend(linear_mut(&mut l.ffn_in));
    v.extend(linear_mut(&mut l.ffn_out));
    v.extend(norm_mut(&mut l.ffn_norm));
    v
}

impl<T: Real> ModelParams<T> {
    /// All-zero tensors with the shapes `config` requires.
    pub fn zeros(config: &ModelConfig) -> ModelParams<T> {
        let (dw, dc, h) = (config.word_embed_dim, config.char_hidden, config.word_hidden);
        let char_layers = (0..config.stored_layers(config.char_layers))
            .map(|_| EncoderLayer::zeros(dc, dc * config.ffn_multiplier))
            .collect();
        let word_layers = (0..config.stored_layers(config.word_layers))
            .map(|_| EncoderLayer::zeros(h, h * config.ffn_multiplier))
            .collect();
        ModelParams {
            word_embedding: Tensor::zeros(&[config.v_word, dw]),
            word_position: Tensor::zeros(&[config.n_max, dw]),
            word_embed_norm: LayerNorm::zeros(dw),
            char_embedding: Tensor::zeros(&[config.v_char, dc]),
            char_position: Tensor::zeros(&[config.l_max, dc]),
            char_embed_norm: LayerNorm::zeros(dc),
            char_layers,
            projection: Linear::zeros(dw + dc, h),
            projection_norm: LayerNorm::zeros(h),
            word_layers,
            detect_hidden: Linear::zeros(h, h),
            detect_out: Linear::zeros(h, 2),
            correct_hidden: Linear::zeros(h, dw),
            correct_bias: Tensor::zeros(&[config.v_word]),
        }
    }

    /// Truncated-normal (std 0.02) weights, zero biases, identity norms.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> ModelParams<T> {
        let mut p = ModelParams::zeros(config);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(p.tensors_mut()) {
            if name.ends_with(".gamma") {
                t.data.iter_mut().for_each(|x| *x = T::one());
            } else if is_matrix_name(name) {
                for x in t.data.iter_mut() {
                    let v = loop {
                        let s: f64 = normal.sample(rng);
                        if s.abs() <= 0.04 {
                            break s;
                        }
                    };
                    *x = T::from_f64(v);
                }
            }
        }
        p
    }

    /// Every tensor with a stable dotted name. The tied word embedding
    /// appears once.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("word_embedding".to_string(), &self.word_embedding),
            ("word_position".to_string(), &self.word_position),
        ];
        norm_tensors("word_embed_norm", &self.word_embed_norm, &mut out);
        out.push(("char_embedding".into(), &self.char_embedding));
        out.push(("char_position".into(), &self.char_position));
        norm_tensors("char_embed_norm", &self.char_embed_norm, &mut out);
        for (i, l) in self.char_layers.iter().enumerate() {
            layer_tensors(&format!("char_layers.{i}"), l, &mut out);
        }
        linear_tensors("projection", &self.projection, &mut out);
        norm_tensors("projection_norm", &self.projection_norm, &mut out);
        for (i, l) in self.word_layers.iter().enumerate() {
            layer_tensors(&format!("word_layers.{i}"), l, &mut out);
        }
        linear_tensors("detect_hidden", &self.detect_hidden, &mut out);
        linear_tensors("detect_out", &self.detect_out, &mut out);
        linear_tensors("correct_hidden", &self.correct_hidden, &mut out);
        out.push(("correct_bias".into(), &self.correct_bias));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = vec![&mut self.word_embedding, &mut self.word_position];
        out.extend(norm_mut(&mut self.word_embed_norm));
        out.push(&mut self.char_embedding);
        out.push(&mut self.char_position);
        out.extend(norm_mut(&mut self.char_embed_norm));
        for l in &mut self.char_layers {
            out.extend(layer_mut(l));
        }
        out.extend(linear_mut(&mut self.projection));
        out.extend(norm_mut(&mut self.projection_norm));
        for l in &mut self.word_layers {
            out.extend(layer_mut(l));
        }
        out.extend(linear_mut(&mut self.detect_hidden));
        out.extend(linear_mut(&mut self.detect_out));
        out.extend(linear_mut(&mut self.correct_hidden));
        out.push(&mut self.correct_bias);
        out
    }

    pub fn zeros_like(&self) -> ModelParams<T> {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(Tensor::fill_zero);
        z
    }

    /// Number of scalar parameters, counting the tied table once.
    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros_shaped_like(self);
        for ((_, src), dst) in self.named_tensors().into_iter().zip(out.tensors_mut()) {
            *dst = src.cast();
        }
        out
    }

    fn zeros_shaped_like<S: Real>(other: &ModelParams<S>) -> ModelParams<T> {
        let lin = |l: &Linear<S>| Linear::zeros(l.input_dim(), l.output_dim());
        let norm = |l: &LayerNorm<S>| LayerNorm::zeros(l.gamma.len());
        let layer = |l: &EncoderLayer<S>| EncoderLayer::zeros(l.hidden(), l.ffn_in.output_dim());
        ModelParams {
            word_embedding: Tensor::zeros(&other.word_embedding.shape),
            word_position: Tensor::zeros(&other.word_position.shape),
            word_embed_norm: norm(&other.word_embed_norm),
            char_embedding: Tensor::zeros(&other.char_embedding.shape),
            char_position: Tensor::zeros(&other.char_position.shape),
            char_embed_norm: norm(&other.char_embed_norm),
            char_layers: other.char_layers.iter().map(layer).collect(),
            projection: lin(&other.projection),
            projection_norm: norm(&other.projection_norm),
            word_layers: other.word_layers.iter().map(layer).collect(),
            detect_hidden: lin(&other.detect_hidden),
            detect_out: lin(&other.detect_out),
            correct_hidden: lin(&other.correct_hidden),
            correct_bias: Tensor::zeros(&other.correct_bias.shape),
        }
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = ModelParams::<T>::zeros(config);
        let mine = self.named_tensors();
        let theirs = expected.named_tensors();
        if mine.len() != theirs.len() {
            return Err(ModelError::Shape(format!(
                "{} tensors, config implies {}",
                mine.len(),
                theirs.len()
            )));
        }
        for ((name, a), (_, b)) in mine.iter().zip(&theirs) {
            if a.shape != b.shape || a.data.len() != b.data.len() {
                return Err(ModelError::Shape(format!(
                    "{name}: shape {:?}, config implies {:?}",
                    a.shape, b.shape
                )));
            }
        }
        Ok(())
    }
}

/// Whether a tensor name denotes a weight matrix or embedding (as opposed
/// to a bias or normalization parameter).
pub fn is_matrix_name(name: &str) -> bool {
    name.ends_with(".weight") || name.ends_with("_embedding") || name.ends_with("_position")
}

/// Per-example outputs padded to `n_max` rows; masked rows are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    pub n_max: usize,
    pub v_word: usize,
    pub word_hidden: usize,
    /// `[n_max, 2]`; column 1 is the probability of an error.
    pub detect_probs: Vec<T>,
    /// `[n_max, v_word]`
    pub correct_probs: Vec<T>,
    /// `[n_max, word_hidden]`
    pub hidden: Vec<T>,
    pub attn_mask: Vec<u8>,
}

impl<T: Real> ForwardOutput<T> {
    pub fn detect_row(&self, i: usize) -> &[T] {
        &self.detect_probs[2 * i..2 * i + 2]
    }

    pub fn correct_row(&self, i: usize) -> &[T] {
        &self.correct_probs[i * self.v_word..(i + 1) * self.v_word]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub detect_part: f64,
    pub correct_part: f64,
}

/// Joint loss of one example from its output probabilities.
pub fn loss<T: Real>(output: &ForwardOutput<T>, example: &EncodedExample) -> LossParts {
    let mut detect = 0.0;
    let mut correct = 0.0;
    let mut n = 0usize;
    let mut e = 0usize;
    for i in 0..output.n_max {
        if example.attn_mask[i] == 0 {
            continue;
        }
        n += 1;
        let label = example.detect_labels[i] as usize;
        detect -= output.detect_row(i)[label].to_f64().unwrap_or(f64::NAN).ln();
        if label == 1 {
            e += 1;
            let target = example.correct_labels[i] as usize;
            correct -= output.correct_row(i)[target].to_f64().unwrap_or(f64::NAN).ln();
        }
    }
    let detect_part = detect / (n as f64 + LOSS_EPS);
    let correct_part = if e == 0 { 0.0 } else { correct / (e as f64 + LOSS_EPS) };
    LossParts {
        total: detect_part + correct_part,
        detect_part,
        correct_part,
    }
}

/// Which positions receive correction-head outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CorrectRows {
    All,
    /// Only gold error positions, which are all the loss needs.
    Errors,
}

/// Row bookkeeping for a ragged batch.
struct Layout {
    /// `(example, position)` of each stacked word row.
    words: Vec<(usize, usize)>,
    word_ids: Vec<usize>,
    word_segments: Vec<Segment>,
    char_ids: Vec<usize>,
    char_pos: Vec<usize>,
    char_segments: Vec<Segment>,
}

impl Layout {
    fn new(examples: &[EncodedExample]) -> Layout {
        let mut l = Layout {
            words: Vec::new(),
            word_ids: Vec::new(),
            word_segments: Vec::new(),
            char_ids: Vec::new(),
            char_pos: Vec::new(),
            char_segments: Vec::new(),
        };
        for (b, ex) in examples.iter().enumerate() {
            let start = l.words.len();
            for i in (0..ex.n_max).filter(|i| ex.attn_mask[*i] == 1) {
                l.words.push((b, i));
                l.word_ids.push(ex.word_ids[i] as usize);
                let cstart = l.char_ids.len();
                for (j, c) in ex.char_row(i).iter().enumerate() {
                    if *c != PAD {
                        l.char_ids.push(*c as usize);
                        l.char_pos.push(j);
                    }
                }
                l.char_segments.push(Segment {
                    start: cstart,
                    len: l.char_ids.len() - cstart,
                });
            }
            l.word_segments.push(Segment {
                start,
                len: l.words.len() - start,
            });
        }
        l
    }
}

struct Tape<T> {
    layout: Layout,
    char_norm: LayerNormCache<T>,
    char_drop: Option<Vec<T>>,
    char_caches: Vec<EncoderCache<T>>,
    /// For max pooling: the source row of each pooled element.
    pool_argmax: Vec<usize>,
    word_norm: LayerNormCache<T>,
    concat: Vec<T>,
    proj_norm: LayerNormCache<T>,
    proj_drop: Option<Vec<T>>,
    word_caches: Vec<EncoderCache<T>>,
    hidden: Vec<T>,
    det_f1: Vec<T>,
    det_g: Vec<T>,
    det_probs: Vec<T>,
    det_lse: Vec<T>,
    det_logits: Vec<T>,
    cor_rows: Vec<usize>,
    cor_f1: Vec<T>,
    cor_g: Vec<T>,
    cor_probs: Vec<T>,
    cor_lse: Vec<T>,
    cor_logits: Vec<T>,
}

/// Softmax in place on logits copies; returns probabilities and the
/// per-row log-sum-exp.
fn softmax_with_lse<T: Real>(logits: &[T], cols: usize) -> (Vec<T>, Vec<T>) {
    let mut probs = logits.to_vec();
    let mut lse = Vec::with_capacity(logits.len() / cols.max(1));
    for row in probs.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
        lse.push(max + sum.ln());
    }
    (probs, lse)
}

fn layer_at<T>(layers: &[EncoderLayer<T>], i: usize) -> usize {
    if layers.len() == 1 {
        0
    } else {
        i
    }
}

fn run_forward<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    examples: &[EncodedExample],
    rows: CorrectRows,
    dropout: &mut Dropout<'_>,
) -> Tape<T> {
    let layout = Layout::new(examples);
    let (dw, dc, h, v) = (config.word_embed_dim, config.char_hidden, config.word_hidden, config.v_word);
    let n_words = layout.words.len();
    let n_chars = layout.char_ids.len();

    // character encoder
    let mut x = vec![T::zero(); n_chars * dc];
    for (r, (id, pos)) in layout.char_ids.iter().zip(&layout.char_pos).enumerate() {
        let (e, p) = (params.char_embedding.row(*id), params.char_position.row(*pos));
        for (k, out) in x[r * dc..(r + 1) * dc].iter_mut().enumerate() {
            *out = e[k] + p[k];
        }
    }
    let (mut x, char_norm) = params.char_embed_norm.forward(&x);
    let char_drop = dropout.mask(x.len());
    layers::apply_dropout(&mut x, &char_drop);
    let mut char_caches = Vec::with_capacity(config.char_layers);
    for i in 0..config.char_layers {
        let layer = &params.char_layers[layer_at(&params.char_layers, i)];
        let (y, cache) = layer.forward(x, &layout.char_segments, config.char_heads, dropout);
        char_caches.push(cache);
        x = y;
    }
    let mut pooled = vec![T::zero(); n_words * dc];
    let mut pool_argmax = Vec::new();
    if config.pooling == Pooling::Max {
        pool_argmax = vec![usize::MAX; n_words * dc];
    }
    for (w, seg) in layout.char_segments.iter().enumerate() {
        if seg.len == 0 {
            continue;
        }
        let out = &mut pooled[w * dc..(w + 1) * dc];
        match config.pooling {
            Pooling::Mean => {
                for r in seg.start..seg.start + seg.len {
                    out.iter_mut().zip(&x[r * dc..(r + 1) * dc]).for_each(|(o, v)| *o = *o + *v);
                }
                let inv = T::one() / T::from_f64(seg.len as f64);
                out.iter_mut().for_each(|o| *o = *o * inv);
            }
            Pooling::First => out.copy_from_slice(&x[seg.start * dc..(seg.start + 1) * dc]),
            Pooling::Max => {
                for k in 0..dc {
                    let mut best = seg.start;
                    for r in seg.start + 1..seg.start + seg.len {
                        if x[r * dc + k] > x[best * dc + k] {
                            best = r;
                        }
                    }
                    out[k] = x[best * dc + k];
                    pool_argmax[w * dc + k] = best;
                }
            }
        }
    }

    // word encoder
    let mut e = vec![T::zero(); n_words * dw];
    for (r, (id, (_, pos))) in layout.word_ids.iter().zip(&layout.words).enumerate() {
        let (emb, p) = (params.word_embedding.row(*id), params.word_position.row(*pos));
        for (k, out) in e[r * dw..(r + 1) * dw].iter_mut().enumerate() {
            *out = emb[k] + p[k];
        }
    }
    let (e, word_norm) = params.word_embed_norm.forward(&e);
    let width = dw + dc;
    let mut concat = vec![T::zero(); n_words * width];
    for r in 0..n_words {
        concat[r * width..r * width + dw].copy_from_slice(&e[r * dw..(r + 1) * dw]);
        concat[r * width + dw..(r + 1) * width].copy_from_slice(&pooled[r * dc..(r + 1) * dc]);
    }
    let projected = params.projection.forward(&concat, n_words);
    let (mut hx, proj_norm) = params.projection_norm.forward(&projected);
    let proj_drop = dropout.mask(hx.len());
    layers::apply_dropout(&mut hx, &proj_drop);
    let mut word_caches = Vec::with_capacity(config.word_layers);
    for i in 0..config.word_layers {
        let layer = &params.word_layers[layer_at(&params.word_layers, i)];
        let (y, cache) = layer.forward(hx, &layout.word_segments, config.word_heads, dropout);
        word_caches.push(cache);
        hx = y;
    }
    let hidden = hx;

    // heads
    let det_f1 = params.detect_hidden.forward(&hidden, n_words);
    let det_g: Vec<T> = det_f1.iter().map(|x| gelu(*x)).collect();
    let det_logits = params.detect_out.forward(&det_g, n_words);
    let (det_probs, det_lse) = softmax_with_lse(&det_logits, 2);

    let cor_rows: Vec<usize> = match rows {
        CorrectRows::All => (0..n_words).collect(),
        CorrectRows::Errors => (0..n_words)
            .filter(|r| {
                let (b, i) = layout.words[*r];
                examples[b].detect_labels[i] == 1
            })
            .collect(),
    };
    let mut h_sel = Vec::with_capacity(cor_rows.len() * h);
    for r in &cor_rows {
        h_sel.extend_from_slice(&hidden[r * h..(r + 1) * h]);
    }
    let cor_f1 = params.correct_hidden.forward(&h_sel, cor_rows.len());
    let cor_g: Vec<T> = cor_f1.iter().map(|x| gelu(*x)).collect();
    let mut cor_logits = Vec::with_capacity(cor_rows.len() * v);
    for _ in 0..cor_rows.len() {
        cor_logits.extend_from_slice(&params.correct_bias.data);
    }
    matmul_nt(&cor_g, &params.word_embedding.data, &mut cor_logits, cor_rows.len(), dw, v, true);
    let (cor_probs, cor_lse) = softmax_with_lse(&cor_logits, v);

    Tape {
        layout,
        char_norm,
        char_drop,
        char_caches,
        pool_argmax,
        word_norm,
        concat,
        proj_norm,
        proj_drop,
        word_caches,
        hidden,
        det_f1,
        det_g,
        det_probs,
        det_lse,
        det_logits,
        cor_rows,
        cor_f1,
        cor_g,
        cor_probs,
        cor_lse,
        cor_logits,
    }
}

fn unpack_outputs<T: Real>(tape: &Tape<T>, config: &ModelConfig, examples: &[EncodedExample]) -> Vec<ForwardOutput<T>> {
    let (n, v, h) = (config.n_max, config.v_word, config.word_hidden);
    let mut outs: Vec<ForwardOutput<T>> = examples
        .iter()
        .map(|ex| ForwardOutput {
            n_max: n,
            v_word: v,
            word_hidden: h,
            detect_probs: vec![T::zero(); n * 2],
            correct_probs: vec![T::zero(); n * v],
            hidden: vec![T::zero(); n * h],
            attn_mask: ex.attn_mask.clone(),
        })
        .collect();
    for (r, (b, i)) in tape.layout.words.iter().enumerate() {
        let o = &mut outs[*b];
        o.detect_probs[2 * i..2 * i + 2].copy_from_slice(&tape.det_probs[2 * r..2 * r + 2]);
        o.hidden[i * h..(i + 1) * h].copy_from_slice(&tape.hidden[r * h..(r + 1) * h]);
    }
    for (s, r) in tape.cor_rows.iter().enumerate() {
        let (b, i) = tape.layout.words[*r];
        outs[b].correct_probs[i * v..(i + 1) * v].copy_from_slice(&tape.cor_probs[s * v..(s + 1) * v]);
    }
    outs
}

fn check_inputs(config: &ModelConfig, examples: &[EncodedExample]) -> Result<(), ModelError> {
    config.validate()?;
    examples.iter().try_for_each(|ex| config.check_example(ex))
}

/// Forward pass for one example with dropout disabled.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    example: &EncodedExample,
) -> Result<ForwardOutput<T>, ModelError> {
    Ok(forward_batch(params, config, std::slice::from_ref(example))?.remove(0))
}

/// Forward pass over independent examples with dropout disabled.
pub fn forward_batch<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    examples: &[EncodedExample],
) -> Result<Vec<ForwardOutput<T>>, ModelError> {
    check_inputs(config, examples)?;
    let tape = run_forward(params, config, examples, CorrectRows::All, &mut Dropout::off());
    Ok(unpack_outputs(&tape, config, examples))
}

/// Character encoder output, one pooled `char_hidden` row per position of
/// `example` (zero rows at masked positions or words without characters).
pub fn char_encode<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    example: &EncodedExample,
) -> Result<Vec<T>, ModelError> {
    check_inputs(config, std::slice::from_ref(example))?;
    let tape = run_forward(params, config, std::slice::from_ref(example), CorrectRows::Errors, &mut Dropout::off());
    let dc = config.char_hidden;
    let dw = config.word_embed_dim;
    let width = dw + dc;
    let mut out = vec![T::zero(); config.n_max * dc];
    for (r, (_, i)) in tape.layout.words.iter().enumerate() {
        out[i * dc..(i + 1) * dc].copy_from_slice(&tape.concat[r * width + dw..(r + 1) * width]);
    }
    Ok(out)
}

struct BatchLoss<T> {
    parts: LossParts,
    detect_grad: Vec<T>,
    correct_grad: Vec<T>,
}

/// Mean over examples of the per-example joint loss, with gradients with
/// respect to both heads' logits.
fn batch_loss<T: Real>(tape: &Tape<T>, config: &ModelConfig, examples: &[EncodedExample]) -> BatchLoss<T> {
    let v = config.v_word;
    let batch = examples.len().max(1) as f64;
    let mut n = vec![0usize; examples.len()];
    let mut e = vec![0usize; examples.len()];
    for (b, i) in &tape.layout.words {
        n[*b] += 1;
        e[*b] += examples[*b].detect_labels[*i] as usize;
    }
    let mut detect = vec![0.0f64; examples.len()];
    let mut correct = vec![0.0f64; examples.len()];
    let mut detect_grad = vec![T::zero(); tape.det_probs.len()];
    for (r, (b, i)) in tape.layout.words.iter().enumerate() {
        let label = examples[*b].detect_labels[*i] as usize;
        let nll = tape.det_lse[r] - tape.det_logits[2 * r + label];
        detect[*b] += nll.to_f64().unwrap_or(f64::NAN);
        let scale = T::from_f64(1.0 / ((n[*b] as f64 + LOSS_EPS) * batch));
        for j in 0..2 {
            let y = if j == label { T::one() } else { T::zero() };
            detect_grad[2 * r + j] = (tape.det_probs[2 * r + j] - y) * scale;
        }
    }
    let mut correct_grad = vec![T::zero(); tape.cor_probs.len()];
    for (s, r) in tape.cor_rows.iter().enumerate() {
        let (b, i) = tape.layout.words[*r];
        if examples[b].detect_labels[i] == 0 {
            continue;
        }
        let target = examples[b].correct_labels[i] as usize;
        let nll = tape.cor_lse[s] - tape.cor_logits[s * v + target];
        correct[b] += nll.to_f64().unwrap_or(f64::NAN);
        let scale = T::from_f64(1.0 / ((e[b] as f64 + LOSS_EPS) * batch));
        let row = &mut correct_grad[s * v..(s + 1) * v];
        for (j, g) in row.iter_mut().enumerate() {
            let y = if j == target { T::one() } else { T::zero() };
            *g = (tape.cor_probs[s * v + j] - y) * scale;
        }
    }
    let mut parts = LossParts::default();
    for b in 0..examples.len() {
        parts.detect_part += detect[b] / (n[b] as f64 + LOSS_EPS);
        if e[b] > 0 {
            parts.correct_part += correct[b] / (e[b] as f64 + LOSS_EPS);
        }
    }
    parts.detect_part /= batch;
    parts.correct_part /= batch;
    parts.total = parts.detect_part + parts.correct_part;
    BatchLoss {
        parts,
        detect_grad,
        correct_grad,
    }
}

/// Mean joint loss over a batch, dropout disabled.
pub fn batch_loss_value<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    examples: &[EncodedExample],
) -> Result<LossParts, ModelError> {
    check_inputs(config, examples)?;
    let tape = run_forward(params, config, examples, CorrectRows::Errors, &mut Dropout::off());
    Ok(batch_loss(&tape, config, examples).parts)
}

/// Loss and exact gradients for every parameter. The batch loss is the mean
/// of the per-example losses. The word embedding gradient sums the lookup
/// and correction-output contributions.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    examples: &[EncodedExample],
    dropout: &mut Dropout<'_>,
) -> Result<(LossParts, ModelParams<T>), ModelError> {
    check_inputs(config, examples)?;
    let tape = run_forward(params, config, examples, CorrectRows::Errors, dropout);
    let loss = batch_loss(&tape, config, examples);
    let mut grad = params.zeros_like();
    let (dw, dc, h, v) = (config.word_embed_dim, config.char_hidden, config.word_hidden, config.v_word);
    let layout = &tape.layout;
    let n_words = layout.words.len();
    let s_rows = tape.cor_rows.len();

    // correction head
    for row in loss.correct_grad.chunks(v) {
        grad.correct_bias.data.iter_mut().zip(row).for_each(|(g, d)| *g = *g + *d);
    }
    let mut d_cor_g = vec![T::zero(); s_rows * dw];
    matmul(&loss.correct_grad, &params.word_embedding.data, &mut d_cor_g, s_rows, v, dw, false);
    matmul_tn(&loss.correct_grad, &tape.cor_g, &mut grad.word_embedding.data, s_rows, v, dw, true);
    d_cor_g.iter_mut().zip(&tape.cor_f1).for_each(|(d, f)| *d = *d * gelu_grad(*f));
    let mut h_sel = Vec::with_capacity(s_rows * h);
    for r in &tape.cor_rows {
        h_sel.extend_from_slice(&tape.hidden[r * h..(r + 1) * h]);
    }
    let dh_sel = params.correct_hidden.backward(&mut grad.correct_hidden, &h_sel, &d_cor_g, s_rows);

    // detection head
    let mut d_det_g = params.detect_out.backward(&mut grad.detect_out, &tape.det_g, &loss.detect_grad, n_words);
    d_det_g.iter_mut().zip(&tape.det_f1).for_each(|(d, f)| *d = *d * gelu_grad(*f));
    let mut dh = params.detect_hidden.backward(&mut grad.detect_hidden, &tape.hidden, &d_det_g, n_words);
    for (s, r) in tape.cor_rows.iter().enumerate() {
        dh[r * h..(r + 1) * h]
            .iter_mut()
            .zip(&dh_sel[s * h..(s + 1) * h])
            .for_each(|(a, b)| *a = *a + *b);
    }

    // word encoder
    for i in (0..config.word_layers).rev() {
        let at = layer_at(&params.word_layers, i);
        dh = params.word_layers[at].backward(
            &mut grad.word_layers[at],
            &tape.word_caches[i],
            &dh,
            &layout.word_segments,
            config.word_heads,
        );
    }
    layers::apply_dropout(&mut dh, &tape.proj_drop);
    let dproj = params.projection_norm.backward(&mut grad.projection_norm, &tape.proj_norm, &dh);
    let dconcat = params.projection.backward(&mut grad.projection, &tape.concat, &dproj, n_words);
    let width = dw + dc;
    let mut de = vec![T::zero(); n_words * dw];
    let mut dpooled = vec![T::zero(); n_words * dc];
    for r in 0..n_words {
        de[r * dw..(r + 1) * dw].copy_from_slice(&dconcat[r * width..r * width + dw]);
        dpooled[r * dc..(r + 1) * dc].copy_from_slice(&dconcat[r * width + dw..(r + 1) * width]);
    }
    let de = params.word_embed_norm.backward(&mut grad.word_embed_norm, &tape.word_norm, &de);
    for (r, (id, (_, pos))) in layout.word_ids.iter().zip(&layout.words).enumerate() {
        let d = &de[r * dw..(r + 1) * dw];
        grad.word_embedding.row_mut(*id).iter_mut().zip(d).for_each(|(g, x)| *g = *g + *x);
        grad.word_position.row_mut(*pos).iter_mut().zip(d).for_each(|(g, x)| *g = *g + *x);
    }

    // character encoder
    let n_chars = layout.char_ids.len();
    let mut dx = vec![T::zero(); n_chars * dc];
    for (w, seg) in layout.char_segments.iter().enumerate() {
        if seg.len == 0 {
            continue;
        }
        let dp = &dpooled[w * dc..(w + 1) * dc];
        match config.pooling {
            Pooling::Mean => {
                let inv = T::one() / T::from_f64(seg.len as f64);
                for r in seg.start..seg.start + seg.len {
                    dx[r * dc..(r + 1) * dc].iter_mut().zip(dp).for_each(|(d, g)| *d = *g * inv);
                }
            }
            Pooling::First => dx[seg.start * dc..(seg.start + 1) * dc].copy_from_slice(dp),
            Pooling::Max => {
                for k in 0..dc {
                    let r = tape.pool_argmax[w * dc + k];
                    dx[r * dc + k] = dx[r * dc + k] + dp[k];
                }
            }
        }
    }
    for i in (0..config.char_layers).rev() {
        let at = layer_at(&params.char_layers, i);
        dx = params.char_layers[at].backward(
            &mut grad.char_layers[at],
            &tape.char_caches[i],
            &dx,
            &layout.char_segments,
            config.char_heads,
        );
    }
    layers::apply_dropout(&mut dx, &tape.char_drop);
    let dx = params.char_embed_norm.backward(&mut grad.char_embed_norm, &tape.char_norm, &dx);
    for (r, (id, pos)) in layout.char_ids.iter().zip(&layout.char_pos).enumerate() {
        let d = &dx[r * dc..(r + 1) * dc];
        grad.char_embedding.row_mut(*id).iter_mut().zip(d).for_each(|(g, x)| *g = *g + *x);
        grad.char_position.row_mut(*pos).iter_mut().zip(d).for_each(|(g, x)| *g = *g + *x);
    }
    Ok((loss.parts, grad))
}

#[cfg(test)]
mod tests;
