//! Inference: a trained model bundled with its vocabularies.

use serde::{Deserialize, Serialize};

use super::checkpoint::params_digest;
use super::{forward_batch, ModelConfig, ModelError, ModelParams};
use crate::syllable::CasePattern;
use crate::textdata::{encode_tokens, tokenize, Vocab};

/// Sentences per forward pass during prediction.
const PREDICT_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub word: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenPrediction {
    pub token: String,
    pub is_error: bool,
    pub p_error: f64,
    /// Most probable replacements, best first; empty unless `is_error`.
    pub suggestions: Vec<Suggestion>,
}

/// Frozen parameters plus everything needed to go from text to judgments.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrector {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub word_vocab: Vocab,
    pub char_vocab: Vocab,
    pub model_version: String,
    pub step: u64,
}

impl Corrector {
    pub fn new(
        config: ModelConfig,
        params: ModelParams<f32>,
        word_vocab: Vocab,
        char_vocab: Vocab,
        step: u64,
    ) -> Result<Corrector, ModelError> {
        config.validate()?;
        params.check_shapes(&config)?;
        if word_vocab.len() != config.v_word || char_vocab.len() != config.v_char {
            return Err(ModelError::Config(format!(
                "vocab sizes {}/{} disagree with v_word/v_char {}/{}",
                word_vocab.len(),
                char_vocab.len(),
                config.v_word,
                config.v_char
            )));
        }
        let model_version = format!("vispell-{step}-{}", params_digest(&params));
        Ok(Corrector {
            config,
            params,
            word_vocab,
            char_vocab,
            model_version,
            step,
        })
    }

    /// Judges the first `n_max` tokens of `text`.
    pub fn predict(&self, text: &str, top_k: usize) -> Vec<TokenPrediction> {
        let mut tokens = tokenize(text);
        tokens.truncate(self.config.n_max);
        self.predict_sentences(&[tokens], top_k).remove(0)
    }

    /// Judges each token sequence; sequences longer than `n_max` are
    /// processed in consecutive windows.
    pub fn predict_sentences(&self, sentences: &[Vec<String>], top_k: usize) -> Vec<Vec<TokenPrediction>> {
        let n_max = self.config.n_max;
        let mut windows: Vec<(usize, &[String])> = Vec::new();
        for (s, tokens) in sentences.iter().enumerate() {
            for chunk in tokens.chunks(n_max) {
                windows.push((s, chunk));
            }
        }
        let mut out: Vec<Vec<TokenPrediction>> = vec![Vec::new(); sentences.len()];
        for group in windows.chunks(PREDICT_BATCH) {
            let examples: Vec<_> = group
                .iter()
                .map(|(_, toks)| encode_tokens(toks, &self.word_vocab, &self.char_vocab, n_max, self.config.l_max))
                .collect();
            let outputs = forward_batch(&self.params, &self.config, &examples)
                .expect("examples are encoded with the model's own config");
            for ((s, toks), output) in group.iter().zip(outputs) {
                for (i, tok) in toks.iter().enumerate() {
                    let p_error = output.detect_row(i)[1] as f64;
                    let is_error = output.detect_row(i)[1] > output.detect_row(i)[0];
                    let suggestions = if is_error && top_k > 0 {
                        self.suggestions(tok, output.correct_row(i), top_k)
                    } else {
                        Vec::new()
                    };
                    out[*s].push(TokenPrediction {
                        token: tok.clone(),
                        is_error,
                        p_error,
                        suggestions,
                    });
                }
            }
        }
        out
    }

    fn suggestions(&self, token: &str, probs: &[f32], top_k: usize) -> Vec<Suggestion> {
        let mut ids: Vec<usize> = (0..probs.len()).filter(|i| !Vocab::is_special(*i as u32)).collect();
        let k = top_k.min(ids.len());
        if k == 0 {
            return Vec::new();
        }
        let by_prob = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
        ids.select_nth_unstable_by(k - 1, by_prob);
        ids.truncate(k);
        ids.sort_by(by_prob);
        let case = CasePattern::detect(token);
        ids.into_iter()
            .map(|id| Suggestion {
                word: case.apply(self.word_vocab.token(id as u32).unwrap_or_default()),
                prob: probs[id] as f64,
            })
            .collect()
    }
}
