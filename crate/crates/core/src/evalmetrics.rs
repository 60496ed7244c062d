//! Detector precision/recall/F1 and corrector accuracy.
//!
//! Positive = "token is an error". Correction accuracy is measured two ways:
//! exact corrections over all corrections attempted on true errors
//! (`acc_in_detected`), and over those attempts plus false detections
//! (`acc_in_total`). Missed errors appear in neither denominator.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::errorgen::{split_sentences, CorruptedSentence};
use crate::model::{Corrector, TokenPrediction};
use crate::textdata::WikiTestDocument;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold has {gold} tokens but the prediction has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("document {id}: {message}")]
    InvalidDocument { id: String, message: String },
    #[error("document {id}: no predictions supplied")]
    MissingPrediction { id: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub n_exact_correction: u64,
    pub n_wrong_correction: u64,
    pub n_wrong_detection: u64,
}

impl Add for EvalCounts {
    type Output = EvalCounts;

    fn add(self, o: EvalCounts) -> EvalCounts {
        EvalCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            n_exact_correction: self.n_exact_correction + o.n_exact_correction,
            n_wrong_correction: self.n_wrong_correction + o.n_wrong_correction,
            n_wrong_detection: self.n_wrong_detection + o.n_wrong_detection,
        }
    }
}

impl AddAssign for EvalCounts {
    fn add_assign(&mut self, o: EvalCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for EvalCounts {
    fn sum<I: Iterator<Item = EvalCounts>>(iter: I) -> EvalCounts {
        iter.fold(EvalCounts::default(), Add::add)
    }
}

impl EvalCounts {
    /// `exact + wrong_correction ≤ tp` and `wrong_detection == fp`.
    pub fn is_consistent(&self) -> bool {
        self.n_exact_correction + self.n_wrong_correction <= self.tp && self.n_wrong_detection == self.fp
    }
}

/// Gold annotation of one token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gold {
    pub mask: Vec<u8>,
    /// Acceptable corrections per position (the clean token, or every
    /// annotator suggestion); only consulted where `mask == 1`. An empty
    /// list excludes that error from the correction counts.
    pub targets: Vec<Vec<String>>,
}

impl Gold {
    pub fn from_sentence(sent: &CorruptedSentence) -> Gold {
        Gold {
            mask: sent.mask.clone(),
            targets: sent.clean.iter().map(|c| vec![c.clone()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Model output for one token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub flags: Vec<bool>,
    /// Best replacement for flagged positions.
    pub suggestions: Vec<Option<String>>,
}

impl Prediction {
    pub fn from_tokens(preds: &[TokenPrediction]) -> Prediction {
        Prediction {
            flags: preds.iter().map(|p| p.is_error).collect(),
            suggestions: preds
                .iter()
                .map(|p| p.suggestions.first().map(|s| s.word.clone()))
                .collect(),
        }
    }
}

/// Counts for one aligned (gold, prediction) pair.
pub fn accumulate(gold: &Gold, pred: &Prediction) -> Result<EvalCounts, EvalError> {
    if gold.mask.len() != pred.flags.len()
        || gold.targets.len() != gold.mask.len()
        || pred.suggestions.len() != pred.flags.len()
    {
        return Err(EvalError::LengthMismatch {
            gold: gold.mask.len(),
            pred: pred.flags.len(),
        });
    }
    let mut c = EvalCounts::default();
    for i in 0..gold.mask.len() {
        match (gold.mask[i] == 1, pred.flags[i]) {
            (true, true) => {
                c.tp += 1;
                // no reachable target: a detection, not a correction attempt
                if gold.targets[i].is_empty() {
                    continue;
                }
                let hit = pred.suggestions[i]
                    .as_ref()
                    .is_some_and(|s| gold.targets[i].iter().any(|t| t == s));
                if hit {
                    c.n_exact_correction += 1;
                } else {
                    c.n_wrong_correction += 1;
                }
            }
            (false, true) => {
                c.fp += 1;
                c.n_wrong_detection += 1;
            }
            (true, false) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub acc_in_detected: f64,
    pub acc_in_total: f64,
    pub counts: EvalCounts,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn finalize(c: EvalCounts) -> EvalReport {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let attempted = c.n_exact_correction + c.n_wrong_correction;
    EvalReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        acc_in_detected: ratio(c.n_exact_correction, attempted),
        acc_in_total: ratio(c.n_exact_correction, attempted + c.n_wrong_detection),
        counts: c,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Percentages laid out as Precision | Recall | F1 | in total | in % detected.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>10} {:>10} {:>10} {:>14}", "Precision", "Recall", "F1", "in total", "in % detected")?;
        writeln!(
            f,
            "{:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>14.2}",
            self.precision * 100.0,
            self.recall * 100.0,
            self.f1 * 100.0,
            self.acc_in_total * 100.0,
            self.acc_in_detected * 100.0
        )?;
        let c = &self.counts;
        write!(
            f,
            "tp {} fp {} fn {} exact {} wrong_correction {} wrong_detection {}",
            c.tp, c.fp, c.fn_, c.n_exact_correction, c.n_wrong_correction, c.n_wrong_detection
        )
    }
}

/// Anything that can judge batches of token sequences.
pub trait TokenPredictor {
    fn predict_tokens(&self, sentences: &[Vec<String>]) -> Vec<Vec<TokenPrediction>>;

    /// Whether `word` can appear as a suggestion at all.
    fn can_suggest(&self, _word: &str) -> bool {
        true
    }
}

impl TokenPredictor for Corrector {
    fn predict_tokens(&self, sentences: &[Vec<String>]) -> Vec<Vec<TokenPrediction>> {
        self.predict_sentences(sentences, 1)
    }

    fn can_suggest(&self, word: &str) -> bool {
        self.word_vocab.contains(word)
    }
}

impl<F: Fn(&[String]) -> Vec<TokenPrediction>> TokenPredictor for F {
    fn predict_tokens(&self, sentences: &[Vec<String>]) -> Vec<Vec<TokenPrediction>> {
        sentences.iter().map(|s| self(s)).collect()
    }
}

/// Gold annotation of a test document over its full tokenization.
pub fn document_gold(doc: &WikiTestDocument) -> Result<(Vec<String>, Gold), EvalError> {
    doc.validate().map_err(|message| EvalError::InvalidDocument {
        id: doc.id.clone(),
        message,
    })?;
    let tokens = doc.tokens();
    let mut gold = Gold {
        mask: vec![0; tokens.len()],
        targets: tokens.iter().map(|t| vec![t.clone()]).collect(),
    };
    for m in &doc.mistakes {
        gold.mask[m.token_index] = 1;
        gold.targets[m.token_index] = m.suggestions.clone();
    }
    Ok((tokens, gold))
}

/// Tokenizes each document, splits it into sentences, runs the predictor
/// and scores the result.
pub fn evaluate_testset(docs: &[WikiTestDocument], predictor: &dyn TokenPredictor) -> Result<EvalReport, EvalError> {
    let mut sentences = Vec::new();
    let mut golds = Vec::new();
    for doc in docs {
        let (tokens, gold) = document_gold(doc)?;
        let mut start = 0;
        for sent in split_sentences(tokens) {
            let end = start + sent.len();
            golds.push(Gold {
                mask: gold.mask[start..end].to_vec(),
                targets: gold.targets[start..end].to_vec(),
            });
            sentences.push(sent);
            start = end;
        }
    }
    score(&sentences, &golds, predictor)
}

/// Scores a predictor on generated (noisy, clean, mask) triples.
pub fn evaluate_corpus(sentences: &[CorruptedSentence], predictor: &dyn TokenPredictor) -> Result<EvalReport, EvalError> {
    let noisy: Vec<Vec<String>> = sentences.iter().map(|s| s.noisy.clone()).collect();
    let golds: Vec<Gold> = sentences.iter().map(Gold::from_sentence).collect();
    score(&noisy, &golds, predictor)
}

fn score(sentences: &[Vec<String>], golds: &[Gold], predictor: &dyn TokenPredictor) -> Result<EvalReport, EvalError> {
    let preds = predictor.predict_tokens(sentences);
    let mut counts = EvalCounts::default();
    for (gold, pred) in golds.iter().zip(&preds) {
        let mut gold = gold.clone();
        for (m, targets) in gold.mask.iter().zip(gold.targets.iter_mut()) {
            if *m == 1 {
                targets.retain(|t| predictor.can_suggest(t));
            }
        }
        counts += accumulate(&gold, &Prediction::from_tokens(pred))?;
    }
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            gold: golds.len(),
            pred: preds.len(),
        });
    }
    Ok(finalize(counts))
}

/// Stored judgments for one document, aligned with its tokenization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentPredictions {
    pub id: String,
    pub tokens: Vec<TokenPrediction>,
}

/// Scores precomputed predictions, matched to documents by id.
pub fn evaluate_predictions(docs: &[WikiTestDocument], preds: &[DocumentPredictions]) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &DocumentPredictions> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut counts = EvalCounts::default();
    for doc in docs {
        let (_, gold) = document_gold(doc)?;
        let pred = by_id.get(doc.id.as_str()).ok_or_else(|| EvalError::MissingPrediction { id: doc.id.clone() })?;
        counts += accumulate(&gold, &Prediction::from_tokens(&pred.tokens))?;
    }
    Ok(finalize(counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Suggestion;
    use crate::textdata::WikiMistake;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn pred(flags: &[bool], sugg: &[Option<&str>]) -> Prediction {
        Prediction {
            flags: flags.to_vec(),
            suggestions: sugg.iter().map(|s| s.map(String::from)).collect(),
        }
    }

    #[test]
    fn accumulate_examples() {
        let sent = CorruptedSentence::new(toks(&["hà", "lội", "đẹp", "qúa"]), toks(&["hà", "nội", "đẹp", "quá"]));
        let gold = Gold::from_sentence(&sent);
        let perfect = pred(&[false, true, false, true], &[None, Some("nội"), None, Some("quá")]);
        let c = accumulate(&gold, &perfect).unwrap();
        assert_eq!((c.tp, c.n_exact_correction, c.fp, c.fn_, c.n_wrong_correction), (2, 2, 0, 0, 0));

        let false_alarm = pred(&[true, false, false, false], &[Some("hạ"), None, None, None]);
        let c = accumulate(&gold, &false_alarm).unwrap();
        assert_eq!((c.fp, c.n_wrong_detection, c.fn_), (1, 1, 2));

        let two = CorruptedSentence::new(toks(&["hà", "lội"]), toks(&["hà", "nội"]));
        let c = accumulate(&Gold::from_sentence(&two), &pred(&[false, true], &[None, Some("nội")])).unwrap();
        assert_eq!(c.n_exact_correction, 1);

        assert_eq!(
            accumulate(&gold, &pred(&[true], &[None])),
            Err(EvalError::LengthMismatch { gold: 4, pred: 1 })
        );
    }

    #[test]
    fn unreachable_targets_only_count_for_detection() {
        let sent = CorruptedSentence::new(toks(&["lội", "qúa"]), toks(&["nội", "quá"]));
        let known = |w: &str| w != "quá";
        let model = |s: &[String]| {
            s.iter()
                .map(|t| TokenPrediction {
                    token: t.clone(),
                    is_error: true,
                    p_error: 0.9,
                    suggestions: vec![Suggestion {
                        word: "nội".into(),
                        prob: 0.5,
                    }],
                })
                .collect::<Vec<_>>()
        };
        struct Limited<F, G>(F, G);
        impl<F: Fn(&[String]) -> Vec<TokenPrediction>, G: Fn(&str) -> bool> TokenPredictor for Limited<F, G> {
            fn predict_tokens(&self, sentences: &[Vec<String>]) -> Vec<Vec<TokenPrediction>> {
                sentences.iter().map(|s| (self.0)(s)).collect()
            }
            fn can_suggest(&self, word: &str) -> bool {
                (self.1)(word)
            }
        }
        let r = evaluate_corpus(std::slice::from_ref(&sent), &Limited(model, known)).unwrap();
        assert_eq!((r.counts.tp, r.counts.n_exact_correction, r.counts.n_wrong_correction), (2, 1, 0));
        let r = evaluate_corpus(&[sent], &model).unwrap();
        assert_eq!((r.counts.tp, r.counts.n_exact_correction, r.counts.n_wrong_correction), (2, 1, 1));
    }

    #[test]
    fn finalize_examples() {
        let r = finalize(EvalCounts {
            tp: 2,
            fp: 1,
            fn_: 1,
            n_exact_correction: 1,
            n_wrong_correction: 1,
            n_wrong_detection: 1,
        });
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.acc_in_detected, 0.5);
        assert!((r.acc_in_total - 1.0 / 3.0).abs() < 1e-12);
        let zero = finalize(EvalCounts::default());
        assert_eq!((zero.precision, zero.recall, zero.f1, zero.acc_in_detected, zero.acc_in_total), (0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn reference_row_f1_is_consistent() {
        let f1 = f1_score(0.6696, 0.7092);
        assert!((f1 - 0.6888).abs() < 0.0005, "{f1}");
    }

    fn doc(text: &str, mistakes: Vec<WikiMistake>) -> WikiTestDocument {
        WikiTestDocument {
            id: "1".into(),
            text: text.into(),
            current_revision_id: "2".into(),
            previous_revision_id: "1".into(),
            page_id: "3".into(),
            mistakes,
        }
    }

    fn oracle(fixes: HashMap<String, String>) -> impl Fn(&[String]) -> Vec<TokenPrediction> {
        move |tokens: &[String]| {
            tokens
                .iter()
                .map(|t| match fixes.get(t) {
                    Some(fix) => TokenPrediction {
                        token: t.clone(),
                        is_error: true,
                        p_error: 0.9,
                        suggestions: vec![Suggestion {
                            word: fix.clone(),
                            prob: 0.9,
                        }],
                    },
                    None => TokenPrediction {
                        token: t.clone(),
                        is_error: false,
                        p_error: 0.1,
                        suggestions: vec![],
                    },
                })
                .collect()
        }
    }

    #[test]
    fn testset_with_perfect_model() {
        let d = doc(
            "Một chuếc xe. Nó chạy nhanh.",
            vec![WikiMistake {
                token_index: 1,
                wrong: "chuếc".into(),
                suggestions: vec!["chiếc".into()],
            }],
        );
        let model = oracle(HashMap::from([("chuếc".to_string(), "chiếc".to_string())]));
        let r = evaluate_testset(std::slice::from_ref(&d), &model).unwrap();
        assert_eq!((r.recall, r.acc_in_total, r.precision), (1.0, 1.0, 1.0));
        assert_eq!(evaluate_testset(std::slice::from_ref(&d), &model).unwrap(), r);
        assert_eq!(evaluate_testset(&[], &model).unwrap(), finalize(EvalCounts::default()));

        // any listed suggestion counts
        let mut multi = d.clone();
        multi.mistakes[0].suggestions = vec!["chiếc".into(), "chuyếc".into()];
        let alt = oracle(HashMap::from([("chuếc".to_string(), "chuyếc".to_string())]));
        assert_eq!(evaluate_testset(&[multi], &alt).unwrap().acc_in_detected, 1.0);

        let mut bad = d;
        bad.mistakes[0].token_index = 40;
        assert!(matches!(evaluate_testset(&[bad], &model), Err(EvalError::InvalidDocument { .. })));
    }

    #[test]
    fn stored_predictions_are_scored() {
        let d = doc(
            "toi di hoc",
            vec![WikiMistake {
                token_index: 0,
                wrong: "toi".into(),
                suggestions: vec!["tôi".into()],
            }],
        );
        let model = oracle(HashMap::from([("toi".to_string(), "tôi".to_string())]));
        let preds = vec![DocumentPredictions {
            id: "1".into(),
            tokens: model(&d.tokens()),
        }];
        let r = evaluate_predictions(std::slice::from_ref(&d), &preds).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.acc_in_total, r.acc_in_detected), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert!(r.to_string().contains("100.00"));
        assert!(matches!(evaluate_predictions(&[d], &[]), Err(EvalError::MissingPrediction { .. })));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["counts"]["fn"], 0);
    }

    fn triple() -> impl Strategy<Value = (u8, bool, bool)> {
        (0u8..2, any::<bool>(), any::<bool>())
    }

    proptest! {
        #[test]
        fn counts_are_additive_and_bounded(a in proptest::collection::vec(triple(), 0..30), b in proptest::collection::vec(triple(), 0..30)) {
            let build = |v: &[(u8, bool, bool)]| {
                let gold = Gold { mask: v.iter().map(|t| t.0).collect(), targets: v.iter().map(|_| vec!["x".to_string()]).collect() };
                let pred = Prediction { flags: v.iter().map(|t| t.1).collect(), suggestions: v.iter().map(|t| Some(if t.2 { "x" } else { "y" }.to_string())).collect() };
                (gold, pred)
            };
            let (ga, pa) = build(&a);
            let (gb, pb) = build(&b);
            let joint: Vec<_> = a.iter().chain(&b).copied().collect();
            let (gj, pj) = build(&joint);
            let ca = accumulate(&ga, &pa).unwrap();
            let cb = accumulate(&gb, &pb).unwrap();
            prop_assert_eq!(ca + cb, accumulate(&gj, &pj).unwrap());
            prop_assert!(ca.is_consistent());
            let r = finalize(ca + cb);
            prop_assert!(r.acc_in_total <= r.acc_in_detected);
            for m in [r.precision, r.recall, r.f1, r.acc_in_detected, r.acc_in_total] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }
}
